#include "mfc/io.hpp"

#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <stdexcept>

namespace mfc {

std::string format_real(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

double parse_real(std::string_view token) {
    const std::string s(token);
    if (s.empty()) throw std::invalid_argument("expected a number, got an empty field");
    char* end = nullptr;
    errno = 0;
    const double v = std::strtod(s.c_str(), &end);
    // Underflow to a subnormal is fine; only overflow is rejected.
    if (end != s.c_str() + s.size() || (errno == ERANGE && std::isinf(v)))
        throw std::invalid_argument("not a number: '" + s + "'");
    return v;
}

}  // namespace mfc
