#pragma once

#include <string>
#include <string_view>

namespace mfc {

/// 17 significant digits; strtod of the result reproduces the value exactly.
std::string format_real(double v);

/// Parses a whole token as a double; throws std::invalid_argument otherwise.
double parse_real(std::string_view token);

}  // namespace mfc
