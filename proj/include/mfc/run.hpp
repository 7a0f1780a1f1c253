#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace mfc {

/// Schema violation in a run configuration. line() is 0 when the problem is
/// not tied to one line (e.g. a missing required key).
class ConfigError : public std::runtime_error {
  public:
    ConfigError(std::string source, std::size_t line, std::string field, const std::string& message);
    std::size_t line() const noexcept { return line_; }
    const std::string& field() const noexcept { return field_; }

  private:
    std::size_t line_;
    std::string field_;
};

/// Resolved flat key/value configuration. Every documented key is present
/// (defaults filled in), so the manifest echo is complete.
class RunConfig {
  public:
    static RunConfig parse(std::istream& is, const std::string& source = "<config>");
    static RunConfig load(const std::filesystem::path& path);
    /// Defaults only; output_dir still has to be set.
    static RunConfig defaults();

    void set(const std::string& key, const std::string& value);
    const std::string& get(const std::string& key) const;
    const std::map<std::string, std::string>& entries() const noexcept { return values_; }

    double real(const std::string& key) const;
    std::size_t count(const std::string& key) const;
    std::uint64_t seed() const;
    std::vector<std::size_t> count_list(const std::string& key) const;

  private:
    void check(const std::string& key, std::size_t line) const;
    std::string source_ = "<config>";
    std::map<std::string, std::string> values_;
    std::map<std::string, std::size_t> lines_;
};

/// Writes the documented schema (key, default, description) for --help.
void describe_schema(std::ostream& os);

struct RunOutcome {
    int exit_code = 0;
    std::vector<std::pair<std::string, bool>> checks;
    std::optional<std::string> failure;
};

inline const std::vector<std::string>& experiment_kinds() {
    static const std::vector<std::string> kinds{"simulate", "cost",         "adjoint", "check-smp",
                                                "optimize", "chatter-gap", "validate"};
    return kinds;
}

/// Runs one experiment and writes manifest.txt, summary.txt and the
/// experiment's CSV files into output_dir. Exit code 0 iff the run finished
/// and every check it performed passed.
RunOutcome run_experiment(const RunConfig& config);

/// Entry point of the mfc_run tool.
int run_main(int argc, char** argv);

}  // namespace mfc
