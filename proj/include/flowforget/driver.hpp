#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "flowforget/experiments.hpp"

namespace flowforget {

/// Parsed command line, independent of any argv-parsing library so the whole
/// dispatch path is callable (and byte-reproducibility testable) in-process.
struct CliOptions {
    std::string subcommand;  // unlearn|sweep|ablation|multi-id|noise|gradcheck|theorems|report
    std::optional<std::string> config_path;
    std::vector<std::string> overrides;  // raw KEY=VALUE strings
    std::optional<std::uint64_t> seed;   // replaces the config's seed list
    std::string out_dir = "out";
    std::optional<std::size_t> jobs;
};

/// The experiment RunConfig plus the keys that only select what the CLI runs.
struct DriverConfig {
    RunConfig run;
    std::string sweep = "step_size";  // step_size|fixed_horizon|hidden_dim|solver|lambda
    std::vector<std::size_t> multi_ids = {0, 1, 2};
};

/// Flat key=value document: one pair per line, '#' comments, blank lines
/// ignored. Throws ConfigError naming the offending line.
std::map<std::string, std::string> parse_key_values(const std::string& text);
std::map<std::string, std::string> load_config_file(const std::string& path);

/// defaults <- file <- overrides, validated. Unknown keys, unparsable or
/// out-of-range values throw ConfigError naming the key.
DriverConfig resolve_config(const std::map<std::string, std::string>& file_values,
                            const std::vector<std::string>& overrides);

/// The resolved config rendered back as a sorted key=value document (what
/// gets echoed to <out_dir>/resolved.cfg). Round-trips through
/// parse_key_values + resolve_config.
std::string render_config(const DriverConfig& cfg);

/// Shortest round-trippable decimal rendering of a double (%.17g trimmed),
/// used for every CSV cell so reruns are byte-identical.
std::string format_double(double x);

/// One assertion of a check suite: a measured value and whether it clears
/// its bound (informational rows always pass).
struct CheckRow {
    std::string name;
    double value = 0.0;
    bool pass = true;
};

struct CheckSuite {
    std::string name;
    std::vector<CheckRow> rows;
    bool all_pass = true;
};

/// Gradient agreement table: unrolled vs central finite differences over 50
/// random instances (dim <= 8, N <= 8), then adjoint (rk4 backward) vs
/// unrolled (euler) on matched grids as N doubles 4 -> 64.
CheckSuite run_gradcheck(std::uint64_t seed);

/// Theorem property table on the given world: identity-at-init (bitwise,
/// three solvers), Gronwall forward bound + Jacobian convergence order on
/// random fields, and non-crossing margins for the zero-initialized and the
/// trained stack (trains one run at cfg.seeds.front()).
CheckSuite run_theorem_checks(const ToyWorld& world, const RunConfig& cfg);

/// Runs the selected subcommand, writing all artifacts under opts.out_dir.
/// Returns 0 on success, 1 on a failed assertion suite (gradcheck, theorems,
/// experiment orderings), 2 on configuration errors.
int dispatch(const CliOptions& opts);

}  // namespace flowforget
