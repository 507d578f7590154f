#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "canalnav/sim.hpp"

namespace canal
{

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;

/// Bad command line or unusable input files; maps to exit code 1.
class UsageError : public std::runtime_error
{
public:
    using std::runtime_error::runtime_error;
};

/// Schema violation in a sysid / trials / detect config file.
class ConfigError : public std::runtime_error
{
public:
    using std::runtime_error::runtime_error;
};

struct RunManifest
{
    std::string command;
    std::vector<std::string> config_paths;
    std::vector<std::string> inputs;
    std::string out_dir;
    std::uint64_t seed = 0;
    std::string version;
    std::vector<std::pair<std::string, std::string>> options; // effective overrides, in order
};

struct ComparisonRow
{
    ControllerKind controller = ControllerKind::nmpc;
    std::optional<Metrics> metrics; // empty when the run threw
    std::string error;
    double wall_time = 0.0; // s
};

using ScenarioRunner = std::function<SimResult(const Scenario &)>;

/// Runs nmpc, baseline1 and baseline2 concurrently on copies of the scenario.
/// A run that throws yields a row with the error; the others are unaffected.
/// With a non-empty out_dir each run's files go to out_dir/<controller>/.
std::vector<ComparisonRow> run_comparison(const Scenario &scenario, const std::string &out_dir = {},
                                          const ScenarioRunner &runner = run_closed_loop);

// Deterministic table (no timing) and the separate timing table.
void write_comparison_csv(std::ostream &os, const std::vector<ComparisonRow> &rows);
void write_comparison_timing_csv(std::ostream &os, const std::vector<ComparisonRow> &rows);

std::string version_string();
std::string manifest_to_json(const RunManifest &m);

/**
 * Entry point of the `canalnav` tool. Subcommands: trials, sysid, simulate,
 * compare, detect. Human-readable progress goes to `out` / `err`; results go
 * to files under --out. Returns 0 on success, 1 on usage errors, 2 on runtime
 * failures.
 */
int run_cli(int argc, const char *const *argv, std::ostream &out, std::ostream &err);
int run_cli(const std::vector<std::string> &args, std::ostream &out, std::ostream &err);

} // namespace canal
