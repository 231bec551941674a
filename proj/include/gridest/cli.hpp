#pragma once

#include <cstdint>
#include <string>

namespace gridest::cli {

/// Exit codes shared by every subcommand.
enum ExitCode : int {
    EXIT_OK = 0,
    EXIT_INPUT = 1,          ///< parse/validation errors
    EXIT_NONCONVERGED = 2,   ///< solver failed to converge
    EXIT_UNOBSERVABLE = 3,   ///< rank-deficient problem
    EXIT_BAD_DATA = 4,       ///< bad data not resolved
};

struct RunConfig {
    std::string network_path;
    std::string measurements_path;
    std::string config_path;
    std::string profiles_path;
    std::string holdout_path;
    std::string truth_path;
    std::string out_dir = ".";
    std::uint64_t seed = 42;
    bool verbose = false;
    int k_override = -1;          ///< place-sensors round count
    double confidence_override = -1.0;
};

int cmd_pf(const RunConfig& config);
int cmd_simulate(const RunConfig& config);
int cmd_se(const RunConfig& config);
int cmd_pe(const RunConfig& config);
int cmd_detect_bad(const RunConfig& config);
int cmd_observability(const RunConfig& config);
int cmd_place_sensors(const RunConfig& config);

} // namespace gridest::cli
