#include <CLI11.hpp>

#include "gridest/cli.hpp"

int main(int argc, char** argv) {
    CLI::App app{"gridest - multi-period state and parameter estimation for distribution feeders"};
    app.require_subcommand(1);

    gridest::cli::RunConfig config;
    app.add_option("--seed", config.seed, "master seed for all randomized steps")
        ->default_val(42);
    app.add_option("--out", config.out_dir, "output directory")->default_val(".");
    app.add_flag("--verbose", config.verbose, "print summaries to stdout");

    auto add_common = [&](CLI::App* cmd, bool needs_meas, bool needs_config) {
        cmd->add_option("--network", config.network_path, "network model file")->required();
        if (needs_meas) cmd->add_option("--measurements", config.measurements_path, "measurement CSV");
        if (needs_config) cmd->add_option("--config", config.config_path, "run configuration file");
    };

    auto* pf = app.add_subcommand("pf", "forward power flow");
    add_common(pf, false, false);

    auto* sim = app.add_subcommand("simulate", "generate synthetic measurements");
    add_common(sim, false, true);
    sim->add_option("--profiles", config.profiles_path, "load profile CSV");

    auto* se = app.add_subcommand("se", "state estimation");
    add_common(se, true, true);
    se->add_option("--holdout", config.holdout_path, "held-out measurement CSV for scoring");
    se->add_option("--truth", config.truth_path, "noiseless truth CSV for scoring");

    auto* pe = app.add_subcommand("pe", "parameter estimation pipeline");
    add_common(pe, true, true);
    pe->add_option("--holdout", config.holdout_path, "held-out measurement CSV for scoring");
    pe->add_option("--truth", config.truth_path, "noiseless truth CSV for scoring");

    auto* bad = app.add_subcommand("detect-bad", "bad data detection and identification");
    add_common(bad, true, true);
    bad->add_option("--confidence", config.confidence_override, "chi-square confidence level");

    auto* obs = app.add_subcommand("observability", "numerical observability analysis");
    add_common(obs, true, true);

    auto* place = app.add_subcommand("place-sensors", "greedy sensor placement");
    add_common(place, false, true);
    place->add_option("-k,--rounds", config.k_override, "number of sensors to add");

    CLI11_PARSE(app, argc, argv);

    if (pf->parsed()) return gridest::cli::cmd_pf(config);
    if (sim->parsed()) return gridest::cli::cmd_simulate(config);
    if (se->parsed()) return gridest::cli::cmd_se(config);
    if (pe->parsed()) return gridest::cli::cmd_pe(config);
    if (bad->parsed()) return gridest::cli::cmd_detect_bad(config);
    if (obs->parsed()) return gridest::cli::cmd_observability(config);
    if (place->parsed()) return gridest::cli::cmd_place_sensors(config);
    return gridest::cli::EXIT_INPUT;
}
