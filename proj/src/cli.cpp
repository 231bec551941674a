#include "gridest/cli.hpp"

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>

#include "gridest/diagnostics.hpp"
#include "gridest/estimator.hpp"
#include "gridest/io.hpp"
#include "gridest/paramest.hpp"

namespace gridest::cli {

namespace fs = std::filesystem;

namespace {

void ensure_out_dir(const RunConfig& config) {
    if (!config.out_dir.empty()) fs::create_directories(config.out_dir);
}

std::string out_path(const RunConfig& config, const std::string& name) {
    return (fs::path(config.out_dir) / name).string();
}

net::NetworkModel load_network(const RunConfig& config, bool to_pu = true) {
    if (config.network_path.empty()) throw InputError("--network is required");
    net::NetworkModel model = io::read_network_file(config.network_path);
    auto report = net::validate(model);
    if (!report.ok())
        throw InputError("network file '" + config.network_path + "' is not admissible:\n" +
                         report.summary());
    return to_pu ? net::to_per_unit(model) : model;
}

telemetry::MeasurementSet load_measurements(const std::string& path) {
    if (path.empty()) throw InputError("--measurements is required");
    return telemetry::ingest(path);
}

io::JobConfig load_config(const RunConfig& config, const net::NetworkModel& model) {
    if (config.config_path.empty()) throw InputError("--config is required");
    io::JobConfig job = io::read_config_file(config.config_path, model);
    if (config.confidence_override > 0) job.confidence = config.confidence_override;
    return job;
}

int map_exception(const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    if (dynamic_cast<const UnobservableError*>(&e)) return EXIT_UNOBSERVABLE;
    if (dynamic_cast<const ConvergenceError*>(&e)) return EXIT_NONCONVERGED;
    return EXIT_INPUT;
}

} // namespace

int cmd_pf(const RunConfig& config) {
    try {
        ensure_out_dir(config);
        net::NetworkModel model = load_network(config);
        pf::PowerFlowSolution sol;
        try {
            sol = pf::solve_pf(model);
        } catch (const pf::PfDivergence& e) {
            std::string trace = "iteration,max_mismatch_pu\n";
            for (size_t i = 0; i < e.mismatch_trace.size(); ++i) {
                char buf[64];
                std::snprintf(buf, sizeof(buf), "%zu,%.12g\n", i, e.mismatch_trace[i]);
                trace += buf;
            }
            io::atomic_write(out_path(config, "pf_trace.csv"), trace);
            std::cerr << "error: " << e.what() << "\n";
            return EXIT_NONCONVERGED;
        }
        io::atomic_write(out_path(config, "pf_voltages.csv"), io::pf_voltages_csv(model, sol));
        io::atomic_write(out_path(config, "pf_flows.csv"), io::pf_flows_csv(model, sol));
        std::ostringstream os;
        os << "power flow converged in " << sol.iterations << " iterations, max mismatch "
           << sol.max_mismatch << " pu\n";
        io::atomic_write(out_path(config, "pf_summary.txt"), os.str());
        if (config.verbose) std::cout << os.str();
        return EXIT_OK;
    } catch (const std::exception& e) {
        return map_exception(e);
    }
}

int cmd_simulate(const RunConfig& config) {
    try {
        ensure_out_dir(config);
        net::NetworkModel model = load_network(config);
        io::JobConfig job = load_config(config, model);
        if (!job.simulate) throw InputError("config file has no 'simulate' section");
        const auto& sim = *job.simulate;

        pf::ProfileSet profiles;
        if (!config.profiles_path.empty()) profiles = io::read_profiles_csv(config.profiles_path);
        auto solutions = pf::time_series_pf(model, profiles, sim.periods);
        auto data = pf::simulate_measurements(model, solutions, sim.plan, sim.noise, config.seed);

        telemetry::emit_csv(data.training, out_path(config, "measurements.csv"));
        telemetry::emit_csv(data.holdout, out_path(config, "holdout.csv"));
        telemetry::emit_csv(data.truth, out_path(config, "truth.csv"));
        std::ostringstream os;
        os << "simulated " << sim.periods << " periods: " << data.training.records.size()
           << " training records, " << data.holdout.records.size() << " holdout records\n";
        io::atomic_write(out_path(config, "simulate_summary.txt"), os.str());
        if (config.verbose) std::cout << os.str();
        return EXIT_OK;
    } catch (const std::exception& e) {
        return map_exception(e);
    }
}

namespace {

int write_se_outputs(const RunConfig& config, const est::EstimationProblem& problem,
                     const est::EstimationResult& res, const std::string& prefix) {
    io::atomic_write(out_path(config, prefix + "_report.txt"), io::se_report_text(problem, res));
    io::atomic_write(out_path(config, prefix + "_report.json"), io::se_report_json(problem, res));
    io::atomic_write(out_path(config, prefix + "_state.csv"), io::se_state_csv(problem, res));

    std::optional<telemetry::MeasurementSet> holdout, truth;
    if (!config.holdout_path.empty()) holdout = telemetry::ingest(config.holdout_path);
    if (!config.truth_path.empty()) truth = telemetry::ingest(config.truth_path);
    io::atomic_write(out_path(config, prefix + "_series.csv"),
                     io::series_csv(problem, res, holdout ? &*holdout : nullptr,
                                    truth ? &*truth : nullptr));
    std::ostringstream os;
    os << (res.converged() ? "converged" : "NOT converged") << ", objective " << res.objective
       << ", redundancy " << res.redundancy << "\n";
    if (holdout && !holdout->records.empty()) {
        auto score = io::score_holdout(problem, res, *holdout, truth ? &*truth : nullptr);
        os << "holdout records " << score.count << ", rmse " << score.rmse << ", mean |measured| "
           << score.mean_abs;
        if (score.mean_abs > 0) os << ", rmse/mean " << score.rmse / score.mean_abs;
        if (score.has_truth) os << ", rmse vs truth " << score.rmse_vs_truth;
        os << "\n";
    }
    io::atomic_write(out_path(config, prefix + "_summary.txt"), os.str());
    if (config.verbose) std::cout << os.str();
    return res.converged() ? EXIT_OK : EXIT_NONCONVERGED;
}

} // namespace

int cmd_se(const RunConfig& config) {
    try {
        ensure_out_dir(config);
        net::NetworkModel model = load_network(config);
        io::JobConfig job = load_config(config, model);
        telemetry::MeasurementSet set = load_measurements(config.measurements_path);
        est::EstimationSpec spec = job.spec;
        spec.parameter_variables.clear();  // plain state estimation
        est::EstimationProblem problem(model, set, spec);
        est::EstimationResult res = est::solve(problem, nullptr);
        return write_se_outputs(config, problem, res, "se");
    } catch (const std::exception& e) {
        return map_exception(e);
    }
}

int cmd_pe(const RunConfig& config) {
    try {
        ensure_out_dir(config);
        net::NetworkModel model = load_network(config);
        io::JobConfig job = load_config(config, model);
        telemetry::MeasurementSet set = load_measurements(config.measurements_path);
        pe::PipelineReport rep = pe::staged_pipeline(model, set, job.discrete_vars,
                                                     job.continuous_vars, job.spec, job.budget);
        io::atomic_write(out_path(config, "pe_report.txt"), io::pipeline_report_text(rep));
        io::atomic_write(out_path(config, "pe_report.json"), io::pipeline_report_json(rep));
        if (config.verbose) std::cout << io::pipeline_report_text(rep);
        if (rep.final_result) {
            // rebuild the final-stage problem for the residual files
            net::NetworkModel fixed = model;
            if (!rep.chosen_assignment.empty()) {
                net::ParameterAssignment ov;
                for (size_t i = 0; i < rep.discrete_vars.size(); ++i)
                    ov.push_back({rep.discrete_vars[i].element, rep.discrete_vars[i].kind,
                                  rep.chosen_assignment[i]});
                fixed = net::apply_parameter_overrides(fixed, ov);
            }
            if (rep.continuous_stage_ran) {
                net::ParameterAssignment ov;
                for (size_t i = 0; i < rep.continuous_vars.size(); ++i)
                    ov.push_back({rep.continuous_vars[i].element, rep.continuous_vars[i].kind,
                                  rep.continuous_estimates[i]});
                fixed = net::apply_parameter_overrides(fixed, ov);
            }
            est::EstimationSpec spec = job.spec;
            spec.parameter_variables.clear();
            est::EstimationProblem problem(fixed, set, spec);
            return write_se_outputs(config, problem, *rep.final_result, "pe_final");
        }
        return EXIT_OK;
    } catch (const std::exception& e) {
        return map_exception(e);
    }
}

int cmd_detect_bad(const RunConfig& config) {
    try {
        ensure_out_dir(config);
        net::NetworkModel model = load_network(config);
        io::JobConfig job = load_config(config, model);
        telemetry::MeasurementSet set = load_measurements(config.measurements_path);
        est::EstimationSpec spec = job.spec;
        spec.parameter_variables.clear();
        spec.compute_normalized_residuals = true;
        est::EstimationProblem problem(model, set, spec);
        est::EstimationResult res = est::solve(problem, nullptr);
        diag::BadDataReport rep = diag::detect_bad_data(problem, res, job.confidence);
        io::atomic_write(out_path(config, "baddata_report.txt"), io::baddata_report_text(rep));
        io::atomic_write(out_path(config, "baddata_report.json"), io::baddata_report_json(rep));
        if (config.verbose) std::cout << io::baddata_report_text(rep);
        return rep.resolved ? EXIT_OK : EXIT_BAD_DATA;
    } catch (const std::exception& e) {
        return map_exception(e);
    }
}

int cmd_observability(const RunConfig& config) {
    try {
        ensure_out_dir(config);
        net::NetworkModel model = load_network(config);
        diag::ObservabilityReport rep;
        if (!config.measurements_path.empty()) {
            telemetry::MeasurementSet set = load_measurements(config.measurements_path);
            rep = diag::observability(model, set);
        } else {
            io::JobConfig job = load_config(config, model);
            if (!job.simulate)
                throw InputError("observability needs --measurements or a simulate plan");
            rep = diag::observability(model, job.simulate->plan);
        }
        io::atomic_write(out_path(config, "observability_report.txt"),
                         io::observability_report_text(rep));
        io::atomic_write(out_path(config, "observability_report.json"),
                         io::observability_report_json(rep));
        if (config.verbose) std::cout << io::observability_report_text(rep);
        return rep.fully_observable() ? EXIT_OK : EXIT_UNOBSERVABLE;
    } catch (const std::exception& e) {
        return map_exception(e);
    }
}

int cmd_place_sensors(const RunConfig& config) {
    try {
        ensure_out_dir(config);
        net::NetworkModel model = load_network(config);
        io::JobConfig job = load_config(config, model);
        if (!job.placement) throw InputError("config file has no 'placement' section");
        if (!job.simulate) throw InputError("place-sensors needs a simulate plan as base");
        int k = config.k_override >= 0 ? config.k_override : job.placement->k;
        diag::PlacementReport rep =
            diag::place_sensors(model, job.simulate->plan, job.placement->candidates, k);
        io::atomic_write(out_path(config, "placement_report.txt"),
                         io::placement_report_text(rep));
        io::atomic_write(out_path(config, "placement_report.json"),
                         io::placement_report_json(rep));
        if (config.verbose) std::cout << io::placement_report_text(rep);
        return EXIT_OK;
    } catch (const std::exception& e) {
        return map_exception(e);
    }
}

} // namespace gridest::cli
