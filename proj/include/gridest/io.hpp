#pragma once

#include <optional>
#include <string>
#include <vector>

#include "gridest/diagnostics.hpp"
#include "gridest/estimator.hpp"
#include "gridest/netmodel.hpp"
#include "gridest/paramest.hpp"
#include "gridest/powerflow.hpp"

namespace gridest::io {

// --- network file ---------------------------------------------------------
// Nested key-value text format (UTF-8, '#' comments). Impedance matrices are
// row-major; units are stated per field: ohm, km, kV, kW, kvar, siemens.

net::NetworkModel read_network_file(const std::string& path);
net::NetworkModel read_network_string(const std::string& text);
std::string write_network_string(const net::NetworkModel& model);
void write_network_file(const net::NetworkModel& model, const std::string& path);

// --- run configuration ------------------------------------------------------
// Same key-value syntax; `estimation`, `simulate` and `placement` sections.

struct SimulateConfig {
    int periods = 1;
    pf::MeasurementPlan plan;
    std::optional<telemetry::NoiseModel> noise;  ///< absent = noiseless
};

struct PlacementConfig {
    int k = 1;
    std::vector<pf::PlanEntry> candidates;
};

struct JobConfig {
    est::EstimationSpec spec;
    std::vector<est::ParameterVariable> continuous_vars;
    std::vector<est::ParameterVariable> discrete_vars;
    int budget = 4096;
    double confidence = 0.95;
    std::optional<SimulateConfig> simulate;
    std::optional<PlacementConfig> placement;
};

JobConfig read_config_file(const std::string& path, const net::NetworkModel& model);
JobConfig read_config_string(const std::string& text, const net::NetworkModel& model);

// --- load profiles ----------------------------------------------------------
// CSV: period,element,p_scale,q_scale

pf::ProfileSet read_profiles_csv(const std::string& path);
std::string write_profiles_csv(const pf::ProfileSet& profiles, int periods);

// --- output files -------------------------------------------------------

/// write-temp-then-rename; the destination is never seen half written
void atomic_write(const std::string& path, const std::string& content);

std::string pf_voltages_csv(const net::NetworkModel& model, const pf::PowerFlowSolution& sol);
std::string pf_flows_csv(const net::NetworkModel& model, const pf::PowerFlowSolution& sol);

std::string se_state_csv(const est::EstimationProblem& problem, const est::EstimationResult& res);
std::string se_report_text(const est::EstimationProblem& problem, const est::EstimationResult& res);
std::string se_report_json(const est::EstimationProblem& problem, const est::EstimationResult& res);

/// Plot data: element,kind,phase,period,role,value with roles
/// measured / estimated / truth (the out-of-sample comparison file).
std::string series_csv(const est::EstimationProblem& problem, const est::EstimationResult& res,
                       const telemetry::MeasurementSet* holdout,
                       const telemetry::MeasurementSet* truth);

struct HoldoutScore {
    int count = 0;
    double rmse = 0.0;        ///< estimated vs held-out measured values
    double mean_abs = 0.0;    ///< mean |measured| of the held-out series
    double rmse_vs_truth = 0.0;  ///< when a truth set is given
    bool has_truth = false;
};
/// Scores held-out records against the estimate (canonical units).
HoldoutScore score_holdout(const est::EstimationProblem& problem, const est::EstimationResult& res,
                           const telemetry::MeasurementSet& holdout,
                           const telemetry::MeasurementSet* truth);

std::string baddata_report_text(const diag::BadDataReport& rep);
std::string baddata_report_json(const diag::BadDataReport& rep);
std::string observability_report_text(const diag::ObservabilityReport& rep);
std::string observability_report_json(const diag::ObservabilityReport& rep);
std::string placement_report_text(const diag::PlacementReport& rep);
std::string placement_report_json(const diag::PlacementReport& rep);
std::string pipeline_report_text(const pe::PipelineReport& rep);
std::string pipeline_report_json(const pe::PipelineReport& rep);
std::string scan_report_text(const pe::SuspectReport& rep);

} // namespace gridest::io
