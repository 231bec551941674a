#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

#include "gridest/estimator.hpp"
#include "gridest/powerflow.hpp"

namespace gridest::diag {

using est::EstimationProblem;
using est::EstimationResult;

/// Human-readable label of every state column ("B3.b.im@t0", "L5:scale").
std::vector<std::string> state_labels(const EstimationProblem& problem);

struct ObservabilityReport {
    int state_dim = 0;
    int rank = 0;
    int deficiency = 0;
    /// Null-space basis of the gain matrix, one column per deficient
    /// direction, with the dominant state labels per direction.
    Eigen::MatrixXd null_basis;
    std::vector<std::vector<std::pair<std::string, double>>> dominant_states;
    std::vector<std::uint8_t> observable;  ///< per state column
    std::vector<std::string> labels;

    bool fully_observable() const { return deficiency == 0; }
};

/// Numerical observability: rank of H^T H at flat start via eigenvalue
/// factorization with a 1e-10 relative threshold.
ObservabilityReport observability(const net::NetworkModel& per_unit_model,
                                  const pf::MeasurementPlan& plan);
ObservabilityReport observability(const net::NetworkModel& per_unit_model,
                                  const telemetry::MeasurementSet& set);
ObservabilityReport observability(const EstimationProblem& problem);

struct BadDataReport {
    double confidence = 0.95;
    int dof = 0;
    double chi2_statistic = 0.0;
    double chi2_threshold = 0.0;
    bool chi2_pass_initial = false;
    Eigen::VectorXd normalized_residuals;  ///< at the initial estimate
    std::vector<std::uint8_t> critical;    ///< per record, zero local redundancy

    struct Removal {
        std::size_t record_index;  ///< index into the original measurement set
        std::string element;
        std::string kind;
        std::string phase;
        std::int64_t timestamp;
        double normalized_residual;
        double objective_after;
        double threshold_after;
        bool chi2_pass_after;
    };
    std::vector<Removal> removals;
    bool resolved = false;  ///< chi-square passed (possibly after removals)
    double final_objective = 0.0;
    int final_dof = 0;
    std::optional<EstimationResult> final_result;  ///< clean-set estimate
};

/// Chi-square test at `confidence`; on failure removes the largest-
/// normalized-residual record (if above the 3.0 identification threshold),
/// re-solves and repeats until the test passes or redundancy reaches 1.
/// Critical and VIRTUAL records are never removed.
BadDataReport detect_bad_data(const EstimationProblem& problem, const EstimationResult& result,
                              double confidence = 0.95);

/// Square roots of the diagonal of the inverse gain at the optimum, one entry
/// per state column. Throws UnobservableError on a deficient gain.
Eigen::VectorXd estimation_uncertainty(const EstimationProblem& problem,
                                       const EstimationResult& result);

struct PlacementStep {
    std::size_t candidate_index;
    std::string site;
    double max_variance_before;
    double max_variance_after;
    double total_variance_reduction;
    bool tie_broken = false;
};

struct PlacementReport {
    double base_max_variance = 0.0;
    std::vector<PlacementStep> steps;
    std::vector<std::string> candidate_sites;  ///< labels, aligned with the input
};

/// Greedy sensor placement: each round adds the candidate that most reduces
/// the maximum per-state variance; ties break by total variance reduction,
/// then site label. The model is linearized at its power flow solution.
PlacementReport place_sensors(const net::NetworkModel& per_unit_model,
                              const pf::MeasurementPlan& base_plan,
                              const std::vector<pf::PlanEntry>& candidate_sites, int k);

} // namespace gridest::diag
