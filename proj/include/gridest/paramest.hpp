#pragma once

#include <optional>
#include <string>
#include <vector>

#include "gridest/estimator.hpp"

namespace gridest::pe {

using est::EstimationResult;
using est::EstimationSpec;
using est::ParameterVariable;
using net::NetworkModel;
using telemetry::MeasurementSet;

/// Joint state/parameter estimate for continuous variables, with linearized
/// 95% confidence intervals from the inverse gain at the optimum.
struct ContinuousReport {
    EstimationResult result;
    std::vector<ParameterVariable> variables;
    std::vector<double> estimates;
    std::vector<std::pair<double, double>> ci95;
};

/// Augments the multi-period state with the given continuous variables and
/// solves jointly. Throws on an unidentifiable variable (zero Jacobian
/// column).
ContinuousReport estimate_continuous(const NetworkModel& per_unit_model,
                                     const MeasurementSet& set,
                                     const std::vector<ParameterVariable>& vars,
                                     const EstimationSpec& spec);

struct CandidateOutcome {
    std::vector<double> assignment;  ///< aligned with the discrete variables
    double objective;                ///< +inf when the solve failed
    std::string note;
};

struct PipelineReport {
    // discrete stage
    std::vector<ParameterVariable> discrete_vars;  ///< with pruned domains
    std::vector<CandidateOutcome> candidates;      ///< evaluated assignments
    std::vector<double> chosen_assignment;
    double chosen_objective = 0.0;
    bool discrete_stage_ran = false;
    bool tie_broken = false;
    int candidates_total = 0;   ///< candidate space after pruning
    int candidates_evaluated = 0;
    int subtrees_pruned = 0;
    std::string discrete_note;
    // continuous stage
    std::vector<ParameterVariable> continuous_vars;
    std::vector<double> continuous_estimates;
    std::vector<std::pair<double, double>> ci95;
    bool continuous_stage_ran = false;
    std::string continuous_note;
    // final plain estimate with every parameter fixed
    std::optional<EstimationResult> final_result;
};

/// Searches the discrete assignment space: exhaustive enumeration up to 256
/// candidates, branch and bound above (bound = WLS objective over the records
/// unaffected by the still-open variables). Phase-assignment domains are
/// pre-pruned by voltage-magnitude correlation against the reference bus
/// series (top 3 kept). Ties break by fewest changes from the prior values,
/// then lexicographically.
PipelineReport estimate_discrete(const NetworkModel& per_unit_model, const MeasurementSet& set,
                                 const std::vector<ParameterVariable>& vars,
                                 const EstimationSpec& spec, int budget = 4096);

/// Discrete stage, fix winners, continuous stage, then a final plain
/// estimate with all parameters fixed and a full residual report.
PipelineReport staged_pipeline(const NetworkModel& per_unit_model, const MeasurementSet& set,
                               const std::vector<ParameterVariable>& discrete_vars,
                               const std::vector<ParameterVariable>& continuous_vars,
                               const EstimationSpec& spec, int budget = 4096);

enum class SuspectClass { PERSISTENT, TRANSIENT };

std::string to_string(SuspectClass c);

struct Suspect {
    std::string element;
    double score = 0.0;            ///< mean over periods of the peak |rN| incident to it
    double exceed_fraction = 0.0;  ///< share of periods above the threshold
    int periods_flagged = 0;
    int periods_total = 0;
    SuspectClass cls = SuspectClass::TRANSIENT;
    std::vector<std::size_t> top_records;  ///< worst record per flagged period
};

struct SuspectReport {
    double threshold = 3.0;           ///< normalized-residual trip level
    double persistence_cutoff = 0.9;  ///< exceed fraction separating the classes
    std::vector<Suspect> suspects;    ///< ranked by score, descending
    EstimationResult base_result;
};

/// Plain multi-period estimate followed by per-element residual analysis:
/// suspicion persisting across periods points at a parameter error rather
/// than bad data.
SuspectReport sequential_residual_scan(const NetworkModel& per_unit_model,
                                       const MeasurementSet& set, const EstimationSpec& spec);

} // namespace gridest::pe
