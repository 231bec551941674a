#pragma once

#include <Eigen/Dense>
#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "gridest/netmodel.hpp"
#include "gridest/telemetry.hpp"

namespace gridest::pf {

using net::NetworkModel;
using net::NodeMap;
using telemetry::MeasKind;
using telemetry::MeasPhase;
using telemetry::MeasurementSet;
using telemetry::NoiseModel;
using telemetry::Source;

/// Nominal 120-degree reference: 1@0, 1@-120, 1@+120.
std::array<Complex, 3> nominal_reference();

/// Nominal frame angle of a phase (0, -2pi/3, +2pi/3).
double nominal_angle(net::Phase p);

struct PowerFlowSolution {
    Eigen::VectorXcd voltages;    ///< per node, pu, physical frame
    Eigen::VectorXcd injections;  ///< net complex power per node, pu
    struct BranchFlow {
        std::string element;      ///< line, switch or transformer id
        net::PhaseSet phases;
        Eigen::VectorXcd from_S;  ///< pu, into the branch at the from end
        Eigen::VectorXcd to_S;    ///< pu, into the branch at the to end
        Eigen::VectorXcd series_I;  ///< pu, from->to series current (lines only)
    };
    std::vector<BranchFlow> flows;
    int iterations = 0;
    double max_mismatch = 0.0;

    const BranchFlow* find_flow(const std::string& element) const;
};

/// Carries the mismatch history when Newton fails to converge.
class PfDivergence : public ConvergenceError {
public:
    PfDivergence(const std::string& what, int iters, std::vector<double> trace)
        : ConvergenceError(what, iters), mismatch_trace(std::move(trace)) {}
    std::vector<double> mismatch_trace;
};

/// Newton-Raphson on rectangular voltage coordinates. All phases of the
/// reference bus are held at `ref_voltage`; every other bus-phase must meet
/// its constant-power set point within `tol` (pu). Starts flat unless a warm
/// start is given.
PowerFlowSolution solve_pf(const NetworkModel& model,
                           const std::array<Complex, 3>& ref_voltage = nominal_reference(),
                           double tol = 1e-8, int max_iter = 50,
                           const Eigen::VectorXcd* warm_start = nullptr);

/// Per-period multiplier on a load's (or generator's) nominal P and Q.
struct ProfilePoint {
    double p_scale = 1.0;
    double q_scale = 1.0;
};
using ProfileSet = std::map<std::string, std::vector<ProfilePoint>>;

/// Copy of the model with loads/generators scaled by profile period `t`.
NetworkModel scaled_model(const NetworkModel& model, const ProfileSet& profiles, int period);

/// One converged solution per period; periods are independent and solved in
/// parallel, assembled in period order. Errors carry the period index.
std::vector<PowerFlowSolution> time_series_pf(const NetworkModel& model,
                                              const ProfileSet& profiles, int periods,
                                              const std::array<Complex, 3>& ref_voltage = nominal_reference(),
                                              double tol = 1e-8, int max_iter = 50);

// --- synthetic measurement generation ------------------------------------

/// One metered series: element/kind/phase, per period. Flow and current
/// entries accept the "id:to" end suffix.
struct PlanEntry {
    std::string element;
    MeasKind kind = MeasKind::V_MAG;
    MeasPhase phase = MeasPhase::A;
    Source source = Source::SCADA;
    double sigma_rel = 0.005;   ///< fraction of reading
    double sigma_floor = 0.0;   ///< canonical unit; 0 = per-kind default
    bool holdout = false;       ///< withheld from the training set
};

/// Default absolute sigma floor per kind (canonical units): 1e-3 kV, 0.5 kW,
/// 0.5 kvar, 0.5 A, 1e-3 rad.
double default_sigma_floor(MeasKind kind);

struct MeasurementPlan {
    std::vector<PlanEntry> entries;
    bool pseudo_unmetered_loads = false;  ///< PSEUDO P/Q for loads without a meter entry
    double pseudo_sigma_rel = 0.5;        ///< fraction of nominal power
    bool virtual_zero_injections = false; ///< VIRTUAL records at load/gen-free buses
    double period_spacing_s = 900.0;
};

/// True value of a metered quantity in its canonical unit, read off a
/// converged solution. Shared by the simulator and the report scoring.
double measured_quantity(const NetworkModel& model, const NodeMap& nodes,
                         const PowerFlowSolution& sol, const std::string& element, MeasKind kind,
                         MeasPhase phase);

/// Canonical observable plan: P/Q injection at every non-reference bus-phase
/// plus V_MAG at the reference bus phases.
MeasurementPlan plan_full_injection(const NetworkModel& model);

/// Adds per-phase entries of the given kinds at a bus (or a load/generator).
void add_meter(MeasurementPlan& plan, const NetworkModel& model, const std::string& element,
               const std::vector<MeasKind>& kinds, Source source, double sigma_rel,
               bool holdout = false);

struct SimulatedData {
    MeasurementSet training;
    MeasurementSet holdout;
    MeasurementSet truth;  ///< noiseless copy of both, for scoring
};

/// Evaluates the plan against per-period solutions, then applies noise
/// (deterministic per seed; VIRTUAL rows untouched, see telemetry::add_noise).
/// Pass std::nullopt to keep the records noiseless.
SimulatedData simulate_measurements(const NetworkModel& model,
                                    const std::vector<PowerFlowSolution>& solutions,
                                    const MeasurementPlan& plan,
                                    const std::optional<NoiseModel>& noise, std::uint64_t seed);

} // namespace gridest::pf
