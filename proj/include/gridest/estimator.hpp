#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "gridest/netmodel.hpp"
#include "gridest/powerflow.hpp"
#include "gridest/telemetry.hpp"

namespace gridest::est {

using net::NetworkModel;
using net::NodeMap;
using telemetry::Measurement;
using telemetry::MeasurementSet;

enum class Objective { WLS, WLAV, SCHWEPPE_HUBER };
enum class SolverKind { GN, LM, NEWTON_LAGRANGIAN };
enum class ZeroInjectionMode { EQUALITY, HIGH_WEIGHT };

std::string to_string(Objective o);
std::string to_string(SolverKind s);

/// A network quantity promoted from parameter to unknown. Continuous
/// variables carry an interval domain, discrete ones a finite value set
/// (switch status 0/1, phase index 0/1/2, tap positions...). Parameter
/// variables are shared by all periods of a multi-period problem.
struct ParameterVariable {
    std::string element;
    net::ParameterKind kind = net::ParameterKind::IMPEDANCE_SCALE;
    double lo = 0.0;
    double hi = 0.0;
    std::vector<double> values;  ///< nonempty = discrete domain
    double initial = 1.0;

    bool discrete() const { return !values.empty(); }
    std::string label() const { return element + ":" + net::to_string(kind); }
};

/// Optional inequality constraints, enforced by the Newton-Lagrangian
/// solver through a logarithmic barrier.
struct Bounds {
    std::optional<double> vmag_min;  ///< pu, every bus-phase, every period
    std::optional<double> vmag_max;
    bool parameter_box = true;  ///< keep continuous parameters inside their interval
};

struct EstimationSpec {
    Objective objective = Objective::WLS;
    double huber_gamma = 1.5;  ///< Schweppe-Huber threshold, sigma units
    SolverKind solver = SolverKind::GN;
    ZeroInjectionMode zero_injection = ZeroInjectionMode::EQUALITY;
    double zero_injection_weight = 1e8;  ///< HIGH_WEIGHT mode, pu^-2
    std::vector<ParameterVariable> parameter_variables;
    std::optional<Bounds> bounds;
    int periods = 0;  ///< 0 = take the period count from the measurement set
    double tol_grad = 1e-8;
    double tol_step = 1e-10;
    int max_iter = 50;
    std::array<Complex, 3> ref_voltage = pf::nominal_reference();
    bool compute_normalized_residuals = true;
};

/// Rectangular bus-phase voltages, periods outer, nodes inner, re/im
/// interleaved; the reference bus-phase imaginary parts (in the frame rotated
/// to the reference angles) are eliminated, and the shared parameter
/// variables sit at the tail.
struct StateVector {
    Eigen::VectorXd x;
    int periods = 1;
    int per_period = 0;
    int n_params = 0;
    bool reference_eliminated = true;
};

/// Column layout of the state vector.
struct StateIndex {
    int n_nodes = 0;
    int per_period = 0;
    int periods = 1;
    int n_params = 0;
    std::vector<int> re_off;  ///< node -> offset within a period block
    std::vector<int> im_off;  ///< -1 for reference nodes

    int total() const { return periods * per_period + n_params; }
    int col_re(int t, int node) const { return t * per_period + re_off[node]; }
    int col_im(int t, int node) const { return t * per_period + im_off[node]; }
    int col_param(int p) const { return periods * per_period + p; }
};

struct EstimationResult {
    enum class Status { CONVERGED, MAX_ITER, UNOBSERVABLE, FAILED };
    Status status = Status::FAILED;
    StateVector state;
    std::vector<Eigen::VectorXcd> voltages;  ///< per period, per node, physical frame, pu
    std::vector<ParameterVariable> parameters;
    std::vector<double> parameter_estimates;  ///< aligned with `parameters`
    Eigen::VectorXd estimates;                ///< h(x) per record, canonical units
    Eigen::VectorXd residuals;                ///< z - h(x) per record, canonical units
    Eigen::VectorXd normalized_residuals;     ///< 0 for equality rows and critical records
    std::vector<std::uint8_t> is_equality;    ///< per record
    std::vector<std::uint8_t> is_critical;    ///< per record (residual covariance ~ 0)
    double objective = 0.0;
    Eigen::VectorXd lagrange_multipliers;  ///< per equality row
    std::vector<std::pair<std::string, double>> bound_multipliers;
    double gain_condition_estimate = 0.0;
    std::optional<Eigen::VectorXd> covariance_diag;  ///< per state column
    struct TraceEntry {
        int iter;
        double objective;
        double step_norm;
        double grad_norm;
        double damping;  ///< LM lambda / barrier mu / inertia shift
    };
    std::vector<TraceEntry> trace;
    int iterations = 0;
    int factorizations = 0;  ///< per-iteration cost counter
    int redundancy = 0;
    int state_dim = 0;
    int measurement_count = 0;
    std::string message;

    bool converged() const { return status == Status::CONVERGED; }
};

/// Immutable estimation problem: per-unit model, aligned measurement set and
/// the spec. Residual/Jacobian evaluation is thread safe.
class EstimationProblem {
public:
    EstimationProblem(NetworkModel per_unit_model, MeasurementSet set, EstimationSpec spec);

    const NetworkModel& model() const { return model_; }
    const MeasurementSet& measurements() const { return set_; }
    const EstimationSpec& spec() const { return spec_; }
    const NodeMap& nodes() const { return nodes_; }
    const StateIndex& index() const { return sidx_; }
    int periods() const { return sidx_.periods; }
    int state_dim() const { return sidx_.total(); }
    int record_period(size_t k) const { return record_period_[k]; }
    bool is_equality_row(size_t k) const { return equality_row_[k] != 0; }
    int equality_count() const { return n_equality_; }
    int weighted_count() const { return static_cast<int>(set_.records.size()) - n_equality_; }
    /// weighted rows minus free state dimension (equalities restore rank)
    int redundancy() const { return weighted_count() - (state_dim() - n_equality_); }

    StateVector flat_start() const;
    StateVector from_parameter_values(const std::vector<double>& params) const;

    /// Complex voltages (physical frame) for one period of a state.
    Eigen::VectorXcd period_voltages(const StateVector& state, int period) const;

    /// h(x) per record, per-unit and canonical-unit variants.
    Eigen::VectorXd values_pu(const StateVector& state) const;
    Eigen::VectorXd values(const StateVector& state) const;
    /// z and sigma normalized to per-unit.
    const Eigen::VectorXd& z_pu() const { return z_pu_; }
    const Eigen::VectorXd& sigma_pu() const { return sigma_pu_; }
    const Eigen::VectorXd& si_scale() const { return si_scale_; }

    /// Sparse measurement Jacobian at a state, one row per record.
    Eigen::SparseMatrix<double> jacobian(const StateVector& state) const;

    struct Impl;
    const Impl& impl() const { return *impl_; }

private:
    NetworkModel model_;
    MeasurementSet set_;
    EstimationSpec spec_;
    NodeMap nodes_;
    StateIndex sidx_;
    std::vector<int> record_period_;
    std::vector<std::uint8_t> equality_row_;
    int n_equality_ = 0;
    Eigen::VectorXd z_pu_, sigma_pu_, si_scale_;
    std::shared_ptr<Impl> impl_;
};

/// h for a single record evaluated on physical complex voltages; angles are
/// relative to the nominal 0/-120/+120 frame. Canonical units.
double measurement_function(const NetworkModel& per_unit_model, const NodeMap& nodes,
                            const Eigen::VectorXcd& voltages, const Measurement& record);

// --- solvers ---------------------------------------------------------------

/// Gauss-Newton on the weighted least squares objective with Armijo
/// backtracking. Throws UnobservableError when the gain matrix is singular.
EstimationResult solve_wls_gn(const EstimationProblem& problem,
                              const StateVector* warm_start = nullptr);

/// Levenberg-Marquardt damping around the same core; more robust far from
/// the solution.
EstimationResult solve_lm(const EstimationProblem& problem,
                          const StateVector* warm_start = nullptr);

/// Full Newton on the KKT system with equality constraints (zero injections),
/// inertia correction by diagonal shift, a merit line search and log-barrier
/// bounds.
EstimationResult solve_newton_lagrangian(const EstimationProblem& problem,
                                         const StateVector* warm_start = nullptr);

/// WLAV via iteratively reweighted least squares with annealed smoothing,
/// Schweppe-Huber via standard reweighting.
EstimationResult solve_robust(const EstimationProblem& problem,
                              const StateVector* warm_start = nullptr);

/// Dispatch on spec.solver / objective; equality rows or bounds route to the
/// Newton-Lagrangian solver.
EstimationResult solve(const EstimationProblem& problem, const StateVector* warm_start = nullptr);

} // namespace gridest::est
