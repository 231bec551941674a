#pragma once

// Internal evaluation plumbing shared by the solver translation units.

#include <functional>
#include <limits>
#include <vector>

#include "gridest/estimator.hpp"
#include "measfun.hpp"

namespace gridest::est {

struct EstimationProblem::Impl {
    std::vector<detail::CompiledMeas> base_rows;
    std::vector<double> base_theta;
    Eigen::VectorXd weights;          ///< per record; 0 for equality rows
    Eigen::VectorXd sigma_eff_pu;     ///< 1/sqrt(w) for weighted rows
    std::vector<int> equality_index;  ///< record -> equality row ordinal or -1
};

} // namespace gridest::est

namespace gridest::est::detail {

/// Sparse row of the measurement Jacobian, (column, value) pairs.
using JRow = std::vector<std::pair<int, double>>;

/// Compiles all records against the base model with parameter values theta
/// substituted (theta aligned with spec().parameter_variables).
std::vector<CompiledMeas> compile_rows(const EstimationProblem& p, const std::vector<double>& theta);

/// Complex node states (rotated frame) for one period.
Eigen::VectorXcd z_period(const EstimationProblem& p, const StateVector& x, int t);
std::vector<Eigen::VectorXcd> z_all(const EstimationProblem& p, const StateVector& x);

/// h (pu) and optionally the Jacobian rows for every record; parallel over
/// records with slot storage, deterministic.
void evaluate(const EstimationProblem& p, const std::vector<CompiledMeas>& rows,
              const StateVector& x, Eigen::VectorXd* h_pu, std::vector<JRow>* jrows);

/// Triplets of sum_k factor_k * d2(h_k) over the state columns of record k's
/// period (reference-fixed components dropped). Used by the Newton solver.
void accumulate_hessian(const EstimationProblem& p, const std::vector<CompiledMeas>& rows,
                        const StateVector& x, const Eigen::VectorXd& factors,
                        std::vector<Eigen::Triplet<double>>& out);

Eigen::SparseMatrix<double> build_sparse(int rows, int cols, const std::vector<JRow>& jrows);

/// theta slice of a state vector.
std::vector<double> theta_of(const EstimationProblem& p, const StateVector& x);

/// Caches compiled rows per parameter vector; the base compilation is reused
/// whenever theta matches the problem's initial values.
class RowProvider {
public:
    explicit RowProvider(const EstimationProblem& p) : p_(p) {}

    const std::vector<CompiledMeas>& at(const std::vector<double>& theta) {
        if (p_.index().n_params == 0 || theta == p_.impl().base_theta)
            return p_.impl().base_rows;
        if (theta != cached_theta_) {
            cached_rows_ = compile_rows(p_, theta);
            cached_theta_ = theta;
        }
        return cached_rows_;
    }

private:
    const EstimationProblem& p_;
    std::vector<double> cached_theta_;
    std::vector<CompiledMeas> cached_rows_;
};

/// Largest/smallest |eigenvalue| ratio estimated by (inverse) power
/// iteration, using a prefactorized solver for the inverse sweep.
template <typename Solver>
double condition_estimate(const Eigen::SparseMatrix<double>& A, const Solver& factor) {
    const int n = static_cast<int>(A.rows());
    if (n == 0) return 1.0;
    Eigen::VectorXd v = Eigen::VectorXd::Ones(n) / std::sqrt(static_cast<double>(n));
    double lmax = 1.0;
    for (int i = 0; i < 12; ++i) {
        v = A * v;
        lmax = v.norm();
        if (lmax <= 0) return std::numeric_limits<double>::infinity();
        v /= lmax;
    }
    Eigen::VectorXd w = Eigen::VectorXd::Ones(n) / std::sqrt(static_cast<double>(n));
    double linv = 1.0;
    for (int i = 0; i < 12; ++i) {
        w = factor.solve(w);
        linv = w.norm();
        if (!std::isfinite(linv) || linv <= 0) return std::numeric_limits<double>::infinity();
        w /= linv;
    }
    return lmax * linv;
}

/// Shared result assembly: residual tables, normalized residuals via the
/// supplied inverse-quadratic-form callback (may be empty), voltages, trace.
struct ResultBuilder {
    const EstimationProblem& p;
    EstimationResult build(const StateVector& x, const std::vector<CompiledMeas>& rows,
                           const Eigen::VectorXd& h_pu, const std::vector<JRow>& jrows,
                           double objective, EstimationResult::Status status,
                           const std::function<double(const JRow&)>& inv_quad) const;
};

} // namespace gridest::est::detail
