#include <Eigen/SparseCholesky>
#include <algorithm>
#include <cmath>
#include <memory>
#include <sstream>

#include "solver_core.hpp"

namespace gridest::est {

namespace {

using detail::CompiledMeas;
using detail::JRow;

enum class RobustKind { NONE, WLAV, HUBER };

struct CoreOptions {
    bool lm = false;
    RobustKind robust = RobustKind::NONE;
};

constexpr double kArmijoC1 = 1e-4;
constexpr double kLambda0 = 1e-3;

using detail::RowProvider;

struct ObjectiveModel {
    const EstimationProblem& p;
    RobustKind robust;
    double huber_gamma;

    double rho(double u, double eps) const {
        switch (robust) {
            case RobustKind::NONE: return u * u;
            case RobustKind::WLAV: return std::abs(u);
            case RobustKind::HUBER:
                return std::abs(u) <= huber_gamma ? u * u
                                                  : 2.0 * huber_gamma * std::abs(u) -
                                                        huber_gamma * huber_gamma;
        }
        (void)eps;
        return 0.0;
    }

    /// IRLS weight in pu^-2 for a residual normalized to u sigma units.
    double weight(size_t k, double u, double eps) const {
        double w0 = p.impl().weights[k];
        switch (robust) {
            case RobustKind::NONE: return w0;
            case RobustKind::WLAV: return w0 / std::max(std::abs(u), eps);
            case RobustKind::HUBER:
                return std::abs(u) <= huber_gamma ? w0 : w0 * huber_gamma / std::abs(u);
        }
        return w0;
    }

    double value(const Eigen::VectorXd& h_pu, double eps) const {
        double f = 0.0;
        const auto& sig = p.impl().sigma_eff_pu;
        for (int k = 0; k < h_pu.size(); ++k) {
            if (p.is_equality_row(k)) continue;
            double u = (p.z_pu()[k] - h_pu[k]) / sig[k];
            f += rho(u, eps);
        }
        return f;
    }
};

void clip_parameters(const EstimationProblem& p, StateVector& x) {
    const auto& vars = p.spec().parameter_variables;
    for (size_t i = 0; i < vars.size(); ++i) {
        double& v = x.x[p.index().col_param(static_cast<int>(i))];
        v = std::min(std::max(v, vars[i].lo), vars[i].hi);
    }
}

EstimationResult least_squares_core(const EstimationProblem& p, const StateVector* warm,
                                    CoreOptions opt) {
    if (p.equality_count() > 0)
        throw InputError("equality-constrained problems require solve_newton_lagrangian");
    const auto& spec = p.spec();
    const int n = p.state_dim();
    const auto m = static_cast<int>(p.measurements().records.size());
    if (m == 0) throw InputError("estimation problem has no measurements");

    StateVector x = warm ? *warm : p.flat_start();
    if (x.x.size() != n) throw InputError("warm start dimension mismatch");
    clip_parameters(p, x);

    RowProvider rows(p);
    ObjectiveModel obj{p, opt.robust, spec.huber_gamma};

    std::vector<double> stages;
    if (opt.robust == RobustKind::WLAV)
        stages = {1e-2, 1e-3, 1e-4, 1e-5, 1e-6};
    else
        stages = {0.0};

    EstimationResult res;
    auto& trace = res.trace;
    int factorizations = 0;
    int iterations = 0;
    double lambda = kLambda0;
    auto status = EstimationResult::Status::MAX_ITER;
    std::string message;

    Eigen::VectorXd h_pu;
    std::vector<JRow> jrows;

    auto value_at = [&](const StateVector& xt, double eps) {
        Eigen::VectorXd ht;
        detail::evaluate(p, rows.at(detail::theta_of(p, xt)), xt, &ht, nullptr);
        return obj.value(ht, eps);
    };

    for (size_t stage = 0; stage < stages.size(); ++stage) {
        double eps = stages[stage];
        bool stage_done = false;
        for (int it = 0; it < spec.max_iter && !stage_done; ++it, ++iterations) {
            const auto& cr = rows.at(detail::theta_of(p, x));
            detail::evaluate(p, cr, x, &h_pu, &jrows);
            double f = obj.value(h_pu, eps);

            // IRLS weights at the current iterate
            Eigen::VectorXd w(m);
            const auto& sig = p.impl().sigma_eff_pu;
            for (int k = 0; k < m; ++k) {
                double u = (p.z_pu()[k] - h_pu[k]) / sig[k];
                w[k] = obj.weight(k, u, eps);
            }
            Eigen::VectorXd r = p.z_pu() - h_pu;
            Eigen::SparseMatrix<double> J = detail::build_sparse(m, n, jrows);
            Eigen::VectorXd g = J.transpose() * w.cwiseProduct(r);
            double grad_inf = g.size() ? g.cwiseAbs().maxCoeff() : 0.0;
            trace.push_back({iterations, f, 0.0, grad_inf, opt.lm ? lambda : eps});

            if (grad_inf < spec.tol_grad) {
                stage_done = true;
                status = EstimationResult::Status::CONVERGED;
                break;
            }

            Eigen::SparseMatrix<double> WJ = w.asDiagonal() * J;
            Eigen::SparseMatrix<double> G = Eigen::SparseMatrix<double>(J.transpose()) * WJ;

            bool accepted = false;
            for (int attempt = 0; attempt < 40 && !accepted; ++attempt) {
                Eigen::SparseMatrix<double> Gd = G;
                if (opt.lm) {
                    Eigen::SparseMatrix<double> I(n, n);
                    I.setIdentity();
                    Gd = G + lambda * I;
                }
                Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt;
                ldlt.compute(Gd);
                ++factorizations;
                bool singular = ldlt.info() != Eigen::Success;
                if (!singular && !opt.lm) {
                    // the gain of an observable problem is positive definite;
                    // zero or negative pivots mean rank deficiency
                    const auto& D = ldlt.vectorD();
                    double dmax = D.cwiseAbs().maxCoeff();
                    if (!(dmax > 0) || !D.allFinite() || D.minCoeff() <= dmax * 1e-14)
                        singular = true;
                }
                if (singular) {
                    if (opt.lm) {
                        lambda *= 10.0;
                        continue;
                    }
                    int deficiency = -1;
                    std::ostringstream os;
                    os << "gain matrix numerically singular";
                    if (n <= 2500) {
                        Eigen::MatrixXd Gd2(G);
                        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Gd2);
                        double emax = es.eigenvalues().cwiseAbs().maxCoeff();
                        deficiency = 0;
                        for (int i = 0; i < n; ++i)
                            if (es.eigenvalues()[i] <= std::max(emax, 1.0) * 1e-10) ++deficiency;
                        os << " (deficiency " << deficiency << " of " << n << " states)";
                    }
                    throw UnobservableError(os.str(), deficiency);
                }
                Eigen::VectorXd dx = ldlt.solve(g);
                double step_inf = dx.cwiseAbs().maxCoeff();

                if (opt.lm) {
                    StateVector xt = x;
                    xt.x += dx;
                    clip_parameters(p, xt);
                    double ft = value_at(xt, eps);
                    if (ft < f) {
                        x = xt;
                        lambda = std::max(lambda / 10.0, 1e-12);
                        accepted = true;
                        trace.back().step_norm = step_inf;
                        if (step_inf < spec.tol_step) {
                            stage_done = true;
                            status = EstimationResult::Status::CONVERGED;
                        }
                    } else {
                        lambda *= 10.0;
                        if (step_inf < spec.tol_step) {
                            // trust region collapsed at a stationary point
                            stage_done = true;
                            status = EstimationResult::Status::CONVERGED;
                            accepted = true;
                        }
                    }
                } else {
                    double d = -2.0 * g.dot(dx);  // directional derivative of the
                                                  // frozen-weight quadratic
                    double alpha = 1.0;
                    StateVector xt = x;
                    double ft = f;
                    bool ok = false;
                    while (alpha > 1e-6) {
                        xt = x;
                        xt.x += alpha * dx;
                        clip_parameters(p, xt);
                        ft = value_at(xt, eps);
                        if (ft <= f + kArmijoC1 * alpha * d || ft < f) {
                            ok = true;
                            break;
                        }
                        alpha *= 0.5;
                    }
                    if (!ok) {
                        // the objective can no longer be resolved in double
                        // precision; a tiny proposed step means we are at the
                        // numerical optimum
                        stage_done = true;
                        status = step_inf < 1e-7 ? EstimationResult::Status::CONVERGED
                                                 : EstimationResult::Status::MAX_ITER;
                        if (status != EstimationResult::Status::CONVERGED)
                            message = "line search stalled";
                        accepted = true;
                        break;
                    }
                    x = xt;
                    trace.back().step_norm = alpha * step_inf;
                    accepted = true;
                    if (alpha * step_inf < spec.tol_step) {
                        stage_done = true;
                        status = EstimationResult::Status::CONVERGED;
                    }
                }
            }
            if (!accepted) {
                stage_done = true;  // LM rejected 40 times in a row
                status = EstimationResult::Status::MAX_ITER;
                message = "damping increase exhausted";
            }
        }
        if (status != EstimationResult::Status::CONVERGED && stage + 1 == stages.size()) break;
    }

    // final evaluation and factorization for the residual statistics
    const auto& cr = rows.at(detail::theta_of(p, x));
    detail::evaluate(p, cr, x, &h_pu, &jrows);
    double f_final = obj.value(h_pu, stages.back());
    Eigen::VectorXd w(m);
    const auto& sig = p.impl().sigma_eff_pu;
    for (int k = 0; k < m; ++k) {
        double u = (p.z_pu()[k] - h_pu[k]) / sig[k];
        w[k] = obj.weight(k, u, stages.back());
    }
    Eigen::SparseMatrix<double> J = detail::build_sparse(m, n, jrows);
    Eigen::SparseMatrix<double> WJ = w.asDiagonal() * J;
    Eigen::SparseMatrix<double> G = Eigen::SparseMatrix<double>(J.transpose()) * WJ;
    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt;
    ldlt.compute(G);
    ++factorizations;
    bool have_factor = ldlt.info() == Eigen::Success;

    std::function<double(const JRow&)> inv_quad;
    if (have_factor)
        inv_quad = [&](const JRow& row) {
            Eigen::VectorXd e = Eigen::VectorXd::Zero(n);
            for (const auto& [c, v] : row) e[c] += v;
            Eigen::VectorXd y = ldlt.solve(e);
            return e.dot(y);
        };

    detail::ResultBuilder rb{p};
    EstimationResult out = rb.build(x, cr, h_pu, jrows, f_final, status, inv_quad);
    out.iterations = iterations;
    out.factorizations = factorizations;
    out.message = message;
    out.trace = std::move(trace);
    if (have_factor) out.gain_condition_estimate = detail::condition_estimate(G, ldlt);
    return out;
}

} // namespace

EstimationResult solve_wls_gn(const EstimationProblem& problem, const StateVector* warm_start) {
    if (problem.spec().objective != Objective::WLS)
        throw InputError("solve_wls_gn requires the WLS objective");
    return least_squares_core(problem, warm_start, {false, RobustKind::NONE});
}

EstimationResult solve_lm(const EstimationProblem& problem, const StateVector* warm_start) {
    RobustKind rk = RobustKind::NONE;
    if (problem.spec().objective == Objective::SCHWEPPE_HUBER) rk = RobustKind::HUBER;
    else if (problem.spec().objective == Objective::WLAV)
        throw InputError("solve_lm supports WLS and Schweppe-Huber objectives");
    return least_squares_core(problem, warm_start, {true, rk});
}

EstimationResult solve_robust(const EstimationProblem& problem, const StateVector* warm_start) {
    switch (problem.spec().objective) {
        case Objective::WLAV:
            return least_squares_core(problem, warm_start, {false, RobustKind::WLAV});
        case Objective::SCHWEPPE_HUBER:
            return least_squares_core(problem, warm_start, {false, RobustKind::HUBER});
        case Objective::WLS:
            throw InputError("solve_robust requires a WLAV or Schweppe-Huber objective");
    }
    throw InputError("bad objective");
}

EstimationResult solve(const EstimationProblem& problem, const StateVector* warm_start) {
    const auto& spec = problem.spec();
    if (problem.equality_count() > 0 || spec.bounds ||
        spec.solver == SolverKind::NEWTON_LAGRANGIAN)
        return solve_newton_lagrangian(problem, warm_start);
    if (spec.objective == Objective::WLS)
        return spec.solver == SolverKind::LM ? solve_lm(problem, warm_start)
                                             : solve_wls_gn(problem, warm_start);
    if (spec.objective == Objective::SCHWEPPE_HUBER && spec.solver == SolverKind::LM)
        return solve_lm(problem, warm_start);
    return solve_robust(problem, warm_start);
}

} // namespace gridest::est
