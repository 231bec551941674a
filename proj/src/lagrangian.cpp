#include <Eigen/SparseLU>
#include <algorithm>
#include <cmath>
#include <sstream>

#include "solver_core.hpp"

namespace gridest::est {

namespace {

using detail::CompiledMeas;
using detail::JRow;

constexpr double kArmijoC1 = 1e-4;
constexpr double kPrimalTol = 1e-9;
constexpr double kDualReg = 1e-11;

struct BarrierTerms {
    double value = 0.0;
    // gradient and Hessian contributions are appended directly
};

struct NlWorkspace {
    const EstimationProblem& p;
    std::optional<double> vlo, vhi;
    bool param_box = false;

    bool has_bounds() const { return vlo || vhi || param_box; }

    // returns false when x is infeasible
    bool barrier(const StateVector& x, double mu, double* value, Eigen::VectorXd* grad,
                 std::vector<Eigen::Triplet<double>>* hess) const {
        const auto& idx = p.index();
        double f = 0.0;
        for (int t = 0; t < idx.periods; ++t) {
            for (int n = 0; n < idx.n_nodes; ++n) {
                if (!vlo && !vhi) break;
                int ca = idx.col_re(t, n);
                int cb = idx.im_off[n] < 0 ? -1 : idx.col_im(t, n);
                double a = x.x[ca];
                double b = cb < 0 ? 0.0 : x.x[cb];
                double mag = std::hypot(a, b);
                if (mag <= 0) return false;
                double da = a / mag, db = b / mag;
                double haa = (b * b) / (mag * mag * mag);
                double hab = (-a * b) / (mag * mag * mag);
                double hbb = (a * a) / (mag * mag * mag);
                auto add = [&](double glo, double sign) {
                    // sign = +1 for (mag - lo), -1 for (hi - mag)
                    if (glo <= 0) return false;
                    f += -mu * std::log(glo);
                    double c1 = -mu * sign / glo;
                    double c2 = mu / (glo * glo);
                    if (grad) {
                        (*grad)[ca] += c1 * da;
                        if (cb >= 0) (*grad)[cb] += c1 * db;
                    }
                    if (hess) {
                        // c2 * dmag dmag^T + c1 * d2mag
                        hess->emplace_back(ca, ca, c2 * da * da + c1 * haa);
                        if (cb >= 0) {
                            hess->emplace_back(ca, cb, c2 * da * db + c1 * hab);
                            hess->emplace_back(cb, ca, c2 * da * db + c1 * hab);
                            hess->emplace_back(cb, cb, c2 * db * db + c1 * hbb);
                        }
                    }
                    return true;
                };
                if (vlo && !add(mag - *vlo, 1.0)) return false;
                if (vhi && !add(*vhi - mag, -1.0)) return false;
            }
        }
        if (param_box) {
            const auto& vars = p.spec().parameter_variables;
            for (size_t i = 0; i < vars.size(); ++i) {
                int c = idx.col_param(static_cast<int>(i));
                double th = x.x[c];
                double g1 = th - vars[i].lo, g2 = vars[i].hi - th;
                if (g1 <= 0 || g2 <= 0) return false;
                f += -mu * (std::log(g1) + std::log(g2));
                if (grad) (*grad)[c] += -mu / g1 + mu / g2;
                if (hess) hess->emplace_back(c, c, mu / (g1 * g1) + mu / (g2 * g2));
            }
        }
        if (value) *value = f;
        return true;
    }

    void make_feasible(StateVector& x) const {
        const auto& idx = p.index();
        if (vlo || vhi) {
            double lo = vlo.value_or(0.0), hi = vhi.value_or(2.0);
            double margin = 1e-3 * (hi - lo);
            for (int t = 0; t < idx.periods; ++t)
                for (int n = 0; n < idx.n_nodes; ++n) {
                    int ca = idx.col_re(t, n);
                    int cb = idx.im_off[n] < 0 ? -1 : idx.col_im(t, n);
                    double a = x.x[ca], b = cb < 0 ? 0.0 : x.x[cb];
                    double mag = std::hypot(a, b);
                    double target = std::min(std::max(mag, lo + margin), hi - margin);
                    if (target != mag && mag > 0) {
                        x.x[ca] = a * target / mag;
                        if (cb >= 0) x.x[cb] = b * target / mag;
                    }
                }
        }
        if (param_box) {
            const auto& vars = p.spec().parameter_variables;
            for (size_t i = 0; i < vars.size(); ++i) {
                int c = idx.col_param(static_cast<int>(i));
                double margin = 1e-6 * (vars[i].hi - vars[i].lo);
                x.x[c] = std::min(std::max(x.x[c], vars[i].lo + margin), vars[i].hi - margin);
            }
        }
    }
};

} // namespace

EstimationResult solve_newton_lagrangian(const EstimationProblem& p, const StateVector* warm) {
    const auto& spec = p.spec();
    if (spec.objective == Objective::WLAV)
        throw InputError("the Newton-Lagrangian solver supports WLS and Schweppe-Huber objectives");
    const bool huber = spec.objective == Objective::SCHWEPPE_HUBER;
    const double gamma = spec.huber_gamma;
    const int n = p.state_dim();
    const int n_eq = p.equality_count();
    const auto m = static_cast<int>(p.measurements().records.size());
    if (m == 0) throw InputError("estimation problem has no measurements");

    StateVector x = warm ? *warm : p.flat_start();
    if (x.x.size() != n) throw InputError("warm start dimension mismatch");

    NlWorkspace ws{p, {}, {}, false};
    if (spec.bounds) {
        ws.vlo = spec.bounds->vmag_min;
        ws.vhi = spec.bounds->vmag_max;
        ws.param_box = spec.bounds->parameter_box && p.index().n_params > 0;
    }
    if (ws.has_bounds()) {
        ws.make_feasible(x);
        if (!ws.barrier(x, 1.0, nullptr, nullptr, nullptr))
            throw Error("barrier start is infeasible (check vmin/vmax and parameter domains)");
    }

    detail::RowProvider rows(p);

    const auto& sig = p.impl().sigma_eff_pu;
    const auto& eq_index = p.impl().equality_index;

    auto rho = [&](double u) {
        if (!huber || std::abs(u) <= gamma) return u * u;
        return 2.0 * gamma * std::abs(u) - gamma * gamma;
    };
    auto rho_p = [&](double u) {
        if (!huber || std::abs(u) <= gamma) return 2.0 * u;
        return u >= 0 ? 2.0 * gamma : -2.0 * gamma;
    };
    auto rho_pp = [&](double u) {
        if (!huber || std::abs(u) <= gamma) return 2.0;
        return 0.0;
    };

    Eigen::VectorXd lambda = Eigen::VectorXd::Zero(n_eq);
    std::vector<double> mus;
    if (ws.has_bounds())
        mus = {1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8};
    else
        mus = {0.0};

    std::vector<EstimationResult::TraceEntry> trace;
    auto trace_back_step = [&](double s) {
        if (!trace.empty()) trace.back().step_norm = s;
    };
    int iterations = 0, factorizations = 0;
    auto status = EstimationResult::Status::MAX_ITER;
    std::string message;
    double nu = 1.0;
    double delta_last = 0.0;

    Eigen::VectorXd h_pu;
    std::vector<JRow> jrows;

    // f(x) + barrier, for the merit line search
    auto eval_fc = [&](const StateVector& xt, double mu, double* fv, Eigen::VectorXd* c) -> bool {
        Eigen::VectorXd ht;
        detail::evaluate(p, rows.at(detail::theta_of(p, xt)), xt, &ht, nullptr);
        double f = 0.0;
        for (int k = 0; k < m; ++k) {
            if (p.is_equality_row(k)) continue;
            double u = (p.z_pu()[k] - ht[k]) / sig[k];
            f += rho(u);
        }
        double bar = 0.0;
        if (ws.has_bounds() && mu > 0) {
            if (!ws.barrier(xt, mu, &bar, nullptr, nullptr)) return false;
        }
        *fv = f + bar;
        if (c) {
            c->resize(n_eq);
            for (int k = 0; k < m; ++k)
                if (eq_index[k] >= 0) (*c)[eq_index[k]] = ht[k] - p.z_pu()[k];
        }
        return true;
    };

    Eigen::SparseMatrix<double> KKT_final;
    Eigen::SparseLU<Eigen::SparseMatrix<double>> lu_final;
    bool have_final = false;

    for (size_t stage = 0; stage < mus.size(); ++stage) {
        double mu = mus[stage];
        double tol_stage = std::max(spec.tol_grad, mu * 0.1);
        bool stage_done = false;
        status = EstimationResult::Status::MAX_ITER;
        for (int it = 0; it < spec.max_iter && !stage_done; ++it, ++iterations) {
            const auto& cr = rows.at(detail::theta_of(p, x));
            detail::evaluate(p, cr, x, &h_pu, &jrows);

            Eigen::VectorXd c(n_eq);
            Eigen::VectorXd grad = Eigen::VectorXd::Zero(n);
            Eigen::VectorXd w2 = Eigen::VectorXd::Zero(m);      // rho''/sigma^2
            Eigen::VectorXd hfac = Eigen::VectorXd::Zero(m);    // multiplies d2h_k
            double f = 0.0;
            for (int k = 0; k < m; ++k) {
                if (eq_index[k] >= 0) {
                    c[eq_index[k]] = h_pu[k] - p.z_pu()[k];
                    hfac[k] = lambda[eq_index[k]];
                    continue;
                }
                double u = (p.z_pu()[k] - h_pu[k]) / sig[k];
                f += rho(u);
                double gk = -rho_p(u) / sig[k];  // d f / d h_k * dh/dx
                for (const auto& [col, v] : jrows[k]) grad[col] += gk * v;
                w2[k] = rho_pp(u) / (sig[k] * sig[k]);
                hfac[k] = gk;  // -(rho'/sigma) multiplies d2h
            }
            double bar = 0.0;
            std::vector<Eigen::Triplet<double>> hess_trip;
            if (ws.has_bounds() && mu > 0) {
                if (!ws.barrier(x, mu, &bar, &grad, &hess_trip))
                    throw Error("barrier iterate left the feasible region");
                f += bar;
            }

            // dual residual
            Eigen::VectorXd rd = grad;
            for (int k = 0; k < m; ++k)
                if (eq_index[k] >= 0)
                    for (const auto& [col, v] : jrows[k]) rd[col] += lambda[eq_index[k]] * v;
            double dual_inf = rd.cwiseAbs().maxCoeff();
            double primal_inf = n_eq > 0 ? c.cwiseAbs().maxCoeff() : 0.0;
            trace.push_back({iterations, f, 0.0, dual_inf, mu > 0 ? mu : delta_last});
            if (dual_inf < tol_stage && primal_inf < kPrimalTol) {
                stage_done = true;
                status = EstimationResult::Status::CONVERGED;
                break;
            }

            // Hessian of the Lagrangian
            Eigen::SparseMatrix<double> J = detail::build_sparse(m, n, jrows);
            Eigen::SparseMatrix<double> W2J = w2.asDiagonal() * J;
            Eigen::SparseMatrix<double> H = Eigen::SparseMatrix<double>(J.transpose()) * W2J;
            detail::accumulate_hessian(p, cr, x, hfac, hess_trip);
            if (!hess_trip.empty()) {
                Eigen::SparseMatrix<double> H2(n, n);
                H2.setFromTriplets(hess_trip.begin(), hess_trip.end());
                H = H + H2;
            }

            // KKT assembly; lambda columns after the state columns
            const int dim = n + n_eq;
            std::vector<Eigen::Triplet<double>> kkt;
            kkt.reserve(static_cast<size_t>(H.nonZeros()) + jrows.size() * 8 + dim);
            for (int col = 0; col < H.outerSize(); ++col)
                for (Eigen::SparseMatrix<double>::InnerIterator itH(H, col); itH; ++itH)
                    kkt.emplace_back(static_cast<int>(itH.row()), col, itH.value());
            for (int k = 0; k < m; ++k)
                if (eq_index[k] >= 0)
                    for (const auto& [col, v] : jrows[k]) {
                        kkt.emplace_back(col, n + eq_index[k], v);
                        kkt.emplace_back(n + eq_index[k], col, v);
                    }
            for (int e = 0; e < n_eq; ++e) kkt.emplace_back(n + e, n + e, -kDualReg);

            Eigen::VectorXd rhs(dim);
            rhs.head(n) = -rd;
            rhs.tail(n_eq) = -c;

            double delta = delta_last > 0 ? delta_last * 0.1 : 0.0;
            bool solved = false;
            Eigen::VectorXd step;
            for (int attempt = 0; attempt < 16 && !solved; ++attempt) {
                std::vector<Eigen::Triplet<double>> kkt_d = kkt;
                for (int i = 0; i < n; ++i) kkt_d.emplace_back(i, i, delta);
                Eigen::SparseMatrix<double> K(dim, dim);
                K.setFromTriplets(kkt_d.begin(), kkt_d.end());
                Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
                lu.compute(K);
                ++factorizations;
                if (lu.info() == Eigen::Success) {
                    step = lu.solve(rhs);
                    if (step.allFinite()) {
                        // descent check for the merit function
                        Eigen::VectorXd dx = step.head(n);
                        double lam_inf =
                            n_eq > 0 ? (lambda + step.tail(n_eq)).cwiseAbs().maxCoeff() : 0.0;
                        double nu_try = std::max(nu, 1.2 * lam_inf + 0.1);
                        double dphi = grad.dot(dx) - nu_try * c.cwiseAbs().sum();
                        if (dphi < 0 || dx.cwiseAbs().maxCoeff() < spec.tol_step) {
                            solved = true;
                            nu = nu_try;
                            KKT_final = std::move(K);
                            break;
                        }
                    }
                }
                delta = delta == 0.0 ? 1e-8 : delta * 100.0;
            }
            if (!solved) throw Error("KKT factorization failed (inertia repair exhausted)");
            delta_last = delta;

            Eigen::VectorXd dx = step.head(n);
            Eigen::VectorXd dl = step.tail(n_eq);
            double step_inf = dx.cwiseAbs().maxCoeff();
            if (step_inf < spec.tol_step) {
                lambda += dl;
                stage_done = true;
                status = EstimationResult::Status::CONVERGED;
                trace_back_step(step_inf);
                break;
            }

            // merit backtracking
            double phi0 = f + nu * c.cwiseAbs().sum();
            double dphi = grad.dot(dx) - nu * c.cwiseAbs().sum();
            double alpha = 1.0;
            bool ok = false;
            StateVector xt = x;
            while (alpha > 1e-8) {
                xt = x;
                xt.x += alpha * dx;
                double ft;
                Eigen::VectorXd ct;
                if (eval_fc(xt, mu, &ft, &ct)) {
                    double phit = ft + nu * (n_eq ? ct.cwiseAbs().sum() : 0.0);
                    if (phit <= phi0 + kArmijoC1 * alpha * dphi || phit < phi0) {
                        ok = true;
                        break;
                    }
                }
                alpha *= 0.5;
            }
            if (!ok) {
                // merit changes fell below double precision; a tiny Newton
                // step with feasible primal means we are done
                stage_done = true;
                bool at_optimum = step_inf < 1e-7 && primal_inf < kPrimalTol;
                status = at_optimum ? EstimationResult::Status::CONVERGED
                                    : EstimationResult::Status::MAX_ITER;
                if (!at_optimum) message = "merit line search stalled";
                break;
            }
            x = xt;
            lambda += alpha * dl;
            trace_back_step(alpha * step_inf);
        }
        // continue to the next barrier stage regardless of stage outcome
    }

    // final evaluation + KKT factorization for residual statistics
    const auto& cr = rows.at(detail::theta_of(p, x));
    detail::evaluate(p, cr, x, &h_pu, &jrows);
    double f_final = 0.0;
    for (int k = 0; k < m; ++k) {
        if (p.is_equality_row(k)) continue;
        double u = (p.z_pu()[k] - h_pu[k]) / sig[k];
        f_final += rho(u);
    }
    {
        const int dim = n + n_eq;
        Eigen::VectorXd w2 = Eigen::VectorXd::Zero(m);
        for (int k = 0; k < m; ++k) {
            if (eq_index[k] >= 0) continue;
            double u = (p.z_pu()[k] - h_pu[k]) / sig[k];
            w2[k] = rho_pp(u) / (sig[k] * sig[k]);
        }
        Eigen::SparseMatrix<double> J = detail::build_sparse(m, n, jrows);
        Eigen::SparseMatrix<double> W2J = w2.asDiagonal() * J;
        Eigen::SparseMatrix<double> H = Eigen::SparseMatrix<double>(J.transpose()) * W2J;
        std::vector<Eigen::Triplet<double>> kkt;
        for (int col = 0; col < H.outerSize(); ++col)
            for (Eigen::SparseMatrix<double>::InnerIterator itH(H, col); itH; ++itH)
                kkt.emplace_back(static_cast<int>(itH.row()), col, itH.value());
        for (int k = 0; k < m; ++k)
            if (eq_index[k] >= 0)
                for (const auto& [col, v] : jrows[k]) {
                    kkt.emplace_back(col, n + eq_index[k], v);
                    kkt.emplace_back(n + eq_index[k], col, v);
                }
        for (int i = 0; i < n; ++i) kkt.emplace_back(i, i, 1e-12);
        for (int e = 0; e < n_eq; ++e) kkt.emplace_back(n + e, n + e, -kDualReg);
        KKT_final.resize(dim, dim);
        KKT_final.setFromTriplets(kkt.begin(), kkt.end());
        lu_final.compute(KKT_final);
        ++factorizations;
        have_final = lu_final.info() == Eigen::Success;
    }

    std::function<double(const JRow&)> inv_quad;
    if (have_final)
        inv_quad = [&](const JRow& row) {
            Eigen::VectorXd e = Eigen::VectorXd::Zero(n + n_eq);
            for (const auto& [col, v] : row) e[col] += v;
            Eigen::VectorXd y = lu_final.solve(e);
            return e.head(n).dot(y.head(n));
        };

    detail::ResultBuilder rb{p};
    EstimationResult out = rb.build(x, cr, h_pu, jrows, f_final, status, inv_quad);
    out.iterations = iterations;
    out.factorizations = factorizations;
    out.message = message;
    out.trace = std::move(trace);
    out.lagrange_multipliers = lambda;
    if (have_final) out.gain_condition_estimate = detail::condition_estimate(KKT_final, lu_final);
    if (ws.has_bounds()) {
        double mu_last = mus.back();
        const auto& idx = p.index();
        for (int t = 0; t < idx.periods; ++t)
            for (int nn = 0; nn < idx.n_nodes; ++nn) {
                if (!ws.vlo && !ws.vhi) break;
                double a = x.x[idx.col_re(t, nn)];
                double b = idx.im_off[nn] < 0 ? 0.0 : x.x[idx.col_im(t, nn)];
                double mag = std::hypot(a, b);
                std::string label = p.nodes().label(nn) + "@t" + std::to_string(t);
                if (ws.vlo) {
                    double mult = mu_last / std::max(mag - *ws.vlo, 1e-12);
                    if (mult > 1e-3) out.bound_multipliers.emplace_back(label + ":vmin", mult);
                }
                if (ws.vhi) {
                    double mult = mu_last / std::max(*ws.vhi - mag, 1e-12);
                    if (mult > 1e-3) out.bound_multipliers.emplace_back(label + ":vmax", mult);
                }
            }
    }
    return out;
}

} // namespace gridest::est
