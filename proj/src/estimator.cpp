#include "gridest/estimator.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <set>

#include "solver_core.hpp"

namespace gridest::est {

using detail::CompiledMeas;
using detail::JRow;
using telemetry::Source;

std::string to_string(Objective o) {
    switch (o) {
        case Objective::WLS: return "wls";
        case Objective::WLAV: return "wlav";
        case Objective::SCHWEPPE_HUBER: return "huber";
    }
    return "?";
}

std::string to_string(SolverKind s) {
    switch (s) {
        case SolverKind::GN: return "gn";
        case SolverKind::LM: return "lm";
        case SolverKind::NEWTON_LAGRANGIAN: return "newton_lagrangian";
    }
    return "?";
}

EstimationProblem::EstimationProblem(NetworkModel per_unit_model, MeasurementSet set,
                                     EstimationSpec spec)
    : model_(std::move(per_unit_model)), set_(std::move(set)), spec_(std::move(spec)),
      nodes_(model_) {
    if (!model_.per_unit) throw InputError("estimation requires a per-unit model");
    if (set_.period_times.empty()) set_.reindex();

    int T = set_.period_count() > 0 ? set_.period_count() : 1;
    if (spec_.periods > 0 && spec_.periods != T)
        throw InputError("spec requests " + std::to_string(spec_.periods) +
                         " periods but the measurement set spans " + std::to_string(T));

    for (const auto& v : spec_.parameter_variables) {
        if (v.discrete())
            throw InputError("parameter variable " + v.label() +
                             " is discrete; discrete domains are searched, not augmented");
        if (!(v.lo < v.hi)) throw InputError("parameter variable " + v.label() + ": empty interval");
        if (v.initial < v.lo || v.initial > v.hi)
            throw InputError("parameter variable " + v.label() + ": initial value outside domain");
        if (v.kind == net::ParameterKind::IMPEDANCE_SCALE && !(v.lo > 0))
            throw InputError("parameter variable " + v.label() + ": scale domain must be positive");
    }

    // state layout
    sidx_.n_nodes = nodes_.count();
    sidx_.periods = T;
    sidx_.n_params = static_cast<int>(spec_.parameter_variables.size());
    sidx_.re_off.resize(sidx_.n_nodes);
    sidx_.im_off.resize(sidx_.n_nodes);
    std::set<int> refs(nodes_.reference_nodes().begin(), nodes_.reference_nodes().end());
    int off = 0;
    for (int n = 0; n < sidx_.n_nodes; ++n) {
        sidx_.re_off[n] = off++;
        sidx_.im_off[n] = refs.count(n) ? -1 : off++;
    }
    sidx_.per_period = off;

    // record bookkeeping
    record_period_.resize(set_.records.size());
    equality_row_.assign(set_.records.size(), 0);
    impl_ = std::make_shared<Impl>();
    impl_->equality_index.assign(set_.records.size(), -1);
    std::vector<int> per_period_count(T, 0);
    for (size_t k = 0; k < set_.records.size(); ++k) {
        const auto& r = set_.records[k];
        int t = set_.period_of(r.timestamp);
        if (t < 0) throw InputError("record timestamp missing from the period index");
        record_period_[k] = t;
        ++per_period_count[t];
        if (r.source == Source::VIRTUAL && spec_.zero_injection == ZeroInjectionMode::EQUALITY) {
            equality_row_[k] = 1;
            impl_->equality_index[k] = n_equality_++;
        }
    }
    if (!set_.records.empty())
        for (int t = 0; t < T; ++t)
            if (per_period_count[t] == 0)
                throw InputError("period " + std::to_string(t) + " has no measurements");

    // compile at the initial parameter values and derive per-unit scaling
    impl_->base_theta.resize(sidx_.n_params);
    for (int pvar = 0; pvar < sidx_.n_params; ++pvar)
        impl_->base_theta[pvar] = spec_.parameter_variables[pvar].initial;
    impl_->base_rows = detail::compile_rows(*this, impl_->base_theta);

    const size_t m = set_.records.size();
    z_pu_.resize(m);
    sigma_pu_.resize(m);
    si_scale_.resize(m);
    impl_->weights.resize(m);
    impl_->sigma_eff_pu.resize(m);
    for (size_t k = 0; k < m; ++k) {
        const auto& r = set_.records[k];
        double scale = impl_->base_rows[k].si_scale;
        si_scale_[k] = scale;
        z_pu_[k] = r.value / scale;
        sigma_pu_[k] = r.sigma / scale;
        if (equality_row_[k]) {
            impl_->weights[k] = 0.0;
            impl_->sigma_eff_pu[k] = 0.0;
        } else if (r.source == Source::VIRTUAL) {
            // high-weight mode
            impl_->weights[k] = spec_.zero_injection_weight;
            impl_->sigma_eff_pu[k] = 1.0 / std::sqrt(spec_.zero_injection_weight);
        } else {
            if (!(sigma_pu_[k] > 0))
                throw InputError("record " + std::to_string(k) + " has non-positive sigma");
            impl_->weights[k] = 1.0 / (sigma_pu_[k] * sigma_pu_[k]);
            impl_->sigma_eff_pu[k] = sigma_pu_[k];
        }
    }
}

StateVector EstimationProblem::flat_start() const {
    StateVector s;
    s.periods = sidx_.periods;
    s.per_period = sidx_.per_period;
    s.n_params = sidx_.n_params;
    s.x = Eigen::VectorXd::Zero(sidx_.total());
    for (int t = 0; t < sidx_.periods; ++t)
        for (int n = 0; n < sidx_.n_nodes; ++n) {
            double mag = std::abs(spec_.ref_voltage[static_cast<int>(nodes_.node(n).second)]);
            s.x[sidx_.col_re(t, n)] = mag > 0 ? mag : 1.0;
        }
    for (int pvar = 0; pvar < sidx_.n_params; ++pvar)
        s.x[sidx_.col_param(pvar)] = spec_.parameter_variables[pvar].initial;
    return s;
}

StateVector EstimationProblem::from_parameter_values(const std::vector<double>& params) const {
    StateVector s = flat_start();
    if (static_cast<int>(params.size()) != sidx_.n_params)
        throw InputError("parameter value count mismatch");
    for (int pvar = 0; pvar < sidx_.n_params; ++pvar) s.x[sidx_.col_param(pvar)] = params[pvar];
    return s;
}

Eigen::VectorXcd EstimationProblem::period_voltages(const StateVector& state, int period) const {
    Eigen::VectorXcd z = detail::z_period(*this, state, period);
    Eigen::VectorXcd rot(nodes_.count());
    for (int n = 0; n < nodes_.count(); ++n) {
        Complex r = spec_.ref_voltage[static_cast<int>(nodes_.node(n).second)];
        rot[n] = std::polar(1.0, std::abs(r) > 0 ? std::arg(r) : 0.0);
    }
    return rot.cwiseProduct(z);
}

Eigen::VectorXd EstimationProblem::values_pu(const StateVector& state) const {
    Eigen::VectorXd h;
    auto theta = detail::theta_of(*this, state);
    if (theta == impl_->base_theta) {
        detail::evaluate(*this, impl_->base_rows, state, &h, nullptr);
    } else {
        auto rows = detail::compile_rows(*this, theta);
        detail::evaluate(*this, rows, state, &h, nullptr);
    }
    return h;
}

Eigen::VectorXd EstimationProblem::values(const StateVector& state) const {
    return values_pu(state).cwiseProduct(si_scale_);
}

Eigen::SparseMatrix<double> EstimationProblem::jacobian(const StateVector& state) const {
    Eigen::VectorXd h;
    std::vector<JRow> jrows;
    auto theta = detail::theta_of(*this, state);
    if (theta == impl_->base_theta) {
        detail::evaluate(*this, impl_->base_rows, state, &h, &jrows);
    } else {
        auto rows = detail::compile_rows(*this, theta);
        detail::evaluate(*this, rows, state, &h, &jrows);
    }
    return detail::build_sparse(static_cast<int>(set_.records.size()), sidx_.total(), jrows);
}

double measurement_function(const NetworkModel& per_unit_model, const NodeMap& nodes,
                            const Eigen::VectorXcd& voltages, const Measurement& record) {
    detail::Compiler compiler(per_unit_model, nodes, pf::nominal_reference(), {}, {});
    CompiledMeas cm = compiler.compile(record);
    Eigen::VectorXcd z = compiler.rotation().conjugate().cwiseProduct(voltages);
    return detail::eval_value(cm, z) * cm.si_scale;
}

// --- shared detail ---------------------------------------------------------

namespace detail {

std::vector<CompiledMeas> compile_rows(const EstimationProblem& p,
                                       const std::vector<double>& theta) {
    const auto& vars = p.spec().parameter_variables;
    net::ParameterAssignment overrides;
    for (size_t i = 0; i < vars.size(); ++i)
        overrides.push_back({vars[i].element, vars[i].kind, theta[i]});
    NetworkModel current =
        overrides.empty() ? p.model() : net::apply_parameter_overrides(p.model(), overrides);
    Compiler compiler(current, p.nodes(), p.spec().ref_voltage, vars, theta);
    std::vector<CompiledMeas> rows(p.measurements().records.size());
    const auto& records = p.measurements().records;
    int threads = parallel::max_threads();
#pragma omp parallel for schedule(static) num_threads(threads) if (threads > 1 && records.size() > 256)
    for (std::int64_t k = 0; k < static_cast<std::int64_t>(records.size()); ++k)
        rows[k] = compiler.compile(records[k]);
    return rows;
}

Eigen::VectorXcd z_period(const EstimationProblem& p, const StateVector& x, int t) {
    const auto& idx = p.index();
    Eigen::VectorXcd z(idx.n_nodes);
    for (int n = 0; n < idx.n_nodes; ++n) {
        double a = x.x[idx.col_re(t, n)];
        double b = idx.im_off[n] < 0 ? 0.0 : x.x[idx.col_im(t, n)];
        z[n] = Complex(a, b);
    }
    return z;
}

std::vector<Eigen::VectorXcd> z_all(const EstimationProblem& p, const StateVector& x) {
    std::vector<Eigen::VectorXcd> zs(p.periods());
    for (int t = 0; t < p.periods(); ++t) zs[t] = z_period(p, x, t);
    return zs;
}

void evaluate(const EstimationProblem& p, const std::vector<CompiledMeas>& rows,
              const StateVector& x, Eigen::VectorXd* h_pu, std::vector<JRow>* jrows) {
    const auto zs = z_all(p, x);
    const auto& idx = p.index();
    const auto m = static_cast<std::int64_t>(rows.size());
    if (h_pu) h_pu->resize(m);
    if (jrows) {
        jrows->clear();
        jrows->resize(m);
    }
    int threads = parallel::max_threads();
#pragma omp parallel num_threads(threads) if (threads > 1 && m > 256)
    {
        std::vector<NodeGrad> grads;
#pragma omp for schedule(static)
        for (std::int64_t k = 0; k < m; ++k) {
            int t = p.record_period(k);
            const auto& z = zs[t];
            if (h_pu) (*h_pu)[k] = eval_value(rows[k], z);
            if (jrows) {
                auto& out = (*jrows)[k];
                eval_gradient(rows[k], z, grads);
                out.reserve(grads.size() * 2 + rows[k].sens.size());
                for (const auto& g : grads) {
                    out.emplace_back(idx.col_re(t, g.node), g.da);
                    if (idx.im_off[g.node] >= 0) out.emplace_back(idx.col_im(t, g.node), g.db);
                }
                for (const auto& s : rows[k].sens)
                    out.emplace_back(idx.col_param(s.param), eval_param_deriv(rows[k], s, z));
            }
        }
    }
}

void accumulate_hessian(const EstimationProblem& p, const std::vector<CompiledMeas>& rows,
                        const StateVector& x, const Eigen::VectorXd& factors,
                        std::vector<Eigen::Triplet<double>>& out) {
    const auto zs = z_all(p, x);
    const auto& idx = p.index();
    std::vector<HessEntry> entries;
    for (size_t k = 0; k < rows.size(); ++k) {
        if (factors[k] == 0.0) continue;
        entries.clear();
        eval_hessian(rows[k], zs[p.record_period(k)], factors[k], entries);
        int t = p.record_period(k);
        for (const auto& e : entries) {
            int ci = e.comp_i == 0 ? idx.col_re(t, e.node_i)
                                   : (idx.im_off[e.node_i] < 0 ? -1 : idx.col_im(t, e.node_i));
            int cj = e.comp_j == 0 ? idx.col_re(t, e.node_j)
                                   : (idx.im_off[e.node_j] < 0 ? -1 : idx.col_im(t, e.node_j));
            if (ci < 0 || cj < 0) continue;
            out.emplace_back(ci, cj, e.v);
        }
    }
}

Eigen::SparseMatrix<double> build_sparse(int rows, int cols, const std::vector<JRow>& jrows) {
    std::vector<Eigen::Triplet<double>> trip;
    size_t nnz = 0;
    for (const auto& r : jrows) nnz += r.size();
    trip.reserve(nnz);
    for (size_t k = 0; k < jrows.size(); ++k)
        for (const auto& [col, val] : jrows[k])
            trip.emplace_back(static_cast<int>(k), col, val);
    Eigen::SparseMatrix<double> J(rows, cols);
    J.setFromTriplets(trip.begin(), trip.end());
    return J;
}

std::vector<double> theta_of(const EstimationProblem& p, const StateVector& x) {
    std::vector<double> theta(p.index().n_params);
    for (int i = 0; i < p.index().n_params; ++i) theta[i] = x.x[p.index().col_param(i)];
    return theta;
}

EstimationResult ResultBuilder::build(const StateVector& x, const std::vector<CompiledMeas>& rows,
                                      const Eigen::VectorXd& h_pu, const std::vector<JRow>& jrows,
                                      double objective, EstimationResult::Status status,
                                      const std::function<double(const JRow&)>& inv_quad) const {
    EstimationResult res;
    res.status = status;
    res.state = x;
    res.objective = objective;
    res.state_dim = p.state_dim();
    res.measurement_count = static_cast<int>(p.measurements().records.size());
    res.redundancy = p.redundancy();
    res.parameters = p.spec().parameter_variables;
    auto theta = theta_of(p, x);
    res.parameter_estimates.assign(theta.begin(), theta.end());
    for (int t = 0; t < p.periods(); ++t) res.voltages.push_back(p.period_voltages(x, t));

    const auto m = static_cast<int>(rows.size());
    res.estimates = h_pu.cwiseProduct(p.si_scale());
    res.residuals.resize(m);
    res.normalized_residuals = Eigen::VectorXd::Zero(m);
    res.is_equality.resize(m);
    res.is_critical.assign(m, 0);
    for (int k = 0; k < m; ++k) {
        res.residuals[k] = p.measurements().records[k].value - res.estimates[k];
        res.is_equality[k] = p.is_equality_row(k) ? 1 : 0;
    }
    if (inv_quad && p.spec().compute_normalized_residuals) {
        const auto& sig = p.impl().sigma_eff_pu;
        std::vector<double> omega(m, 0.0);
        int threads = parallel::max_threads();
#pragma omp parallel for schedule(dynamic, 16) num_threads(threads) if (threads > 1 && m > 64)
        for (int k = 0; k < m; ++k) {
            if (p.is_equality_row(k)) continue;
            double q = inv_quad(jrows[k]);
            omega[k] = sig[k] * sig[k] - q;
        }
        for (int k = 0; k < m; ++k) {
            if (p.is_equality_row(k)) continue;
            double s2 = sig[k] * sig[k];
            if (omega[k] <= std::max(1e-14, 1e-6 * s2)) {
                res.is_critical[k] = 1;  // residual covariance ~ 0
            } else {
                double r_pu = p.z_pu()[k] - h_pu[k];
                res.normalized_residuals[k] = std::abs(r_pu) / std::sqrt(omega[k]);
            }
        }
    }
    return res;
}

} // namespace detail

} // namespace gridest::est
