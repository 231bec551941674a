#include "gridest/diagnostics.hpp"

#include <algorithm>
#include <boost/math/distributions/chi_squared.hpp>
#include <cmath>
#include <set>

#include "solver_core.hpp"

namespace gridest::diag {

using est::EstimationSpec;
using est::StateVector;
using telemetry::MeasKind;
using telemetry::MeasPhase;
using telemetry::Measurement;
using telemetry::MeasurementSet;
using telemetry::Source;

std::vector<std::string> state_labels(const EstimationProblem& problem) {
    const auto& idx = problem.index();
    const auto& nodes = problem.nodes();
    std::vector<std::string> labels(idx.total());
    for (int t = 0; t < idx.periods; ++t)
        for (int n = 0; n < idx.n_nodes; ++n) {
            labels[idx.col_re(t, n)] = nodes.label(n) + ".re@t" + std::to_string(t);
            if (idx.im_off[n] >= 0)
                labels[idx.col_im(t, n)] = nodes.label(n) + ".im@t" + std::to_string(t);
        }
    for (int p = 0; p < idx.n_params; ++p)
        labels[idx.col_param(p)] = problem.spec().parameter_variables[p].label();
    return labels;
}

namespace {

/// measurement records materialized from a plan; values are placeholders,
/// only the Jacobian structure matters for observability
MeasurementSet plan_records(const net::NetworkModel& model, const pf::MeasurementPlan& plan) {
    MeasurementSet set;
    for (const auto& e : plan.entries) {
        Measurement m;
        m.timestamp = 0;
        m.element = e.element;
        m.kind = e.kind;
        m.phase = e.phase;
        m.value = 0.0;
        m.sigma = e.source == Source::VIRTUAL ? 0.0 : 1.0;
        m.source = e.source;
        set.records.push_back(m);
    }
    if (plan.virtual_zero_injections) {
        for (const auto& bus_id : net::zero_injection_buses(model)) {
            const net::Bus* b = model.find_bus(bus_id);
            for (net::Phase p : b->phases) {
                Measurement m;
                m.timestamp = 0;
                m.element = bus_id;
                m.phase = static_cast<MeasPhase>(p);
                m.source = Source::VIRTUAL;
                m.kind = MeasKind::P_INJ;
                set.records.push_back(m);
                m.kind = MeasKind::Q_INJ;
                set.records.push_back(m);
            }
        }
    }
    set.reindex();
    return set;
}

ObservabilityReport analyze(const EstimationProblem& problem) {
    ObservabilityReport rep;
    rep.labels = state_labels(problem);
    rep.state_dim = problem.state_dim();

    StateVector flat = problem.flat_start();
    Eigen::SparseMatrix<double> H = problem.jacobian(flat);
    // weights do not change the rank; the unweighted gain keeps the
    // eigenvalue threshold meaningful
    Eigen::MatrixXd G = (Eigen::SparseMatrix<double>(H.transpose()) * H).toDense();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(G);
    const auto& ev = es.eigenvalues();
    double emax = ev.size() ? std::max(ev.cwiseAbs().maxCoeff(), 0.0) : 0.0;
    double threshold = std::max(emax, 1.0) * 1e-10;
    int n = rep.state_dim;
    int deficiency = 0;
    for (int i = 0; i < n; ++i)
        if (ev[i] <= threshold) ++deficiency;
    rep.deficiency = deficiency;
    rep.rank = n - deficiency;
    rep.null_basis = es.eigenvectors().leftCols(deficiency);
    rep.observable.assign(n, 1);
    for (int d = 0; d < deficiency; ++d) {
        Eigen::VectorXd v = rep.null_basis.col(d).cwiseAbs();
        double vmax = v.maxCoeff();
        std::vector<std::pair<std::string, double>> dom;
        for (int i = 0; i < n; ++i) {
            if (v[i] > 1e-6) rep.observable[i] = 0;
            if (v[i] >= 0.3 * vmax) dom.emplace_back(rep.labels[i], rep.null_basis(i, d));
        }
        std::sort(dom.begin(), dom.end(), [](const auto& a, const auto& b) {
            return std::abs(a.second) > std::abs(b.second);
        });
        if (dom.size() > 8) dom.resize(8);
        rep.dominant_states.push_back(std::move(dom));
    }
    return rep;
}

} // namespace

ObservabilityReport observability(const EstimationProblem& problem) { return analyze(problem); }

ObservabilityReport observability(const net::NetworkModel& per_unit_model,
                                  const pf::MeasurementPlan& plan) {
    EstimationSpec spec;
    spec.zero_injection = est::ZeroInjectionMode::HIGH_WEIGHT;
    spec.zero_injection_weight = 1.0;
    EstimationProblem problem(per_unit_model, plan_records(per_unit_model, plan), spec);
    return analyze(problem);
}

ObservabilityReport observability(const net::NetworkModel& per_unit_model,
                                  const telemetry::MeasurementSet& set) {
    EstimationSpec spec;
    spec.zero_injection = est::ZeroInjectionMode::HIGH_WEIGHT;
    spec.zero_injection_weight = 1.0;
    EstimationProblem problem(per_unit_model, set, spec);
    return analyze(problem);
}

// --- bad data ---------------------------------------------------------------

namespace {
constexpr double kIdentificationThreshold = 3.0;  // sigma units, textbook LNR
}

BadDataReport detect_bad_data(const EstimationProblem& problem, const EstimationResult& result,
                              double confidence) {
    BadDataReport rep;
    rep.confidence = confidence;
    rep.dof = problem.redundancy();
    rep.normalized_residuals = result.normalized_residuals;
    rep.critical.assign(result.is_critical.begin(), result.is_critical.end());
    rep.chi2_statistic = result.objective;
    if (rep.dof < 1) {
        rep.chi2_threshold = 0.0;
        rep.chi2_pass_initial = false;
        rep.resolved = false;
        rep.final_objective = result.objective;
        rep.final_dof = rep.dof;
        return rep;
    }
    boost::math::chi_squared chi2(rep.dof);
    rep.chi2_threshold = boost::math::quantile(chi2, confidence);
    rep.chi2_pass_initial = result.objective <= rep.chi2_threshold;

    rep.final_objective = result.objective;
    rep.final_dof = rep.dof;
    if (rep.chi2_pass_initial) {
        rep.resolved = true;
        return rep;
    }

    // iterative removal on a shrinking copy of the measurement set; original
    // record indices are tracked for the report
    MeasurementSet current = problem.measurements();
    std::vector<std::size_t> original_index(current.records.size());
    for (std::size_t i = 0; i < original_index.size(); ++i) original_index[i] = i;

    EstimationResult cur_res = result;
    int dof = rep.dof;
    while (true) {
        // pick the largest normalized residual among removable rows
        int pick = -1;
        double best = kIdentificationThreshold;
        for (int k = 0; k < cur_res.normalized_residuals.size(); ++k) {
            if (cur_res.is_equality[k] || cur_res.is_critical[k]) continue;
            if (current.records[k].source == Source::VIRTUAL) continue;
            if (cur_res.normalized_residuals[k] > best) {
                best = cur_res.normalized_residuals[k];
                pick = k;
            }
        }
        if (pick < 0) {
            rep.resolved = false;  // suspicion cannot be pinned on a record
            break;
        }
        if (dof - 1 < 1) {
            rep.resolved = false;  // redundancy floor reached
            break;
        }

        BadDataReport::Removal rem;
        rem.record_index = original_index[pick];
        rem.element = current.records[pick].element;
        rem.kind = telemetry::to_string(current.records[pick].kind);
        rem.phase = telemetry::to_string(current.records[pick].phase);
        rem.timestamp = current.records[pick].timestamp;
        rem.normalized_residual = best;

        current.records.erase(current.records.begin() + pick);
        original_index.erase(original_index.begin() + pick);
        current.reindex();

        EstimationProblem sub(problem.model(), current, problem.spec());
        cur_res = est::solve(sub, nullptr);
        dof = sub.redundancy();
        boost::math::chi_squared c2(std::max(dof, 1));
        double thr = boost::math::quantile(c2, confidence);
        rem.objective_after = cur_res.objective;
        rem.threshold_after = thr;
        rem.chi2_pass_after = cur_res.objective <= thr;
        rep.removals.push_back(rem);
        rep.final_objective = cur_res.objective;
        rep.final_dof = dof;
        if (rem.chi2_pass_after) {
            rep.resolved = true;
            break;
        }
    }
    if (!rep.removals.empty() || rep.resolved) rep.final_result = cur_res;
    return rep;
}

// --- uncertainty -------------------------------------------------------------

namespace {

Eigen::MatrixXd dense_state_covariance(const EstimationProblem& problem,
                                       const EstimationResult& result) {
    const int n = problem.state_dim();
    Eigen::SparseMatrix<double> J = problem.jacobian(result.state);
    const auto& w = problem.impl().weights;
    Eigen::SparseMatrix<double> WJ = w.asDiagonal() * J;
    Eigen::MatrixXd G = (Eigen::SparseMatrix<double>(J.transpose()) * WJ).toDense();

    const int n_eq = problem.equality_count();
    if (n_eq == 0) {
        Eigen::LDLT<Eigen::MatrixXd> ldlt(G);
        if (ldlt.info() != Eigen::Success || !ldlt.isPositive() ||
            ldlt.vectorD().minCoeff() <= ldlt.vectorD().maxCoeff() * 1e-12)
            throw UnobservableError(
                "gain matrix is rank deficient; run the observability analysis", -1);
        return ldlt.solve(Eigen::MatrixXd::Identity(n, n));
    }
    // bordered system: covariance of x is the upper-left block of the
    // inverse KKT matrix
    Eigen::MatrixXd K = Eigen::MatrixXd::Zero(n + n_eq, n + n_eq);
    K.topLeftCorner(n, n) = G;
    for (int k = 0; k < static_cast<int>(problem.measurements().records.size()); ++k) {
        int e = problem.impl().equality_index[k];
        if (e < 0) continue;
        Eigen::SparseVector<double> row = J.row(k);
        for (Eigen::SparseVector<double>::InnerIterator it(row); it; ++it) {
            K(it.index(), n + e) = it.value();
            K(n + e, it.index()) = it.value();
        }
    }
    Eigen::FullPivLU<Eigen::MatrixXd> lu(K);
    if (!lu.isInvertible())
        throw UnobservableError(
            "constrained gain matrix is rank deficient; run the observability analysis", -1);
    Eigen::MatrixXd Kinv = lu.inverse();
    return Kinv.topLeftCorner(n, n);
}

} // namespace

Eigen::VectorXd estimation_uncertainty(const EstimationProblem& problem,
                                       const EstimationResult& result) {
    Eigen::MatrixXd cov = dense_state_covariance(problem, result);
    return cov.diagonal().cwiseMax(0.0).cwiseSqrt();
}

// --- placement --------------------------------------------------------------

PlacementReport place_sensors(const net::NetworkModel& per_unit_model,
                              const pf::MeasurementPlan& base_plan,
                              const std::vector<pf::PlanEntry>& candidate_sites, int k) {
    if (candidate_sites.empty() && k > 0) throw InputError("no candidate sites given");

    // linearize at the model's own power flow solution
    pf::PowerFlowSolution sol = pf::solve_pf(per_unit_model);
    std::vector<pf::PowerFlowSolution> sols{sol};
    pf::MeasurementPlan plan = base_plan;
    auto sim = pf::simulate_measurements(per_unit_model, sols, plan, std::nullopt, 0);

    EstimationSpec spec;
    spec.zero_injection = est::ZeroInjectionMode::HIGH_WEIGHT;
    EstimationProblem problem(per_unit_model, sim.training, spec);

    // state at the solution
    StateVector x = problem.flat_start();
    {
        const auto& idx = problem.index();
        Eigen::VectorXcd rot(problem.nodes().count());
        for (int n = 0; n < problem.nodes().count(); ++n) {
            Complex r = spec.ref_voltage[static_cast<int>(problem.nodes().node(n).second)];
            rot[n] = std::polar(1.0, std::abs(r) > 0 ? std::arg(r) : 0.0);
        }
        for (int n = 0; n < idx.n_nodes; ++n) {
            Complex z = sol.voltages[n] * std::conj(rot[n]);
            x.x[idx.col_re(0, n)] = z.real();
            if (idx.im_off[n] >= 0) x.x[idx.col_im(0, n)] = z.imag();
        }
    }

    EstimationResult pseudo_result;
    pseudo_result.state = x;
    Eigen::MatrixXd cov = dense_state_covariance(problem, pseudo_result);

    PlacementReport rep;
    rep.base_max_variance = cov.diagonal().maxCoeff();

    // candidate rows and sigmas
    const auto& nodes = problem.nodes();
    const int n = problem.state_dim();
    struct Cand {
        std::string label;
        Eigen::VectorXd row;  // pu Jacobian row
        double sigma_pu;
    };
    std::vector<Cand> cands;
    {
        est::detail::Compiler compiler(per_unit_model, nodes, spec.ref_voltage, {}, {});
        Eigen::VectorXcd z = compiler.rotation().conjugate().cwiseProduct(sol.voltages);
        for (const auto& e : candidate_sites) {
            Measurement m;
            m.element = e.element;
            m.kind = e.kind;
            m.phase = e.phase;
            auto cm = compiler.compile(m);
            double value = est::detail::eval_value(cm, z) * cm.si_scale;
            double floor = e.sigma_floor > 0 ? e.sigma_floor : pf::default_sigma_floor(e.kind);
            double sigma = std::max(floor, e.sigma_rel * std::abs(value));
            std::vector<est::detail::NodeGrad> grads;
            est::detail::eval_gradient(cm, z, grads);
            Cand c;
            c.label = e.element + "/" + telemetry::to_string(e.kind) + "/" +
                      telemetry::to_string(e.phase);
            c.row = Eigen::VectorXd::Zero(n);
            const auto& idx = problem.index();
            for (const auto& g : grads) {
                c.row[idx.col_re(0, g.node)] += g.da;
                if (idx.im_off[g.node] >= 0) c.row[idx.col_im(0, g.node)] += g.db;
            }
            c.sigma_pu = sigma / cm.si_scale;
            cands.push_back(std::move(c));
        }
    }
    for (const auto& c : cands) rep.candidate_sites.push_back(c.label);

    std::set<std::size_t> used;
    for (int round = 0; round < k; ++round) {
        double before = cov.diagonal().maxCoeff();
        struct Trial {
            double max_var = std::numeric_limits<double>::infinity();
            double total_red = -1.0;
            Eigen::VectorXd phi;
            double denom = 1.0;
        };
        std::vector<Trial> trials(cands.size());
        int threads = parallel::max_threads();
#pragma omp parallel for schedule(static) num_threads(threads) if (threads > 1 && cands.size() > 8)
        for (std::int64_t c = 0; c < static_cast<std::int64_t>(cands.size()); ++c) {
            if (used.count(c)) continue;
            Eigen::VectorXd phi = cov * cands[c].row;
            double denom = cands[c].sigma_pu * cands[c].sigma_pu + cands[c].row.dot(phi);
            if (denom <= 0) continue;
            Eigen::VectorXd diag_red = phi.cwiseProduct(phi) / denom;
            trials[c].max_var = (cov.diagonal() - diag_red).maxCoeff();
            trials[c].total_red = diag_red.sum();
            trials[c].phi = std::move(phi);
            trials[c].denom = denom;
        }
        int pick = -1;
        bool tie = false;
        for (std::size_t c = 0; c < cands.size(); ++c) {
            if (used.count(c) || !std::isfinite(trials[c].max_var)) continue;
            if (pick < 0) {
                pick = static_cast<int>(c);
                continue;
            }
            double scale = std::max(1e-300, std::abs(trials[pick].max_var));
            double d = trials[c].max_var - trials[pick].max_var;
            if (d < -1e-12 * scale) {
                pick = static_cast<int>(c);
                tie = false;
            } else if (std::abs(d) <= 1e-12 * scale) {
                tie = true;
                double dr = trials[c].total_red - trials[pick].total_red;
                if (dr > 1e-12 * std::max(1.0, trials[pick].total_red)) {
                    pick = static_cast<int>(c);
                } else if (std::abs(dr) <= 1e-12 * std::max(1.0, trials[pick].total_red) &&
                           cands[c].label < cands[pick].label) {
                    pick = static_cast<int>(c);
                }
            }
        }
        if (pick < 0) break;
        used.insert(pick);
        cov -= trials[pick].phi * trials[pick].phi.transpose() / trials[pick].denom;
        rep.steps.push_back({static_cast<std::size_t>(pick), cands[pick].label, before,
                             trials[pick].max_var, trials[pick].total_red, tie});
    }
    return rep;
}

} // namespace gridest::diag
