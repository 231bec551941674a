#include "gridest/paramest.hpp"

#include <Eigen/SparseLU>
#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include "solver_core.hpp"

namespace gridest::pe {

using est::EstimationProblem;
using est::StateVector;
using net::ParameterKind;
using telemetry::MeasKind;
using telemetry::MeasPhase;
using telemetry::Source;

namespace {

constexpr double kTieRelTol = 1e-9;
constexpr double kPreselectMargin = 0.05;
constexpr int kExhaustiveLimit = 256;

std::string element_base(const std::string& element) {
    auto pos = element.find(':');
    return pos == std::string::npos ? element : element.substr(0, pos);
}

net::ParameterAssignment to_overrides(const std::vector<ParameterVariable>& vars,
                                      const std::vector<double>& values) {
    net::ParameterAssignment ov;
    for (size_t i = 0; i < vars.size(); ++i) ov.push_back({vars[i].element, vars[i].kind, values[i]});
    return ov;
}

EstimationSpec plain_spec(const EstimationSpec& spec, bool normalized_residuals) {
    EstimationSpec s = spec;
    s.parameter_variables.clear();
    s.compute_normalized_residuals = normalized_residuals;
    return s;
}

} // namespace

// --- continuous -------------------------------------------------------------

ContinuousReport estimate_continuous(const NetworkModel& per_unit_model, const MeasurementSet& set,
                                     const std::vector<ParameterVariable>& vars,
                                     const EstimationSpec& spec) {
    for (const auto& v : vars)
        if (v.discrete())
            throw InputError("estimate_continuous: variable " + v.label() + " has a discrete domain");
    EstimationSpec s = spec;
    s.parameter_variables = vars;
    EstimationProblem problem(per_unit_model, set, s);

    // identifiability: a parameter with a (numerically) zero Jacobian column
    // cannot be estimated
    {
        StateVector flat = problem.flat_start();
        Eigen::SparseMatrix<double> J = problem.jacobian(flat);
        for (size_t i = 0; i < vars.size(); ++i) {
            double norm = J.col(problem.index().col_param(static_cast<int>(i))).norm();
            if (norm < 1e-10)
                throw Error("parameter " + vars[i].label() +
                            " is unidentifiable (zero sensitivity in the measurement set)");
        }
    }

    ContinuousReport rep;
    rep.result = est::solve(problem, nullptr);
    rep.variables = vars;
    rep.estimates = rep.result.parameter_estimates;

    // parameter covariance: param block of the inverse (bordered) gain
    {
        const int n = problem.state_dim();
        const int n_eq = problem.equality_count();
        Eigen::SparseMatrix<double> J = problem.jacobian(rep.result.state);
        const auto& w = problem.impl().weights;
        Eigen::SparseMatrix<double> WJ = w.asDiagonal() * J;
        Eigen::SparseMatrix<double> G = Eigen::SparseMatrix<double>(J.transpose()) * WJ;
        std::vector<Eigen::Triplet<double>> trip;
        for (int col = 0; col < G.outerSize(); ++col)
            for (Eigen::SparseMatrix<double>::InnerIterator it(G, col); it; ++it)
                trip.emplace_back(static_cast<int>(it.row()), col, it.value());
        const auto& eqi = problem.impl().equality_index;
        for (int k = 0; k < static_cast<int>(set.records.size()); ++k) {
            if (eqi[k] < 0) continue;
            // equality rows border the gain
            Eigen::SparseVector<double> row = J.row(k);
            for (Eigen::SparseVector<double>::InnerIterator it(row); it; ++it) {
                trip.emplace_back(it.index(), n + eqi[k], it.value());
                trip.emplace_back(n + eqi[k], it.index(), it.value());
            }
        }
        for (int e = 0; e < n_eq; ++e) trip.emplace_back(n + e, n + e, -1e-12);
        Eigen::SparseMatrix<double> K(n + n_eq, n + n_eq);
        K.setFromTriplets(trip.begin(), trip.end());
        Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
        lu.compute(K);
        if (lu.info() == Eigen::Success) {
            for (size_t i = 0; i < vars.size(); ++i) {
                Eigen::VectorXd e = Eigen::VectorXd::Zero(n + n_eq);
                int c = problem.index().col_param(static_cast<int>(i));
                e[c] = 1.0;
                Eigen::VectorXd y = lu.solve(e);
                double var = std::max(y[c], 0.0);
                double half = 1.959963984540054 * std::sqrt(var);
                rep.ci95.emplace_back(rep.estimates[i] - half, rep.estimates[i] + half);
            }
        } else {
            for (size_t i = 0; i < vars.size(); ++i)
                rep.ci95.emplace_back(rep.estimates[i], rep.estimates[i]);
        }
    }
    return rep;
}

// --- discrete ---------------------------------------------------------------

namespace {

struct SeriesKey {
    std::string element;
    int phase;
    bool operator<(const SeriesKey& o) const {
        return std::tie(element, phase) < std::tie(o.element, o.phase);
    }
};

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
    size_t n = std::min(a.size(), b.size());
    if (n < 3) return 0.0;
    double ma = 0, mb = 0;
    for (size_t i = 0; i < n; ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= n;
    mb /= n;
    double sab = 0, sa = 0, sb = 0;
    for (size_t i = 0; i < n; ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        sa += (a[i] - ma) * (a[i] - ma);
        sb += (b[i] - mb) * (b[i] - mb);
    }
    if (sa <= 0 || sb <= 0) return 0.0;
    return sab / std::sqrt(sa * sb);
}

/// Orders (and possibly trims) phase-assignment domains by correlating the
/// customer voltage series with the reference-bus per-phase series.
void preselect_phase_domains(const NetworkModel& model, const MeasurementSet& set,
                             std::vector<ParameterVariable>& vars, std::string* note) {
    const net::Bus& ref = model.reference_bus();
    // per-phase reference series over periods
    std::map<int, std::vector<double>> ref_series;
    std::map<SeriesKey, std::vector<double>> series;
    for (const auto& r : set.records) {
        if (r.kind != MeasKind::V_MAG) continue;
        int t = set.period_of(r.timestamp);
        auto grow = [&](std::vector<double>& v) {
            if (static_cast<int>(v.size()) <= t) v.resize(t + 1, 0.0);
            v[t] = r.value;
        };
        if (element_base(r.element) == ref.id)
            grow(ref_series[static_cast<int>(r.phase)]);
        else
            grow(series[{element_base(r.element), 0}]);
    }
    if (ref_series.size() < 2) {
        if (note) *note += "no per-phase reference voltage series; phase domains not pruned. ";
        return;
    }
    for (auto& v : vars) {
        if (v.kind != ParameterKind::PHASE_ASSIGNMENT) continue;
        auto it = series.find({v.element, 0});
        if (it == series.end()) continue;
        std::vector<std::pair<double, double>> scored;  // (-corr, value)
        for (double val : v.values) {
            auto rit = ref_series.find(static_cast<int>(val));
            double c = rit == ref_series.end() ? -1.0 : pearson(it->second, rit->second);
            scored.emplace_back(-c, val);
        }
        std::sort(scored.begin(), scored.end());
        double best = -scored[0].first;
        std::vector<double> kept;
        for (const auto& [negc, val] : scored) {
            if (-negc >= best - kPreselectMargin && kept.size() < 3) kept.push_back(val);
        }
        if (kept.empty()) kept.push_back(scored[0].second);
        if (note && kept.size() < v.values.size())
            *note += v.element + ": domain pruned to " + std::to_string(kept.size()) +
                     " phase(s) by voltage correlation. ";
        v.values = kept;
    }
}

struct Searcher {
    const NetworkModel& model;
    const MeasurementSet& set;
    const EstimationSpec& spec;
    const std::vector<ParameterVariable>& vars;

    // records affected by each variable (phase vars affect only their own
    // element's records; network-wide vars affect everything)
    std::vector<std::optional<std::set<std::size_t>>> affected;

    double evaluate(const std::vector<double>& assignment, std::string* note) const {
        try {
            NetworkModel m = net::apply_parameter_overrides(model, to_overrides(vars, assignment));
            EstimationProblem problem(m, set, plain_spec(spec, false));
            est::EstimationResult r = est::solve(problem, nullptr);
            if (!r.converged()) {
                if (note) *note = "solver did not converge";
                return std::numeric_limits<double>::infinity();
            }
            return r.objective;
        } catch (const std::exception& e) {
            if (note) *note = e.what();
            return std::numeric_limits<double>::infinity();
        }
    }

    /// admissible lower bound: objective over the records unaffected by the
    /// open variables, with the fixed prefix applied
    double bound(const std::vector<double>& assignment, size_t fixed_count) const {
        std::set<std::size_t> excluded;
        for (size_t v = fixed_count; v < vars.size(); ++v) {
            if (!affected[v]) return 0.0;  // network-wide variable still open
            excluded.insert(affected[v]->begin(), affected[v]->end());
        }
        MeasurementSet sub;
        for (std::size_t k = 0; k < set.records.size(); ++k)
            if (!excluded.count(k)) sub.records.push_back(set.records[k]);
        sub.reindex();
        if (sub.records.empty()) return 0.0;
        try {
            std::vector<ParameterVariable> fixed(vars.begin(), vars.begin() + fixed_count);
            std::vector<double> values(assignment.begin(), assignment.begin() + fixed_count);
            NetworkModel m = net::apply_parameter_overrides(model, to_overrides(fixed, values));
            EstimationProblem problem(m, sub, plain_spec(spec, false));
            est::EstimationResult r = est::solve(problem, nullptr);
            return r.converged() ? r.objective : 0.0;
        } catch (const std::exception&) {
            return 0.0;
        }
    }
};

/// tie-break: fewest changes from the prior values, then the assignment that
/// is lexicographically smallest in variable order (variables sorted by
/// element id up front)
bool better_candidate(const std::vector<double>& a, double fa, const std::vector<double>& b,
                      double fb, const std::vector<double>& prior, bool* tie) {
    double tol = kTieRelTol * std::max({1.0, fa, fb});
    if (fa < fb - tol) return true;
    if (fa > fb + tol) return false;
    if (tie) *tie = true;
    auto changes = [&](const std::vector<double>& v) {
        int c = 0;
        for (size_t i = 0; i < v.size(); ++i)
            if (v[i] != prior[i]) ++c;
        return c;
    };
    int ca = changes(a), cb = changes(b);
    if (ca != cb) return ca < cb;
    return std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end());
}

} // namespace

PipelineReport estimate_discrete(const NetworkModel& per_unit_model, const MeasurementSet& set,
                                 const std::vector<ParameterVariable>& vars_in,
                                 const EstimationSpec& spec, int budget) {
    for (const auto& v : vars_in)
        if (!v.discrete())
            throw InputError("estimate_discrete: variable " + v.label() +
                             " has a continuous domain");
    PipelineReport rep;
    rep.discrete_stage_ran = true;

    // variables sorted by element id gives the documented tie-break order
    std::vector<ParameterVariable> vars = vars_in;
    std::sort(vars.begin(), vars.end(), [](const ParameterVariable& a, const ParameterVariable& b) {
        return a.element < b.element;
    });
    preselect_phase_domains(per_unit_model, set, vars, &rep.discrete_note);
    rep.discrete_vars = vars;

    long long space = 1;
    for (const auto& v : vars) {
        space *= static_cast<long long>(v.values.size());
        if (space > budget)
            throw Error("discrete candidate space exceeds the budget of " + std::to_string(budget) +
                        "; prune domains or use the staged pipeline");
    }
    rep.candidates_total = static_cast<int>(space);

    std::vector<double> prior(vars.size());
    for (size_t i = 0; i < vars.size(); ++i) {
        prior[i] = vars[i].initial;
        if (std::find(vars[i].values.begin(), vars[i].values.end(), prior[i]) ==
            vars[i].values.end())
            prior[i] = vars[i].values.front();
    }

    Searcher searcher{per_unit_model, set, spec, vars, {}};
    searcher.affected.resize(vars.size());
    for (size_t v = 0; v < vars.size(); ++v) {
        if (vars[v].kind == ParameterKind::PHASE_ASSIGNMENT) {
            std::set<std::size_t> recs;
            for (std::size_t k = 0; k < set.records.size(); ++k)
                if (element_base(set.records[k].element) == vars[v].element) recs.insert(k);
            searcher.affected[v] = std::move(recs);
        }
        // switch/tap/impedance variables propagate network-wide: no record
        // exclusion is admissible for them
    }

    std::vector<double> best;
    double best_obj = std::numeric_limits<double>::infinity();
    bool tie = false;

    if (space <= kExhaustiveLimit) {
        // exhaustive enumeration, candidate index decodes mixed-radix
        std::vector<CandidateOutcome> all(static_cast<size_t>(space));
        int threads = parallel::max_threads();
#pragma omp parallel for schedule(dynamic) num_threads(threads) if (threads > 1 && space > 4)
        for (long long c = 0; c < space; ++c) {
            std::vector<double> assignment(vars.size());
            long long rem = c;
            for (size_t v = 0; v < vars.size(); ++v) {
                assignment[v] = vars[v].values[rem % vars[v].values.size()];
                rem /= vars[v].values.size();
            }
            std::string note;
            double obj = searcher.evaluate(assignment, &note);
            all[c] = {std::move(assignment), obj, std::move(note)};
        }
        rep.candidates = std::move(all);
        rep.candidates_evaluated = static_cast<int>(space);
        for (const auto& cand : rep.candidates) {
            if (best.empty()) {
                best = cand.assignment;
                best_obj = cand.objective;
            } else if (better_candidate(cand.assignment, cand.objective, best, best_obj, prior,
                                        &tie)) {
                best = cand.assignment;
                best_obj = cand.objective;
            }
        }
    } else {
        // branch and bound, depth first; domains are already ordered by
        // correlation so the first leaf is the preselection guess
        std::vector<double> assignment = prior;
        // incumbent from the first-choice leaf
        {
            std::vector<double> first(vars.size());
            for (size_t v = 0; v < vars.size(); ++v) first[v] = vars[v].values.front();
            std::string note;
            double obj = searcher.evaluate(first, &note);
            rep.candidates.push_back({first, obj, note});
            ++rep.candidates_evaluated;
            best = first;
            best_obj = obj;
        }
        std::function<void(size_t)> dfs = [&](size_t depth) {
            if (depth == vars.size()) {
                bool is_first = true;
                for (size_t v = 0; v < vars.size(); ++v)
                    if (assignment[v] != vars[v].values.front()) is_first = false;
                if (is_first) return;  // incumbent already evaluated
                std::string note;
                double obj = searcher.evaluate(assignment, &note);
                rep.candidates.push_back({assignment, obj, note});
                ++rep.candidates_evaluated;
                if (best.empty() ||
                    better_candidate(assignment, obj, best, best_obj, prior, &tie)) {
                    best = assignment;
                    best_obj = obj;
                }
                return;
            }
            double b = searcher.bound(assignment, depth);
            if (b > best_obj * (1.0 + kTieRelTol) && b > best_obj + kTieRelTol) {
                ++rep.subtrees_pruned;
                return;
            }
            for (double val : vars[depth].values) {
                assignment[depth] = val;
                dfs(depth + 1);
            }
            assignment[depth] = vars[depth].values.front();
        };
        dfs(0);
    }

    rep.chosen_assignment = best;
    rep.chosen_objective = best_obj;
    rep.tie_broken = tie;
    if (tie) rep.discrete_note += "objective tie; kept fewest changes from the prior. ";
    return rep;
}

PipelineReport staged_pipeline(const NetworkModel& per_unit_model, const MeasurementSet& set,
                               const std::vector<ParameterVariable>& discrete_vars,
                               const std::vector<ParameterVariable>& continuous_vars,
                               const EstimationSpec& spec, int budget) {
    PipelineReport rep;
    NetworkModel model = per_unit_model;

    if (!discrete_vars.empty()) {
        rep = estimate_discrete(model, set, discrete_vars, spec, budget);
        model = net::apply_parameter_overrides(
            model, to_overrides(rep.discrete_vars, rep.chosen_assignment));
    } else {
        rep.discrete_note = "no discrete variables; stage skipped. ";
    }

    if (!continuous_vars.empty()) {
        ContinuousReport cont = estimate_continuous(model, set, continuous_vars, spec);
        rep.continuous_stage_ran = true;
        rep.continuous_vars = continuous_vars;
        rep.continuous_estimates = cont.estimates;
        rep.ci95 = cont.ci95;
        model = net::apply_parameter_overrides(model,
                                               to_overrides(continuous_vars, cont.estimates));
    } else {
        rep.continuous_note = "no continuous variables; stage skipped. ";
    }

    // final plain estimate with every parameter fixed
    EstimationProblem problem(model, set, plain_spec(spec, true));
    rep.final_result = est::solve(problem, nullptr);
    return rep;
}

// --- sequential residual scan ----------------------------------------------

std::string to_string(SuspectClass c) {
    return c == SuspectClass::PERSISTENT ? "PERSISTENT" : "TRANSIENT";
}

SuspectReport sequential_residual_scan(const NetworkModel& per_unit_model,
                                       const MeasurementSet& set, const EstimationSpec& spec) {
    SuspectReport rep;
    EstimationProblem problem(per_unit_model, set, plain_spec(spec, true));
    rep.base_result = est::solve(problem, nullptr);
    const int T = problem.periods();

    // incidence: element -> records whose residuals implicate it
    std::map<std::string, std::vector<std::size_t>> incident;
    auto bus_elements = [&](const std::string& bus) {
        std::vector<std::string> out;
        for (const auto& l : per_unit_model.lines)
            if (l.from_bus == bus || l.to_bus == bus) out.push_back(l.id);
        for (const auto& x : per_unit_model.transformers)
            if (x.from_bus == bus || x.to_bus == bus) out.push_back(x.id);
        return out;
    };
    for (std::size_t k = 0; k < set.records.size(); ++k) {
        const std::string base = element_base(set.records[k].element);
        if (per_unit_model.find_line(base) || per_unit_model.find_transformer(base)) {
            incident[base].push_back(k);
        } else if (per_unit_model.find_bus(base)) {
            incident[base].push_back(k);
            for (const auto& el : bus_elements(base)) incident[el].push_back(k);
        } else if (const auto* d = per_unit_model.find_load(base)) {
            incident[base].push_back(k);
            for (const auto& el : bus_elements(d->bus)) incident[el].push_back(k);
        } else if (const auto* g = per_unit_model.find_generator(base)) {
            incident[base].push_back(k);
            for (const auto& el : bus_elements(g->bus)) incident[el].push_back(k);
        }
    }

    const auto& rn = rep.base_result.normalized_residuals;
    for (const auto& [element, records] : incident) {
        std::vector<double> peak(T, 0.0);
        std::vector<std::size_t> peak_rec(T, 0);
        for (std::size_t k : records) {
            int t = problem.record_period(k);
            if (rn[k] > peak[t]) {
                peak[t] = rn[k];
                peak_rec[t] = k;
            }
        }
        int flagged = 0;
        double score = 0.0;
        std::vector<std::size_t> tops;
        for (int t = 0; t < T; ++t) {
            score += peak[t];
            if (peak[t] > rep.threshold) {
                ++flagged;
                tops.push_back(peak_rec[t]);
            }
        }
        if (flagged == 0) continue;
        Suspect s;
        s.element = element;
        s.score = score / T;
        s.periods_flagged = flagged;
        s.periods_total = T;
        s.exceed_fraction = static_cast<double>(flagged) / T;
        s.cls = s.exceed_fraction >= rep.persistence_cutoff ? SuspectClass::PERSISTENT
                                                            : SuspectClass::TRANSIENT;
        s.top_records = std::move(tops);
        rep.suspects.push_back(std::move(s));
    }
    std::sort(rep.suspects.begin(), rep.suspects.end(), [](const Suspect& a, const Suspect& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.element < b.element;
    });
    return rep;
}

} // namespace gridest::pe
