#include <cstdarg>
#include <cmath>
#include <cstdio>
#include <json.hpp>
#include <map>
#include <sstream>

#include "gridest/io.hpp"

namespace gridest::io {

using json = nlohmann::json;
using est::EstimationProblem;
using est::EstimationResult;
using net::Phase;

namespace {

std::string fmt(const char* f, ...) {
    char buf[512];
    va_list args;
    va_start(args, f);
    std::vsnprintf(buf, sizeof(buf), f, args);
    va_end(args);
    return buf;
}

std::string status_string(EstimationResult::Status s) {
    switch (s) {
        case EstimationResult::Status::CONVERGED: return "converged";
        case EstimationResult::Status::MAX_ITER: return "max-iterations";
        case EstimationResult::Status::UNOBSERVABLE: return "unobservable";
        case EstimationResult::Status::FAILED: return "failed";
    }
    return "?";
}

} // namespace

std::string pf_voltages_csv(const net::NetworkModel& model, const pf::PowerFlowSolution& sol) {
    net::NodeMap nodes(model);
    std::string out = "bus,phase,vmag_pu,vangle_rad,vre_pu,vim_pu\n";
    for (int n = 0; n < nodes.count(); ++n) {
        Complex u = sol.voltages[n];
        out += fmt("%s,%c,%.12g,%.12g,%.17g,%.17g\n", nodes.node(n).first.c_str(),
                   net::phase_letter(nodes.node(n).second), std::abs(u), std::arg(u), u.real(),
                   u.imag());
    }
    return out;
}

std::string pf_flows_csv(const net::NetworkModel& model, const pf::PowerFlowSolution& sol) {
    double p_base_kw = model.s_base_mva * 1000.0;
    std::string out = "element,phase,end,p_kw,q_kvar,i_series_a\n";
    for (const auto& bf : sol.flows) {
        const net::LineModel* line = model.find_line(bf.element);
        double i_base_a = 0.0;
        if (line) {
            const net::Bus* fb = model.find_bus(line->from_bus);
            i_base_a = 1000.0 * model.s_base_mva / fb->base_kv;
        }
        for (size_t k = 0; k < bf.phases.size(); ++k) {
            out += fmt("%s,%c,from,%.12g,%.12g,%.12g\n", bf.element.c_str(),
                       net::phase_letter(bf.phases[k]), bf.from_S[k].real() * p_base_kw,
                       bf.from_S[k].imag() * p_base_kw,
                       line ? std::abs(bf.series_I[k]) * i_base_a : 0.0);
            out += fmt("%s,%c,to,%.12g,%.12g,%.12g\n", bf.element.c_str(),
                       net::phase_letter(bf.phases[k]), bf.to_S[k].real() * p_base_kw,
                       bf.to_S[k].imag() * p_base_kw,
                       line ? std::abs(bf.series_I[k]) * i_base_a : 0.0);
        }
    }
    return out;
}

std::string se_state_csv(const EstimationProblem& problem, const EstimationResult& res) {
    const auto& nodes = problem.nodes();
    std::string out = "period,bus,phase,vmag_pu,vangle_rad\n";
    for (int t = 0; t < problem.periods(); ++t)
        for (int n = 0; n < nodes.count(); ++n) {
            Complex u = res.voltages[t][n];
            out += fmt("%d,%s,%c,%.12g,%.12g\n", t, nodes.node(n).first.c_str(),
                       net::phase_letter(nodes.node(n).second), std::abs(u), std::arg(u));
        }
    return out;
}

std::string se_report_text(const EstimationProblem& problem, const EstimationResult& res) {
    std::ostringstream os;
    os << "estimation report\n";
    os << "  status        " << status_string(res.status) << "\n";
    os << "  objective     " << fmt("%.6g", res.objective) << "\n";
    os << "  measurements  " << res.measurement_count << " (equalities "
       << problem.equality_count() << ")\n";
    os << "  state dim     " << res.state_dim << "  periods " << problem.periods() << "\n";
    os << "  redundancy    " << res.redundancy << "\n";
    os << "  iterations    " << res.iterations << "  factorizations " << res.factorizations
       << "\n";
    os << "  condition est " << fmt("%.3g", res.gain_condition_estimate) << "\n";
    if (!res.message.empty()) os << "  note          " << res.message << "\n";

    if (!res.parameters.empty()) {
        os << "\nparameter estimates\n";
        for (size_t i = 0; i < res.parameters.size(); ++i)
            os << "  " << res.parameters[i].label() << " = "
               << fmt("%.8g", res.parameter_estimates[i]) << "\n";
    }

    os << "\nresidual table (canonical units)\n";
    os << "  idx period element              kind        ph      measured     estimated  "
          "    residual   norm_resid flags\n";
    const auto& recs = problem.measurements().records;
    for (size_t k = 0; k < recs.size(); ++k) {
        const auto& r = recs[k];
        std::string flags;
        if (res.is_equality[k]) flags += "E";
        if (res.is_critical[k]) flags += "C";
        os << fmt("  %3zu %6d %-20s %-11s %-3s %12.5g %12.5g %12.4g %12.4g %s\n", k,
                  problem.record_period(k), r.element.c_str(),
                  telemetry::to_string(r.kind).c_str(), telemetry::to_string(r.phase).c_str(),
                  r.value, res.estimates[k], res.residuals[k], res.normalized_residuals[k],
                  flags.c_str());
    }

    os << "\nconvergence trace\n";
    os << "  iter     objective     step_norm     grad_norm     damping\n";
    for (const auto& t : res.trace)
        os << fmt("  %4d %13.6g %13.6g %13.6g %11.3g\n", t.iter, t.objective, t.step_norm,
                  t.grad_norm, t.damping);
    return os.str();
}

std::string se_report_json(const EstimationProblem& problem, const EstimationResult& res) {
    json j;
    j["status"] = status_string(res.status);
    j["objective"] = res.objective;
    j["measurements"] = res.measurement_count;
    j["equalities"] = problem.equality_count();
    j["state_dim"] = res.state_dim;
    j["periods"] = problem.periods();
    j["redundancy"] = res.redundancy;
    j["iterations"] = res.iterations;
    j["factorizations"] = res.factorizations;
    j["condition_estimate"] = res.gain_condition_estimate;
    j["message"] = res.message;
    json params = json::array();
    for (size_t i = 0; i < res.parameters.size(); ++i)
        params.push_back({{"target", res.parameters[i].label()},
                          {"estimate", res.parameter_estimates[i]}});
    j["parameters"] = params;
    json recs = json::array();
    const auto& records = problem.measurements().records;
    for (size_t k = 0; k < records.size(); ++k) {
        recs.push_back({{"element", records[k].element},
                        {"kind", telemetry::to_string(records[k].kind)},
                        {"phase", telemetry::to_string(records[k].phase)},
                        {"period", problem.record_period(k)},
                        {"measured", records[k].value},
                        {"estimated", res.estimates[k]},
                        {"residual", res.residuals[k]},
                        {"normalized_residual", res.normalized_residuals[k]},
                        {"equality", static_cast<bool>(res.is_equality[k])},
                        {"critical", static_cast<bool>(res.is_critical[k])}});
    }
    j["records"] = recs;
    json trace = json::array();
    for (const auto& t : res.trace)
        trace.push_back({{"iter", t.iter},
                         {"objective", t.objective},
                         {"step_norm", t.step_norm},
                         {"grad_norm", t.grad_norm},
                         {"damping", t.damping}});
    j["trace"] = trace;
    return j.dump(2) + "\n";
}

namespace {

double estimate_record(const EstimationProblem& problem, const EstimationResult& res,
                       const telemetry::Measurement& rec) {
    int t = problem.measurements().period_of(rec.timestamp);
    if (t < 0) t = 0;
    return est::measurement_function(problem.model(), problem.nodes(), res.voltages[t], rec);
}

} // namespace

std::string series_csv(const EstimationProblem& problem, const EstimationResult& res,
                       const telemetry::MeasurementSet* holdout,
                       const telemetry::MeasurementSet* truth) {
    std::string out = "element,kind,phase,period,role,value\n";
    const auto& recs = problem.measurements().records;
    auto row = [&](const telemetry::Measurement& r, int period, const char* role, double v) {
        out += fmt("%s,%s,%s,%d,%s,%.12g\n", r.element.c_str(),
                   telemetry::to_string(r.kind).c_str(), telemetry::to_string(r.phase).c_str(),
                   period, role, v);
    };
    for (size_t k = 0; k < recs.size(); ++k) {
        if (res.is_equality[k]) continue;
        row(recs[k], problem.record_period(k), "measured", recs[k].value);
        row(recs[k], problem.record_period(k), "estimated", res.estimates[k]);
    }
    if (holdout)
        for (const auto& r : holdout->records) {
            int t = holdout->period_of(r.timestamp);
            row(r, t, "measured", r.value);
            row(r, t, "estimated", estimate_record(problem, res, r));
        }
    if (truth)
        for (const auto& r : truth->records) {
            if (r.source == telemetry::Source::VIRTUAL) continue;
            row(r, truth->period_of(r.timestamp), "truth", r.value);
        }
    return out;
}

HoldoutScore score_holdout(const EstimationProblem& problem, const EstimationResult& res,
                           const telemetry::MeasurementSet& holdout,
                           const telemetry::MeasurementSet* truth) {
    HoldoutScore score;
    double se = 0.0, sa = 0.0, st = 0.0;
    int nt = 0;
    for (const auto& r : holdout.records) {
        double est_v = estimate_record(problem, res, r);
        se += (est_v - r.value) * (est_v - r.value);
        sa += std::abs(r.value);
        ++score.count;
        if (truth) {
            for (const auto& tr : truth->records) {
                if (tr.element == r.element && tr.kind == r.kind && tr.phase == r.phase &&
                    tr.timestamp == r.timestamp) {
                    st += (est_v - tr.value) * (est_v - tr.value);
                    ++nt;
                    break;
                }
            }
        }
    }
    if (score.count > 0) {
        score.rmse = std::sqrt(se / score.count);
        score.mean_abs = sa / score.count;
    }
    if (nt > 0) {
        score.rmse_vs_truth = std::sqrt(st / nt);
        score.has_truth = true;
    }
    return score;
}

// --- diagnostics reports ------------------------------------------------

std::string baddata_report_text(const diag::BadDataReport& rep) {
    std::ostringstream os;
    os << "bad data report\n";
    os << fmt("  chi-square     %.6g  threshold %.6g  (dof %d, confidence %.3g)\n",
              rep.chi2_statistic, rep.chi2_threshold, rep.dof, rep.confidence);
    os << "  initial test   " << (rep.chi2_pass_initial ? "pass" : "FAIL") << "\n";
    os << "  resolved       " << (rep.resolved ? "yes" : "NO") << "\n";
    int criticals = 0;
    for (auto c : rep.critical) criticals += c;
    os << "  critical recs  " << criticals << "\n";
    if (!rep.removals.empty()) {
        os << "\nremoval trace\n";
        os << "  record element              kind        ph  norm_resid  objective   threshold  "
              "pass\n";
        for (const auto& r : rep.removals)
            os << fmt("  %6zu %-20s %-11s %-3s %10.4g %11.5g %11.5g  %s\n", r.record_index,
                      r.element.c_str(), r.kind.c_str(), r.phase.c_str(), r.normalized_residual,
                      r.objective_after, r.threshold_after, r.chi2_pass_after ? "yes" : "no");
    }
    return os.str();
}

std::string baddata_report_json(const diag::BadDataReport& rep) {
    json j;
    j["confidence"] = rep.confidence;
    j["dof"] = rep.dof;
    j["chi2_statistic"] = rep.chi2_statistic;
    j["chi2_threshold"] = rep.chi2_threshold;
    j["chi2_pass_initial"] = rep.chi2_pass_initial;
    j["resolved"] = rep.resolved;
    j["final_objective"] = rep.final_objective;
    j["final_dof"] = rep.final_dof;
    json removals = json::array();
    for (const auto& r : rep.removals)
        removals.push_back({{"record_index", r.record_index},
                            {"element", r.element},
                            {"kind", r.kind},
                            {"phase", r.phase},
                            {"timestamp", r.timestamp},
                            {"normalized_residual", r.normalized_residual},
                            {"objective_after", r.objective_after},
                            {"threshold_after", r.threshold_after},
                            {"chi2_pass_after", r.chi2_pass_after}});
    j["removals"] = removals;
    return j.dump(2) + "\n";
}

std::string observability_report_text(const diag::ObservabilityReport& rep) {
    std::ostringstream os;
    os << "observability report\n";
    os << "  state dim   " << rep.state_dim << "\n";
    os << "  rank        " << rep.rank << "\n";
    os << "  deficiency  " << rep.deficiency << "\n";
    os << "  observable  " << (rep.fully_observable() ? "yes" : "NO") << "\n";
    for (size_t d = 0; d < rep.dominant_states.size(); ++d) {
        os << "  null direction " << d << ":";
        for (const auto& [label, v] : rep.dominant_states[d]) os << fmt(" %s(%.3f)", label.c_str(), v);
        os << "\n";
    }
    return os.str();
}

std::string observability_report_json(const diag::ObservabilityReport& rep) {
    json j;
    j["state_dim"] = rep.state_dim;
    j["rank"] = rep.rank;
    j["deficiency"] = rep.deficiency;
    j["fully_observable"] = rep.fully_observable();
    json dirs = json::array();
    for (const auto& dom : rep.dominant_states) {
        json dir = json::array();
        for (const auto& [label, v] : dom) dir.push_back({{"state", label}, {"component", v}});
        dirs.push_back(dir);
    }
    j["null_directions"] = dirs;
    json unobs = json::array();
    for (size_t i = 0; i < rep.observable.size(); ++i)
        if (!rep.observable[i]) unobs.push_back(rep.labels[i]);
    j["unobservable_states"] = unobs;
    return j.dump(2) + "\n";
}

std::string placement_report_text(const diag::PlacementReport& rep) {
    std::ostringstream os;
    os << "sensor placement report\n";
    os << fmt("  base max variance  %.6g\n", rep.base_max_variance);
    os << "  step site                          max_var_before  max_var_after  total_reduction  "
          "tie\n";
    for (size_t i = 0; i < rep.steps.size(); ++i) {
        const auto& s = rep.steps[i];
        os << fmt("  %4zu %-28s %15.6g %14.6g %16.6g  %s\n", i + 1, s.site.c_str(),
                  s.max_variance_before, s.max_variance_after, s.total_variance_reduction,
                  s.tie_broken ? "yes" : "no");
    }
    return os.str();
}

std::string placement_report_json(const diag::PlacementReport& rep) {
    json j;
    j["base_max_variance"] = rep.base_max_variance;
    j["candidates"] = rep.candidate_sites;
    json steps = json::array();
    for (const auto& s : rep.steps)
        steps.push_back({{"candidate_index", s.candidate_index},
                         {"site", s.site},
                         {"max_variance_before", s.max_variance_before},
                         {"max_variance_after", s.max_variance_after},
                         {"total_variance_reduction", s.total_variance_reduction},
                         {"tie_broken", s.tie_broken}});
    j["steps"] = steps;
    return j.dump(2) + "\n";
}

std::string pipeline_report_text(const pe::PipelineReport& rep) {
    std::ostringstream os;
    os << "parameter estimation pipeline report\n";
    os << "stage 1: discrete search " << (rep.discrete_stage_ran ? "" : "(skipped)") << "\n";
    if (rep.discrete_stage_ran) {
        os << "  candidate space " << rep.candidates_total << ", evaluated "
           << rep.candidates_evaluated << ", pruned subtrees " << rep.subtrees_pruned << "\n";
        for (size_t i = 0; i < rep.discrete_vars.size(); ++i)
            os << fmt("  %-28s chosen %g\n", rep.discrete_vars[i].label().c_str(),
                      rep.chosen_assignment[i]);
        os << fmt("  chosen objective %.6g%s\n", rep.chosen_objective,
                  rep.tie_broken ? "  (tie broken)" : "");
        os << "  candidates:\n";
        for (const auto& c : rep.candidates) {
            os << "   ";
            for (double v : c.assignment) os << fmt(" %g", v);
            os << fmt("  -> %.6g %s\n", c.objective, c.note.c_str());
        }
    }
    if (!rep.discrete_note.empty()) os << "  note: " << rep.discrete_note << "\n";
    os << "stage 2: continuous estimation " << (rep.continuous_stage_ran ? "" : "(skipped)")
       << "\n";
    if (rep.continuous_stage_ran)
        for (size_t i = 0; i < rep.continuous_vars.size(); ++i)
            os << fmt("  %-28s %.8g  ci95 [%.8g, %.8g]\n", rep.continuous_vars[i].label().c_str(),
                      rep.continuous_estimates[i], rep.ci95[i].first, rep.ci95[i].second);
    if (!rep.continuous_note.empty()) os << "  note: " << rep.continuous_note << "\n";
    os << "stage 3: final estimate\n";
    if (rep.final_result) {
        os << fmt("  status %s  objective %.6g  redundancy %d\n",
                  rep.final_result->converged() ? "converged" : "NOT converged",
                  rep.final_result->objective, rep.final_result->redundancy);
    }
    return os.str();
}

std::string pipeline_report_json(const pe::PipelineReport& rep) {
    json j;
    j["discrete_stage_ran"] = rep.discrete_stage_ran;
    json dvars = json::array();
    for (size_t i = 0; i < rep.discrete_vars.size(); ++i) {
        json v;
        v["target"] = rep.discrete_vars[i].label();
        v["domain"] = rep.discrete_vars[i].values;
        if (i < rep.chosen_assignment.size()) v["chosen"] = rep.chosen_assignment[i];
        dvars.push_back(v);
    }
    j["discrete_variables"] = dvars;
    j["candidates_total"] = rep.candidates_total;
    j["candidates_evaluated"] = rep.candidates_evaluated;
    j["subtrees_pruned"] = rep.subtrees_pruned;
    j["chosen_objective"] = rep.chosen_objective;
    j["tie_broken"] = rep.tie_broken;
    j["discrete_note"] = rep.discrete_note;
    json cands = json::array();
    for (const auto& c : rep.candidates)
        cands.push_back(
            {{"assignment", c.assignment}, {"objective", c.objective}, {"note", c.note}});
    j["candidates"] = cands;
    j["continuous_stage_ran"] = rep.continuous_stage_ran;
    json cvars = json::array();
    for (size_t i = 0; i < rep.continuous_vars.size(); ++i)
        cvars.push_back({{"target", rep.continuous_vars[i].label()},
                         {"estimate", rep.continuous_estimates[i]},
                         {"ci95", {rep.ci95[i].first, rep.ci95[i].second}}});
    j["continuous_variables"] = cvars;
    j["continuous_note"] = rep.continuous_note;
    if (rep.final_result) {
        j["final_status"] = status_string(rep.final_result->status);
        j["final_objective"] = rep.final_result->objective;
        j["final_redundancy"] = rep.final_result->redundancy;
    }
    return j.dump(2) + "\n";
}

std::string scan_report_text(const pe::SuspectReport& rep) {
    std::ostringstream os;
    os << "sequential residual scan\n";
    os << fmt("  threshold %.3g  persistence cutoff %.3g  periods %d\n", rep.threshold,
              rep.persistence_cutoff,
              rep.suspects.empty() ? 0 : rep.suspects.front().periods_total);
    os << "  element              class       score  exceed_fraction  periods\n";
    for (const auto& s : rep.suspects)
        os << fmt("  %-20s %-10s %7.3g %16.3g  %d/%d\n", s.element.c_str(),
                  pe::to_string(s.cls).c_str(), s.score, s.exceed_fraction, s.periods_flagged,
                  s.periods_total);
    return os.str();
}

} // namespace gridest::io
