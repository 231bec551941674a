#include <doctest.h>

#include <cmath>
#include <iostream>

#include "gridest/estimator.hpp"
#include "support/fixtures.hpp"

using namespace gridest;
using est::EstimationProblem;
using est::EstimationResult;
using est::EstimationSpec;
using est::Objective;
using est::SolverKind;
using est::StateVector;
using est::ZeroInjectionMode;
using net::Phase;
using telemetry::MeasKind;
using telemetry::MeasPhase;
using telemetry::MeasurementSet;
using telemetry::Source;

namespace {

struct Scenario {
    net::NetworkModel model;
    std::vector<pf::PowerFlowSolution> sols;
    pf::SimulatedData data;
};

Scenario simulate(const net::NetworkModel& raw, const pf::MeasurementPlan& plan, int T,
                  std::optional<telemetry::NoiseModel> noise, std::uint64_t seed) {
    Scenario s;
    s.model = net::to_per_unit(raw);
    pf::ProfileSet profiles = T > 1 ? fixtures::make_profiles(s.model, T, seed) : pf::ProfileSet{};
    s.sols = pf::time_series_pf(s.model, profiles, T, pf::nominal_reference(), 1e-10);
    s.data = pf::simulate_measurements(s.model, s.sols, plan, noise, seed);
    return s;
}

/// redundant single-period plan: everything metered
pf::MeasurementPlan rich_plan(const net::NetworkModel& model) {
    auto pu = net::to_per_unit(model);
    pf::MeasurementPlan plan = pf::plan_full_injection(pu);
    for (const auto& b : pu.buses)
        if (!b.is_reference)
            pf::add_meter(plan, pu, b.id, {MeasKind::V_MAG}, Source::SCADA, 0.005);
    for (const auto& l : pu.lines)
        if (!l.is_switch && l.status)
            pf::add_meter(plan, pu, l.id, {MeasKind::P_FLOW, MeasKind::Q_FLOW}, Source::SCADA,
                          0.005);
    return plan;
}

double max_voltage_error(const EstimationResult& res, const pf::PowerFlowSolution& sol, int t = 0) {
    return (res.voltages[t] - sol.voltages).cwiseAbs().maxCoeff();
}

double rmse_voltage(const EstimationResult& res, const std::vector<pf::PowerFlowSolution>& sols) {
    double se = 0;
    int n = 0;
    for (size_t t = 0; t < sols.size(); ++t) {
        se += (res.voltages[t] - sols[t].voltages).cwiseAbs2().sum();
        n += static_cast<int>(sols[t].voltages.size());
    }
    return std::sqrt(se / n);
}

} // namespace

TEST_CASE("gn: noiseless canonical set reproduces the power flow oracle") {
    for (auto raw : {fixtures::four_bus(), fixtures::feeder13()}) {
        auto pu = net::to_per_unit(raw);
        auto s = simulate(raw, pf::plan_full_injection(pu), 1, std::nullopt, 1);
        EstimationProblem problem(s.model, s.data.training, {});
        auto res = est::solve_wls_gn(problem);
        REQUIRE(res.converged());
        CAPTURE(raw.buses.size());
        CHECK(max_voltage_error(res, s.sols[0]) < 1e-6);
        CHECK(res.objective < 1e-12);
        CHECK(res.redundancy == 0);
    }
}

TEST_CASE("gn: accepted iterations never increase the objective") {
    telemetry::NoiseModel nm;
    auto s = simulate(fixtures::feeder13(), rich_plan(fixtures::feeder13()), 1, nm, 5);
    EstimationProblem problem(s.model, s.data.training, {});
    auto res = est::solve_wls_gn(problem);
    REQUIRE(res.converged());
    for (size_t i = 1; i < res.trace.size(); ++i)
        CHECK(res.trace[i].objective <= res.trace[i - 1].objective * (1 + 1e-12));
}

TEST_CASE("gn: missing lateral measurements raise UNOBSERVABLE") {
    auto pu = net::to_per_unit(fixtures::feeder13());
    pf::MeasurementPlan plan = pf::plan_full_injection(pu);
    // drop everything referencing the B08-B09 lateral states, including the
    // junction injections at B04 that see B08 through L6
    std::erase_if(plan.entries, [](const pf::PlanEntry& e) {
        return e.element == "B08" || e.element == "B09" || e.element == "B04";
    });
    auto s = simulate(fixtures::feeder13(), plan, 1, std::nullopt, 1);
    EstimationProblem problem(s.model, s.data.training, {});
    CHECK_THROWS_AS(est::solve_wls_gn(problem), UnobservableError);
}

TEST_CASE("gn: sigma scaling leaves the argmin unchanged") {
    telemetry::NoiseModel nm;
    auto s = simulate(fixtures::four_bus(), rich_plan(fixtures::four_bus()), 1, nm, 9);
    EstimationProblem p1(s.model, s.data.training, {});
    auto r1 = est::solve_wls_gn(p1);
    MeasurementSet scaled = s.data.training;
    for (auto& r : scaled.records) r.sigma *= 4.0;
    EstimationProblem p2(s.model, scaled, {});
    auto r2 = est::solve_wls_gn(p2);
    REQUIRE(r1.converged());
    REQUIRE(r2.converged());
    CHECK((r1.voltages[0] - r2.voltages[0]).cwiseAbs().maxCoeff() < 1e-8);
    CHECK(r2.objective == doctest::Approx(r1.objective / 16.0).epsilon(1e-6));
}

TEST_CASE("lm: agrees with gn and survives a far start") {
    auto raw = fixtures::feeder13();
    auto pu = net::to_per_unit(raw);
    auto s = simulate(raw, rich_plan(raw), 1, std::nullopt, 1);
    EstimationProblem problem(s.model, s.data.training, {});
    auto gn = est::solve_wls_gn(problem);
    auto lm = est::solve_lm(problem);
    REQUIRE(gn.converged());
    REQUIRE(lm.converged());
    CHECK(std::abs(gn.objective - lm.objective) < 1e-6);
    CHECK((gn.voltages[0] - lm.voltages[0]).cwiseAbs().maxCoeff() < 1e-6);

    // start far from the solution: 0.5 pu magnitude everywhere
    StateVector far = problem.flat_start();
    for (int t = 0; t < problem.periods(); ++t)
        for (int n = 0; n < problem.index().n_nodes; ++n) {
            far.x[problem.index().col_re(t, n)] *= 0.5;
            if (problem.index().im_off[n] >= 0) far.x[problem.index().col_im(t, n)] = 0.0;
        }
    auto lm_far = est::solve_lm(problem, &far);
    CHECK(lm_far.converged());
    CHECK(max_voltage_error(lm_far, s.sols[0]) < 1e-6);
    bool gn_ok = true;
    EstimationResult gn_far;
    try {
        gn_far = est::solve_wls_gn(problem, &far);
        gn_ok = gn_far.converged();
    } catch (const std::exception&) {
        gn_ok = false;
    }
    // the damped method is the robustness baseline here; record the head-to-head
    std::cout << "[far-start] lm iters=" << lm_far.iterations
              << " gn=" << (gn_ok ? "converged in " + std::to_string(gn_far.iterations) + " iters"
                                  : "failed")
              << "\n";
}

TEST_CASE("lm: exact-model problem converges in two accepted steps") {
    // single reference bus, V_MAG only: h is linear in the surviving states
    net::NetworkModel m;
    net::Bus b;
    b.id = "B1";
    b.phases = {Phase::A, Phase::B, Phase::C};
    b.base_kv = 2.4;
    b.is_reference = true;
    m.buses.push_back(b);
    m.per_unit = true;
    MeasurementSet set;
    for (auto p : {MeasPhase::A, MeasPhase::B, MeasPhase::C})
        set.records.push_back({0, MeasKind::V_MAG, "B1", p, 2.5, 0.01, Source::SCADA});
    set.reindex();
    EstimationProblem problem(m, set, {});
    auto res = est::solve_lm(problem);
    REQUIRE(res.converged());
    CHECK(std::abs(res.voltages[0][0]) == doctest::Approx(2.5 / 2.4));
    int accepted = 0;
    for (const auto& t : res.trace)
        if (t.step_norm > 0) ++accepted;
    CHECK(accepted <= 2);
}

TEST_CASE("robust: noiseless data gives the wls optimum; huber limits to wls") {
    auto raw = fixtures::four_bus();
    auto s = simulate(raw, rich_plan(raw), 1, std::nullopt, 1);

    EstimationSpec wlav_spec;
    wlav_spec.objective = Objective::WLAV;
    EstimationProblem pw(s.model, s.data.training, wlav_spec);
    auto wlav = est::solve_robust(pw);
    REQUIRE(wlav.converged());
    CHECK(max_voltage_error(wlav, s.sols[0]) < 1e-5);

    telemetry::NoiseModel nm;
    auto noisy = simulate(raw, rich_plan(raw), 1, nm, 3);
    EstimationProblem pg(noisy.model, noisy.data.training, {});
    auto wls = est::solve_wls_gn(pg);
    EstimationSpec huge_gamma;
    huge_gamma.objective = Objective::SCHWEPPE_HUBER;
    huge_gamma.huber_gamma = 1e9;
    EstimationProblem ph(noisy.model, noisy.data.training, huge_gamma);
    auto huber = est::solve_robust(ph);
    REQUIRE(wls.converged());
    REQUIRE(huber.converged());
    CHECK((wls.voltages[0] - huber.voltages[0]).cwiseAbs().maxCoeff() < 1e-6);
    CHECK(std::abs(wls.objective - huber.objective) < 1e-6 * std::max(1.0, wls.objective));
}

TEST_CASE("newton-lagrangian: unconstrained run matches gn") {
    telemetry::NoiseModel nm;
    auto s = simulate(fixtures::four_bus(), rich_plan(fixtures::four_bus()), 1, nm, 11);
    EstimationProblem problem(s.model, s.data.training, {});
    auto gn = est::solve_wls_gn(problem);
    auto nl = est::solve_newton_lagrangian(problem);
    REQUIRE(gn.converged());
    REQUIRE(nl.converged());
    CHECK((gn.voltages[0] - nl.voltages[0]).cwiseAbs().maxCoeff() < 1e-6);
    CHECK(std::abs(gn.objective - nl.objective) < 1e-6 * std::max(1.0, gn.objective));
}

TEST_CASE("newton-lagrangian: equality vs high-weight zero injections") {
    auto raw = fixtures::feeder13();
    auto pu = net::to_per_unit(raw);
    pf::MeasurementPlan plan = rich_plan(raw);
    // stop metering the junction buses directly; virtuals carry them
    std::erase_if(plan.entries, [&](const pf::PlanEntry& e) {
        for (const auto& z : net::zero_injection_buses(pu))
            if (e.element == z &&
                (e.kind == MeasKind::P_INJ || e.kind == MeasKind::Q_INJ))
                return true;
        return false;
    });
    plan.virtual_zero_injections = true;
    telemetry::NoiseModel nm;
    auto s = simulate(raw, plan, 1, nm, 13);

    EstimationSpec eq;
    eq.zero_injection = ZeroInjectionMode::EQUALITY;
    EstimationProblem pe_(s.model, s.data.training, eq);
    auto req = est::solve_newton_lagrangian(pe_);
    REQUIRE(req.converged());
    CHECK(req.lagrange_multipliers.size() == pe_.equality_count());

    EstimationSpec hw;
    hw.zero_injection = ZeroInjectionMode::HIGH_WEIGHT;
    hw.zero_injection_weight = 1e8;
    EstimationProblem ph(s.model, s.data.training, hw);
    auto rhw = est::solve_wls_gn(ph);
    REQUIRE(rhw.converged());

    CHECK((req.voltages[0] - rhw.voltages[0]).cwiseAbs().maxCoeff() < 1e-4);
    CHECK(req.gain_condition_estimate < rhw.gain_condition_estimate);

    // the equality constraints hold exactly at the optimum
    for (int k = 0; k < static_cast<int>(s.data.training.records.size()); ++k)
        if (pe_.is_equality_row(k)) CHECK(std::abs(req.estimates[k]) < 1e-6);
}

TEST_CASE("newton-lagrangian: active voltage bound carries a positive multiplier") {
    // drive the far end low, then ask for vmag >= 0.98
    auto raw = fixtures::four_bus();
    for (auto& d : raw.loads)
        for (auto& p : d.power) p *= 2.2;
    auto s = simulate(raw, rich_plan(raw), 1, std::nullopt, 1);

    EstimationProblem base(s.model, s.data.training, {});
    auto unbounded = est::solve_wls_gn(base);
    REQUIRE(unbounded.converged());
    double vmin_free = 2.0;
    for (int n = 0; n < unbounded.voltages[0].size(); ++n)
        vmin_free = std::min(vmin_free, std::abs(unbounded.voltages[0][n]));
    REQUIRE(vmin_free < 0.975);  // the bound below is genuinely active

    EstimationSpec spec;
    spec.bounds = est::Bounds{0.98, std::nullopt, true};
    EstimationProblem bounded(s.model, s.data.training, spec);
    auto res = est::solve_newton_lagrangian(bounded);
    REQUIRE(res.converged());
    for (int n = 0; n < res.voltages[0].size(); ++n)
        CHECK(std::abs(res.voltages[0][n]) >= 0.98 - 1e-9);
    bool has_active = false;
    for (const auto& [label, mult] : res.bound_multipliers)
        if (label.find("vmin") != std::string::npos && mult > 1e-2) has_active = true;
    CHECK(has_active);
}

TEST_CASE("multi-period: no shared variables = independent period solves") {
    auto raw = fixtures::four_bus();
    telemetry::NoiseModel nm;
    auto s = simulate(raw, rich_plan(raw), 4, nm, 21);
    EstimationProblem stacked(s.model, s.data.training, {});
    auto res = est::solve_wls_gn(stacked);
    REQUIRE(res.converged());
    CHECK(stacked.periods() == 4);

    for (int t = 0; t < 4; ++t) {
        MeasurementSet single;
        for (const auto& r : s.data.training.records)
            if (s.data.training.period_of(r.timestamp) == t) single.records.push_back(r);
        single.reindex();
        EstimationProblem sub(s.model, single, {});
        auto rsub = est::solve_wls_gn(sub);
        REQUIRE(rsub.converged());
        CHECK((res.voltages[t] - rsub.voltages[0]).cwiseAbs().maxCoeff() < 1e-8);
    }
}

TEST_CASE("multi-period: shared parameter column spans all periods") {
    auto raw = fixtures::four_bus();
    telemetry::NoiseModel nm;
    auto s = simulate(raw, rich_plan(raw), 6, nm, 23);
    EstimationSpec spec;
    est::ParameterVariable v;
    v.element = "L2";
    v.kind = net::ParameterKind::IMPEDANCE_SCALE;
    v.lo = 0.2;
    v.hi = 5.0;
    v.initial = 1.0;
    spec.parameter_variables = {v};
    EstimationProblem problem(s.model, s.data.training, spec);
    auto J = problem.jacobian(problem.flat_start());
    const auto& idx = problem.index();
    const int pcol = idx.col_param(0);
    // block structure: rows of period t touch only period t's columns (plus
    // the dense parameter column)
    std::vector<bool> period_touched(problem.periods(), false);
    Eigen::SparseMatrix<double> Jc = J;
    for (int col = 0; col < Jc.outerSize(); ++col) {
        for (Eigen::SparseMatrix<double>::InnerIterator it(Jc, col); it; ++it) {
            int k = static_cast<int>(it.row());
            int t = problem.record_period(k);
            if (col == pcol) {
                period_touched[t] = true;
                continue;
            }
            CHECK(col >= t * idx.per_period);
            CHECK(col < (t + 1) * idx.per_period);
        }
    }
    for (int t = 0; t < problem.periods(); ++t) CHECK(period_touched[t]);
}
