#include <doctest.h>

#include <cmath>

#include "gridest/estimator.hpp"
#include "support/fixtures.hpp"
#include "support/oracles.hpp"

using namespace gridest;
using est::EstimationProblem;
using est::EstimationSpec;
using est::StateVector;
using net::Phase;
using telemetry::MeasKind;
using telemetry::MeasPhase;
using telemetry::Measurement;
using telemetry::MeasurementSet;
using telemetry::Source;

namespace {

Measurement rec(const std::string& el, MeasKind k, MeasPhase p, double v = 0.0, double sigma = 1.0,
                Source src = Source::SCADA, std::int64_t t = 0) {
    return {t, k, el, p, v, sigma, src};
}

/// every supported record shape on the 13-bus fixture
std::vector<Measurement> all_kind_records() {
    std::vector<Measurement> rs;
    rs.push_back(rec("B04", MeasKind::V_MAG, MeasPhase::B));
    rs.push_back(rec("B05", MeasKind::V_ANGLE_REL, MeasPhase::C));
    rs.push_back(rec("B04", MeasKind::P_INJ, MeasPhase::A));
    rs.push_back(rec("B04", MeasKind::Q_INJ, MeasPhase::C));
    rs.push_back(rec("B05", MeasKind::P_INJ, MeasPhase::AGG));
    rs.push_back(rec("B05", MeasKind::Q_INJ, MeasPhase::AGG));
    rs.push_back(rec("L2", MeasKind::P_FLOW, MeasPhase::A));
    rs.push_back(rec("L2", MeasKind::Q_FLOW, MeasPhase::B));
    rs.push_back(rec("L2:to", MeasKind::P_FLOW, MeasPhase::C));
    rs.push_back(rec("L2", MeasKind::P_FLOW, MeasPhase::AGG));
    rs.push_back(rec("L9", MeasKind::Q_FLOW, MeasPhase::AGG));  // line with shunt
    rs.push_back(rec("L2", MeasKind::I_MAG, MeasPhase::A));
    rs.push_back(rec("L6", MeasKind::I_MAG, MeasPhase::C));
    rs.push_back(rec("X1", MeasKind::P_FLOW, MeasPhase::A));    // transformer flow
    rs.push_back(rec("X2", MeasKind::Q_FLOW, MeasPhase::AGG));  // delta-wye flow
    rs.push_back(rec("D3", MeasKind::V_MAG, MeasPhase::A));     // customer meter
    rs.push_back(rec("D3", MeasKind::P_INJ, MeasPhase::A));
    rs.push_back(rec("D7", MeasKind::Q_INJ, MeasPhase::AGG));
    return rs;
}

} // namespace

TEST_CASE("measurement_function: flat start voltage magnitude is the base") {
    auto pu = net::to_per_unit(fixtures::feeder13());
    net::NodeMap nodes(pu);
    Eigen::VectorXcd U(nodes.count());
    for (int n = 0; n < nodes.count(); ++n)
        U[n] = pf::nominal_reference()[static_cast<int>(nodes.node(n).second)];
    double v = est::measurement_function(pu, nodes, U, rec("B04", MeasKind::V_MAG, MeasPhase::B));
    CHECK(v == doctest::Approx(2.4).epsilon(1e-12));  // 1 pu at a 2.4 kV bus
    double a = est::measurement_function(pu, nodes, U,
                                         rec("B05", MeasKind::V_ANGLE_REL, MeasPhase::C));
    CHECK(a == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("measurement_function: zero-load solution has zero injections") {
    auto m = fixtures::feeder13();
    m.loads.clear();
    auto pu = net::to_per_unit(m);
    net::NodeMap nodes(pu);
    auto sol = pf::solve_pf(pu);
    double p = est::measurement_function(pu, nodes, sol.voltages,
                                         rec("B04", MeasKind::P_INJ, MeasPhase::A));
    CHECK(std::abs(p) < 1e-8);
}

TEST_CASE("measurement_function: every kind matches the power flow solution") {
    auto pu = net::to_per_unit(fixtures::feeder13());
    net::NodeMap nodes(pu);
    auto sol = pf::solve_pf(pu, pf::nominal_reference(), 1e-10);
    for (const auto& r : all_kind_records()) {
        double h = est::measurement_function(pu, nodes, sol.voltages, r);
        double truth = pf::measured_quantity(pu, nodes, sol, r.element, r.kind, r.phase);
        CAPTURE(r.element);
        CAPTURE(telemetry::to_string(r.kind));
        CHECK(h == doctest::Approx(truth).epsilon(1e-10));
    }
}

TEST_CASE("jacobian: V_MAG gradient at the real axis") {
    auto pu = net::to_per_unit(fixtures::two_bus());
    MeasurementSet set;
    set.records.push_back(rec("B2", MeasKind::V_MAG, MeasPhase::A, 2.4, 0.01));
    set.reindex();
    EstimationProblem problem(pu, set, {});
    StateVector x = problem.flat_start();
    auto J = problem.jacobian(x);
    const auto& idx = problem.index();
    int n2 = problem.nodes().require("B2", Phase::A);
    CHECK(J.coeff(0, idx.col_re(0, n2)) == doctest::Approx(1.0));
    CHECK(J.coeff(0, idx.col_im(0, n2)) == doctest::Approx(0.0));
}

TEST_CASE("jacobian: rows touch only incident bus-phases") {
    auto pu = net::to_per_unit(fixtures::feeder13());
    MeasurementSet set;
    set.records.push_back(rec("B07", MeasKind::P_INJ, MeasPhase::A, 0, 1.0));
    set.reindex();
    EstimationProblem problem(pu, set, {});
    auto J = problem.jacobian(problem.flat_start());
    const auto& idx = problem.index();
    // B07 hangs off B06 through L5; B04 is two hops away
    auto nontrivial = [&](const std::string& bus) {
        for (int n : problem.nodes().bus_nodes(bus)) {
            if (std::abs(J.coeff(0, idx.col_re(0, n))) > 0) return true;
            if (idx.im_off[n] >= 0 && std::abs(J.coeff(0, idx.col_im(0, n))) > 0) return true;
        }
        return false;
    };
    CHECK(nontrivial("B07"));
    CHECK(nontrivial("B06"));
    CHECK_FALSE(nontrivial("B04"));
    CHECK_FALSE(nontrivial("B13"));
}

TEST_CASE("jacobian: analytic matches central finite differences") {
    auto pu = net::to_per_unit(fixtures::feeder13());
    MeasurementSet set;
    for (const auto& r : all_kind_records()) set.records.push_back(r);
    set.reindex();
    EstimationSpec spec;
    // parameter columns audited too
    est::ParameterVariable scale;
    scale.element = "L2";
    scale.kind = net::ParameterKind::IMPEDANCE_SCALE;
    scale.lo = 0.2;
    scale.hi = 5.0;
    scale.initial = 1.0;
    est::ParameterVariable tap;
    tap.element = "X1";
    tap.kind = net::ParameterKind::TAP_RATIO;
    tap.lo = 0.9;
    tap.hi = 1.1;
    tap.initial = 1.0;
    spec.parameter_variables = {scale, tap};
    EstimationProblem problem(pu, set, spec);

    Rng rng(17);
    for (int trial = 0; trial < 10; ++trial) {
        StateVector x = problem.flat_start();
        for (int c = 0; c < x.x.size() - 2; ++c) x.x[c] += rng.uniform(-0.08, 0.08);
        x.x[x.x.size() - 2] = 1.0 + rng.uniform(-0.3, 0.3);    // impedance scale
        x.x[x.x.size() - 1] = 1.0 + rng.uniform(-0.08, 0.08);  // tap
        Eigen::MatrixXd Ja = Eigen::MatrixXd(problem.jacobian(x));
        Eigen::MatrixXd Jf = oracles::fd_jacobian(problem, x, 1e-6);
        double worst = 0;
        for (int r = 0; r < Ja.rows(); ++r)
            for (int c = 0; c < Ja.cols(); ++c) {
                double denom = std::max({1.0, std::abs(Ja(r, c)), std::abs(Jf(r, c))});
                worst = std::max(worst, std::abs(Ja(r, c) - Jf(r, c)) / denom);
            }
        CAPTURE(trial);
        CHECK(worst < 1e-6);
    }
}

TEST_CASE("problem: period bookkeeping and redundancy accounting") {
    auto pu = net::to_per_unit(fixtures::two_bus());
    MeasurementSet set;
    set.records.push_back(rec("B2", MeasKind::V_MAG, MeasPhase::A, 2.4, 0.01, Source::SCADA, 0));
    set.records.push_back(rec("B2", MeasKind::P_INJ, MeasPhase::A, -100, 1.0, Source::SCADA, 0));
    set.records.push_back(rec("B2", MeasKind::Q_INJ, MeasPhase::A, -50, 1.0, Source::SCADA, 0));
    set.records.push_back(rec("B1", MeasKind::V_MAG, MeasPhase::A, 2.4, 0.01, Source::SCADA, 0));
    set.reindex();
    EstimationProblem problem(pu, set, {});
    // states: B1.re (reference imaginary part eliminated), B2.re, B2.im
    CHECK(problem.state_dim() == 3);
    CHECK(problem.weighted_count() == 4);
    CHECK(problem.redundancy() == 4 - 3);

    // a period without measurements is rejected
    MeasurementSet gap = set;
    gap.records.push_back(rec("B2", MeasKind::V_MAG, MeasPhase::A, 2.4, 0.01, Source::SCADA, 900));
    gap.period_times = {0, 450, 900};  // middle period is empty
    CHECK_THROWS_WITH_AS(EstimationProblem(pu, gap, {}), doctest::Contains("period 1"),
                         InputError);
}

TEST_CASE("problem: discrete parameter variables are rejected") {
    auto pu = net::to_per_unit(fixtures::feeder13());
    MeasurementSet set;
    set.records.push_back(rec("B04", MeasKind::V_MAG, MeasPhase::A, 2.4, 0.01));
    set.reindex();
    EstimationSpec spec;
    est::ParameterVariable sw;
    sw.element = "S1";
    sw.kind = net::ParameterKind::SWITCH_STATUS;
    sw.values = {0.0, 1.0};
    spec.parameter_variables = {sw};
    CHECK_THROWS_AS(EstimationProblem(pu, set, spec), InputError);
}
