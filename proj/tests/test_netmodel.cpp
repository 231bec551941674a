#include <doctest.h>

#include "gridest/netmodel.hpp"
#include "support/fixtures.hpp"
#include "support/oracles.hpp"

using namespace gridest;
using net::FindingClass;
using net::NetworkModel;
using net::Phase;

TEST_CASE("validate: minimal consistent model is admissible") {
    auto m = fixtures::two_bus();
    auto rep = net::validate(m);
    CHECK(rep.ok());
}

TEST_CASE("validate: dangling bus reference is reported") {
    auto m = fixtures::two_bus();
    m.lines[0].to_bus = "B99";
    auto rep = net::validate(m);
    REQUIRE_FALSE(rep.ok());
    int dangling = 0;
    for (const auto& f : rep.findings)
        if (f.cls == FindingClass::DANGLING_REFERENCE && f.element == "L1") ++dangling;
    CHECK(dangling == 1);
}

TEST_CASE("validate: de-energized bridge line strands an island") {
    // 5-bus chain with the B2-B3 line de-energized: B3..B5 are stranded
    NetworkModel m = fixtures::four_bus();
    m.buses.push_back(m.buses.back());
    m.buses.back().id = "B5";
    m.lines.push_back(m.lines.back());
    m.lines.back().id = "L4";
    m.lines.back().from_bus = "B4";
    m.lines.back().to_bus = "B5";
    m.lines[1].status = false;  // bridge L2 between B2 and B3

    // oracle: connected components over energized elements
    auto comp = oracles::connected_components(m);
    int ref_comp = comp[0];
    std::vector<std::string> stranded;
    for (size_t i = 0; i < m.buses.size(); ++i)
        if (comp[i] != ref_comp) stranded.push_back(m.buses[i].id);
    REQUIRE(stranded == std::vector<std::string>{"B3", "B4", "B5"});

    auto rep = net::validate(m);
    REQUIRE_FALSE(rep.ok());
    bool found = false;
    for (const auto& f : rep.findings)
        if (f.cls == FindingClass::DISCONNECTED_ISLAND) {
            found = true;
            CHECK(f.element == "B3,B4,B5");
        }
    CHECK(found);
}

TEST_CASE("validate: singular impedance and duplicate ids") {
    auto m = fixtures::four_bus();
    m.lines[0].series_impedance.setZero();
    m.loads[0].id = "L2";  // collides with a line id
    auto rep = net::validate(m);
    bool singular = false, dup = false;
    for (const auto& f : rep.findings) {
        if (f.cls == FindingClass::SINGULAR_IMPEDANCE && f.element == "L1") singular = true;
        if (f.cls == FindingClass::DUPLICATE_ID && f.element == "L2") dup = true;
    }
    CHECK(singular);
    CHECK(dup);
}

TEST_CASE("to_per_unit: hand-computed impedance base") {
    // Z = 1+1j ohm at 0.4 kV and 1 MVA: Zbase = 0.16 ohm -> 6.25+6.25j pu
    auto m = fixtures::two_bus(1.0, 1.0, 10.0, 0.0);
    for (auto& b : m.buses) b.base_kv = 0.4;
    auto pu = net::to_per_unit(m);
    CHECK(pu.lines[0].series_impedance(0, 0).real() == doctest::Approx(6.25).epsilon(1e-12));
    CHECK(pu.lines[0].series_impedance(0, 0).imag() == doctest::Approx(6.25).epsilon(1e-12));
    // S = 10 kW on 1 MVA -> 0.01 pu
    CHECK(pu.loads[0].power[0].real() == doctest::Approx(0.01).epsilon(1e-12));
}

TEST_CASE("to_per_unit: idempotent") {
    auto m = net::to_per_unit(fixtures::feeder13());
    auto twice = net::to_per_unit(m);
    CHECK(twice.lines[2].series_impedance == m.lines[2].series_impedance);
    CHECK(twice.loads[1].power == m.loads[1].power);
    CHECK(twice.per_unit);
}

TEST_CASE("assemble_admittance: two-port block of a single line") {
    auto m = net::to_per_unit(fixtures::two_bus());
    auto Y = net::assemble_admittance(m);
    Complex z = m.lines[0].series_impedance(0, 0);
    Complex y = 1.0 / z;
    CHECK(std::abs(Y.coeff(0, 0) - y) < 1e-14);
    CHECK(std::abs(Y.coeff(0, 1) + y) < 1e-14);
    CHECK(std::abs(Y.coeff(1, 0) + y) < 1e-14);
    CHECK(std::abs(Y.coeff(1, 1) - y) < 1e-14);
}

TEST_CASE("assemble_admittance: open switch leaves no stamp") {
    auto m = net::to_per_unit(fixtures::feeder13());
    net::NodeMap nodes(m);
    auto Y = net::assemble_admittance(m, nodes);
    // S2 (open) ties B02 and B11: with L8/S1 removed as well, the B02-B11
    // coupling must be absent
    int a = nodes.require("B02", Phase::A);
    int b = nodes.require("B11", Phase::A);
    CHECK(Y.coeff(a, b) == Complex(0.0, 0.0));
}

TEST_CASE("assemble_admittance: matches the dense stamping oracle") {
    auto m = net::to_per_unit(fixtures::four_bus());
    auto Y = Eigen::MatrixXcd(net::assemble_admittance(m));
    auto Yo = oracles::dense_line_admittance(m);
    CHECK((Y - Yo).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("admittance symmetry holds for every fixture") {
    for (auto m : {fixtures::four_bus(), fixtures::feeder13(), fixtures::feeder100(3, 60)}) {
        auto pu = net::to_per_unit(m);
        Eigen::MatrixXcd Y = Eigen::MatrixXcd(net::assemble_admittance(pu));
        CAPTURE(m.buses.size());
        CHECK((Y - Y.transpose()).cwiseAbs().maxCoeff() == 0.0);
    }
}

TEST_CASE("shunt-free row sums vanish per island") {
    // lines and unity-tap wye-wye transformers only; ratio-changing or
    // delta-grounding elements inject zero-sequence like a shunt would
    auto m = fixtures::four_bus();
    auto pu = net::to_per_unit(m);
    Eigen::MatrixXcd Y = Eigen::MatrixXcd(net::assemble_admittance(pu));
    for (int i = 0; i < Y.rows(); ++i) CHECK(std::abs(Y.row(i).sum()) < 1e-12);
}

TEST_CASE("overrides: identity scale leaves the admittance bit-identical") {
    auto m = net::to_per_unit(fixtures::feeder13());
    net::ParameterAssignment ov;
    for (const auto& l : m.lines)
        if (!l.is_switch) ov.push_back({l.id, net::ParameterKind::IMPEDANCE_SCALE, 1.0});
    auto m2 = net::apply_parameter_overrides(m, ov);
    Eigen::MatrixXcd Y1 = Eigen::MatrixXcd(net::assemble_admittance(m));
    Eigen::MatrixXcd Y2 = Eigen::MatrixXcd(net::assemble_admittance(m2));
    CHECK((Y1 - Y2).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("overrides: switch opening removes its blocks") {
    auto m = net::to_per_unit(fixtures::feeder13());
    net::NodeMap nodes(m);
    auto m2 = net::apply_parameter_overrides(m, {{"S1", net::ParameterKind::SWITCH_STATUS, 0.0}});
    auto Y2 = net::assemble_admittance(m2, nodes);
    int a = nodes.require("B05", Phase::A);
    int b = nodes.require("B10", Phase::A);
    CHECK(Y2.coeff(a, b) == Complex(0.0, 0.0));
    // original untouched
    CHECK(m.find_line("S1")->status);
}

TEST_CASE("overrides: tap range enforcement") {
    auto m = net::to_per_unit(fixtures::feeder13());
    // range +-8 x 0.0125 around 1.0 -> [0.9, 1.1]
    auto ok = net::apply_parameter_overrides(m, {{"X1", net::ParameterKind::TAP_RATIO, 1.05}});
    CHECK(ok.find_transformer("X1")->tap_ratio == doctest::Approx(1.05));
    CHECK_THROWS_AS(
        net::apply_parameter_overrides(m, {{"X1", net::ParameterKind::TAP_RATIO, 1.30}}),
        InputError);
    CHECK_THROWS_AS(
        net::apply_parameter_overrides(m, {{"NOPE", net::ParameterKind::TAP_RATIO, 1.0}}),
        InputError);
}

TEST_CASE("delta-wye transformer: +30 degree shift and symmetric stamp") {
    auto m = net::to_per_unit(fixtures::feeder13());
    net::NodeMap nodes(m);
    auto stamps = net::assemble_stamps(m, nodes);
    const net::ElementStamp* x2 = nullptr;
    for (const auto& st : stamps)
        if (st.id == "X2") x2 = &st;
    REQUIRE(x2 != nullptr);
    CHECK((x2->Y - x2->Y.transpose()).cwiseAbs().maxCoeff() < 1e-14);
    // no-load secondary voltage leads by +30 degrees for a positive-sequence
    // primary: solve Ytt Us = -Ytf Uf
    Eigen::Vector3cd Uf(std::polar(1.0, 0.0), std::polar(1.0, -2.0 * kPi / 3.0),
                        std::polar(1.0, 2.0 * kPi / 3.0));
    Eigen::Matrix3cd Ytt = x2->Y.bottomRightCorner(3, 3);
    Eigen::Matrix3cd Ytf = x2->Y.bottomLeftCorner(3, 3);
    Eigen::Vector3cd Us = Ytt.fullPivLu().solve(-Ytf * Uf);
    double shift = std::arg(Us[0]) - std::arg(Uf[0]);
    CHECK(shift == doctest::Approx(kPi / 6.0).epsilon(1e-9));
}
