#include "support/fixtures.hpp"

#include <cmath>

namespace gridest::fixtures {

using net::Bus;
using net::GeneratorModel;
using net::LineModel;
using net::LoadModel;
using net::NetworkModel;
using net::Phase;
using net::PhaseSet;
using net::TransformerModel;

namespace {

const PhaseSet kAbc{Phase::A, Phase::B, Phase::C};

Eigen::MatrixXcd z3(double scale) {
    Eigen::MatrixXcd z(3, 3);
    z << Complex(0.347, 0.866), Complex(0.156, 0.502), Complex(0.158, 0.424),
        Complex(0.156, 0.502), Complex(0.337, 0.871), Complex(0.153, 0.385),
        Complex(0.158, 0.424), Complex(0.153, 0.385), Complex(0.341, 0.853);
    return z * scale;
}

Eigen::MatrixXcd z2(double scale) {
    Eigen::MatrixXcd z(2, 2);
    z << Complex(0.347, 0.866), Complex(0.156, 0.502),
        Complex(0.156, 0.502), Complex(0.337, 0.871);
    return z * scale;
}

Eigen::MatrixXcd z1(double scale) {
    Eigen::MatrixXcd z(1, 1);
    z << Complex(0.42, 0.89);
    return z * scale;
}

Bus make_bus(const std::string& id, PhaseSet phases, double kv, bool ref = false) {
    Bus b;
    b.id = id;
    b.phases = std::move(phases);
    b.base_kv = kv;
    b.vmin = 0.85;
    b.vmax = 1.15;
    b.is_reference = ref;
    return b;
}

LineModel make_line(const std::string& id, const std::string& from, const std::string& to,
                    PhaseSet phases, Eigen::MatrixXcd z, double length = 1.0) {
    LineModel l;
    l.id = id;
    l.from_bus = from;
    l.to_bus = to;
    l.phases = std::move(phases);
    l.series_impedance = std::move(z);
    l.length_km = length;
    return l;
}

LineModel make_switch(const std::string& id, const std::string& from, const std::string& to,
                      PhaseSet phases, bool closed) {
    LineModel l;
    l.id = id;
    l.from_bus = from;
    l.to_bus = to;
    l.phases = std::move(phases);
    l.is_switch = true;
    l.status = closed;
    return l;
}

LoadModel make_load(const std::string& id, const std::string& bus, PhaseSet phases,
                    std::vector<Complex> power) {
    LoadModel d;
    d.id = id;
    d.bus = bus;
    d.phases = std::move(phases);
    d.power = std::move(power);
    return d;
}

} // namespace

NetworkModel two_bus(double z_re_ohm, double z_im_ohm, double p_kw, double q_kvar) {
    NetworkModel m;
    m.s_base_mva = 1.0;
    m.buses.push_back(make_bus("B1", {Phase::A}, 2.4, true));
    m.buses.push_back(make_bus("B2", {Phase::A}, 2.4));
    Eigen::MatrixXcd z(1, 1);
    z << Complex(z_re_ohm, z_im_ohm);
    m.lines.push_back(make_line("L1", "B1", "B2", {Phase::A}, z));
    m.loads.push_back(make_load("D1", "B2", {Phase::A}, {Complex(p_kw, q_kvar)}));
    return m;
}

NetworkModel four_bus() {
    NetworkModel m;
    m.s_base_mva = 1.0;
    m.buses.push_back(make_bus("B1", kAbc, 2.4, true));
    m.buses.push_back(make_bus("B2", kAbc, 2.4));
    m.buses.push_back(make_bus("B3", kAbc, 2.4));
    m.buses.push_back(make_bus("B4", kAbc, 2.4));
    m.lines.push_back(make_line("L1", "B1", "B2", kAbc, z3(0.45)));
    m.lines.push_back(make_line("L2", "B2", "B3", kAbc, z3(1.3)));
    m.lines.push_back(make_line("L3", "B3", "B4", kAbc, z3(0.35)));
    m.loads.push_back(make_load("D1", "B2", kAbc,
                                {Complex(120, 40), Complex(90, 30), Complex(150, 55)}));
    m.loads.push_back(make_load("D2", "B3", kAbc,
                                {Complex(70, 25), Complex(140, 45), Complex(95, 30)}));
    m.loads.push_back(make_load("D3", "B4", kAbc,
                                {Complex(160, 60), Complex(80, 20), Complex(110, 35)}));
    return m;
}

NetworkModel feeder13() {
    NetworkModel m;
    m.s_base_mva = 1.0;
    m.buses.push_back(make_bus("B01", kAbc, 7.2, true));
    for (int i = 2; i <= 12; ++i) {
        std::string id = i < 10 ? "B0" + std::to_string(i) : "B" + std::to_string(i);
        PhaseSet phases = kAbc;
        if (i == 6) phases = {Phase::A, Phase::B};
        if (i == 7) phases = {Phase::A};
        if (i == 8 || i == 9) phases = {Phase::C};
        m.buses.push_back(make_bus(id, phases, 2.4));
    }
    m.buses.push_back(make_bus("B13", kAbc, 0.24));

    TransformerModel x1;
    x1.id = "X1";
    x1.from_bus = "B01";
    x1.to_bus = "B02";
    x1.connection = net::WindingConnection::WYE_WYE;
    x1.series_impedance = Complex(0.005, 0.03);
    x1.tap_ratio = 1.0;
    x1.tap_step = 0.0125;
    x1.tap_min = -8;
    x1.tap_max = 8;
    m.transformers.push_back(x1);

    m.lines.push_back(make_line("L1", "B02", "B03", kAbc, z3(0.45)));
    m.lines.push_back(make_line("L2", "B03", "B04", kAbc, z3(0.5)));
    m.lines.push_back(make_line("L3", "B04", "B05", kAbc, z3(0.4)));
    m.lines.push_back(make_line("L4", "B03", "B06", {Phase::A, Phase::B}, z2(0.35)));
    m.lines.push_back(make_line("L5", "B06", "B07", {Phase::A}, z1(0.3)));
    m.lines.push_back(make_line("L6", "B04", "B08", {Phase::C}, z1(0.3)));
    m.lines.push_back(make_line("L7", "B08", "B09", {Phase::C}, z1(0.4)));
    m.lines.push_back(make_switch("S1", "B05", "B10", kAbc, true));
    m.lines.push_back(make_line("L8", "B10", "B11", kAbc, z3(0.35)));
    m.lines.push_back(make_switch("S2", "B02", "B11", kAbc, false));
    {
        LineModel l9 = make_line("L9", "B02", "B12", kAbc, z3(0.5));
        Eigen::MatrixXcd ysh = Eigen::MatrixXcd::Zero(3, 3);
        ysh.diagonal().setConstant(Complex(0.0, 3e-6));
        l9.shunt_admittance = ysh;
        m.lines.push_back(l9);
    }

    TransformerModel x2;
    x2.id = "X2";
    x2.from_bus = "B12";
    x2.to_bus = "B13";
    x2.connection = net::WindingConnection::DELTA_WYE;
    x2.series_impedance = Complex(0.02, 0.08);
    m.transformers.push_back(x2);

    m.loads.push_back(make_load("D1", "B04", kAbc,
                                {Complex(60, 22), Complex(42, 14), Complex(76, 27)}));
    m.loads.push_back(make_load("D2", "B05", kAbc,
                                {Complex(52, 17), Complex(71, 25), Complex(38, 11)}));
    m.loads.push_back(make_load("D3", "B07", {Phase::A}, {Complex(30, 10)}));
    m.loads.push_back(make_load("D4", "B09", {Phase::C}, {Complex(33, 12)}));
    m.loads.push_back(make_load("D5", "B11", kAbc,
                                {Complex(46, 15), Complex(55, 18), Complex(65, 22)}));
    m.loads.push_back(make_load("D6", "B13", kAbc,
                                {Complex(18, 6), Complex(22, 8), Complex(14, 5)}));
    m.loads.push_back(make_load("D7", "B06", {Phase::B}, {Complex(25, 8)}));
    return m;
}

NetworkModel feeder13_customers(std::vector<CustomerInfo>* customers) {
    NetworkModel m = feeder13();
    struct Spot {
        const char* bus;
        Phase phase;
        double p, q;
    };
    // one customer per bus-phase; the host buses carry no other load on the
    // assigned phase
    const Spot spots[] = {
        {"B03", Phase::A, 24, 8},  {"B03", Phase::B, 31, 10}, {"B03", Phase::C, 18, 6},
        {"B10", Phase::A, 27, 9},  {"B10", Phase::B, 16, 5},  {"B10", Phase::C, 33, 11},
        {"B12", Phase::A, 21, 7},  {"B12", Phase::B, 26, 8},  {"B12", Phase::C, 15, 5},
        {"B06", Phase::A, 29, 10},
    };
    int i = 1;
    for (const Spot& s : spots) {
        std::string id = "C" + std::to_string(i++);
        m.loads.push_back(make_load(id, s.bus, {s.phase}, {Complex(s.p, s.q)}));
        if (customers) customers->push_back({id, s.bus, s.phase});
    }
    return m;
}

NetworkModel feeder100(std::uint64_t seed, int n_buses) {
    Rng rng(sub_seed(seed, "feeder"));
    NetworkModel m;
    m.s_base_mva = 1.0;
    m.buses.push_back(make_bus("B001", kAbc, 7.2, true));

    auto bus_name = [](int i) {
        char buf[8];
        std::snprintf(buf, sizeof(buf), "B%03d", i);
        return std::string(buf);
    };

    TransformerModel x1;
    x1.id = "X1";
    x1.from_bus = "B001";
    x1.to_bus = "B002";
    x1.connection = net::WindingConnection::WYE_WYE;
    x1.series_impedance = Complex(0.008, 0.04);
    x1.tap_step = 0.0125;
    x1.tap_min = -8;
    x1.tap_max = 8;
    m.transformers.push_back(x1);

    const int trunk_len = std::min(30, n_buses / 3);
    int next_bus = 2;
    int line_no = 1;
    std::vector<int> trunk;
    m.buses.push_back(make_bus(bus_name(2), kAbc, 2.4));
    trunk.push_back(2);
    ++next_bus;
    for (int i = 1; i < trunk_len; ++i) {
        int b = next_bus++;
        m.buses.push_back(make_bus(bus_name(b), kAbc, 2.4));
        double len = rng.uniform(0.04, 0.12);
        if (i == trunk_len / 2) {
            m.lines.push_back(make_switch("S1", bus_name(trunk.back()), bus_name(b), kAbc, true));
        } else {
            m.lines.push_back(make_line("L" + std::to_string(line_no++), bus_name(trunk.back()),
                                        bus_name(b), kAbc, z3(len)));
        }
        trunk.push_back(b);
    }

    // laterals hang off trunk buses until the bus budget is used
    std::size_t attach = 1;
    while (next_bus <= n_buses && attach < trunk.size()) {
        int root = trunk[attach];
        attach += 2;
        int chain = 1 + static_cast<int>(rng.index(3));  // 1..3 buses
        int pick = static_cast<int>(rng.index(3));
        PhaseSet phases;
        if (chain == 1 && rng.uniform() < 0.5)
            phases = PhaseSet{static_cast<Phase>(pick)};
        else if (rng.uniform() < 0.3)
            phases = pick == 0 ? PhaseSet{Phase::A, Phase::B}
                               : (pick == 1 ? PhaseSet{Phase::B, Phase::C}
                                            : PhaseSet{Phase::A, Phase::C});
        else
            phases = kAbc;
        std::string prev = bus_name(root);
        for (int cidx = 0; cidx < chain && next_bus <= n_buses; ++cidx) {
            int b = next_bus++;
            m.buses.push_back(make_bus(bus_name(b), phases, 2.4));
            double len = rng.uniform(0.05, 0.15);
            Eigen::MatrixXcd z;
            if (phases.size() == 3)
                z = z3(len);
            else if (phases.size() == 2)
                z = z2(len);
            else
                z = z1(len);
            m.lines.push_back(
                make_line("L" + std::to_string(line_no++), prev, bus_name(b), phases, z));
            prev = bus_name(b);
            // every lateral bus carries a load
            std::vector<Complex> power;
            for (std::size_t ph = 0; ph < phases.size(); ++ph) {
                double p = rng.uniform(8.0, 25.0);
                power.emplace_back(p, p * rng.uniform(0.25, 0.45));
            }
            m.loads.push_back(make_load("D" + bus_name(b).substr(1), bus_name(b), phases, power));
        }
    }
    // normally-open tie between the trunk end and a mid-trunk bus
    m.lines.push_back(
        make_switch("S2", bus_name(trunk.back()), bus_name(trunk[trunk.size() / 3]), kAbc, false));
    // a few trunk buses carry aggregated loads as well
    for (std::size_t i = 2; i + 1 < trunk.size(); i += 5) {
        std::vector<Complex> power;
        for (int ph = 0; ph < 3; ++ph) {
            double p = rng.uniform(15.0, 40.0);
            power.emplace_back(p, p * rng.uniform(0.25, 0.45));
        }
        m.loads.push_back(
            make_load("D" + bus_name(trunk[i]).substr(1), bus_name(trunk[i]), kAbc, power));
    }
    return m;
}

NetworkModel ten_bus() {
    NetworkModel m;
    m.s_base_mva = 1.0;
    m.buses.push_back(make_bus("N01", {Phase::A}, 2.4, true));
    for (int i = 2; i <= 10; ++i) {
        char buf[8];
        std::snprintf(buf, sizeof(buf), "N%02d", i);
        m.buses.push_back(make_bus(buf, {Phase::A}, 2.4));
    }
    for (int i = 1; i < 10; ++i) {
        char f[8], t[8];
        std::snprintf(f, sizeof(f), "N%02d", i);
        std::snprintf(t, sizeof(t), "N%02d", i + 1);
        m.lines.push_back(make_line("K" + std::to_string(i), f, t, {Phase::A}, z1(0.9)));
    }
    for (int i = 3; i <= 10; ++i) {
        char b[8];
        std::snprintf(b, sizeof(b), "N%02d", i);
        m.loads.push_back(make_load("D" + std::to_string(i), b, {Phase::A}, {Complex(30, 10)}));
    }
    return m;
}

pf::ProfileSet make_profiles(const NetworkModel& model, int periods, std::uint64_t seed,
                             double jitter) {
    pf::ProfileSet out;
    Rng rng(sub_seed(seed, "profiles"));
    for (const auto& d : model.loads) {
        double phase_shift = rng.uniform(0.0, 2.0 * kPi);
        double depth = rng.uniform(0.25, 0.45);
        std::vector<pf::ProfilePoint> series(periods);
        for (int t = 0; t < periods; ++t) {
            double s = 0.7 + depth * std::sin(2.0 * kPi * t / std::max(periods, 2) + phase_shift) +
                       jitter * rng.normal();
            s = std::max(0.15, s);
            series[t] = {s, s};
        }
        out[d.id] = std::move(series);
    }
    return out;
}

} // namespace gridest::fixtures
