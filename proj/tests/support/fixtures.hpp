#pragma once

// Shared desk-scale feeders. All builders return models in input units
// (ohm/kW); call net::to_per_unit before solving.

#include "gridest/netmodel.hpp"
#include "gridest/powerflow.hpp"

namespace gridest::fixtures {

/// 2-bus single-phase feeder: reference, one line, one load.
net::NetworkModel two_bus(double z_re_ohm = 0.0576, double z_im_ohm = 0.0576,
                          double p_kw = 100.0, double q_kvar = 50.0);

/// 4-bus three-phase chain with unbalanced loads; lines only, shunt free.
net::NetworkModel four_bus();

/// 13-bus unbalanced feeder: HV source, wye-wye head transformer with taps,
/// mixed 1/2/3-phase laterals, two switches (one normally open), a delta-wye
/// LV transformer and several zero-injection junction buses.
net::NetworkModel feeder13();

/// feeder13 with ten single-phase customers attached at three-phase buses,
/// one customer per bus-phase; used by the phase-assignment experiments.
struct CustomerInfo {
    std::string load_id;
    std::string bus;
    net::Phase true_phase;
};
net::NetworkModel feeder13_customers(std::vector<CustomerInfo>* customers = nullptr);

/// Radial feeder with `n_buses` total buses (default 100): transformer head,
/// three-phase trunk, mixed-phase laterals, two switches. Deterministic per
/// seed.
net::NetworkModel feeder100(std::uint64_t seed = 7, int n_buses = 100);

/// 10-bus single-phase chain for the placement experiments.
net::NetworkModel ten_bus();

/// Sinusoidal daily-shape load profiles with seeded per-load phase shifts
/// and per-period jitter.
pf::ProfileSet make_profiles(const net::NetworkModel& model, int periods, std::uint64_t seed,
                             double jitter = 0.08);

} // namespace gridest::fixtures
