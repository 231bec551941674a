#include "gridest/powerflow.hpp"

#include <Eigen/SparseLU>
#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

namespace gridest::pf {

using net::Phase;

std::array<Complex, 3> nominal_reference() {
    return {Complex(1.0, 0.0), std::polar(1.0, -2.0 * kPi / 3.0), std::polar(1.0, 2.0 * kPi / 3.0)};
}

double nominal_angle(Phase p) {
    switch (p) {
        case Phase::A: return 0.0;
        case Phase::B: return -2.0 * kPi / 3.0;
        case Phase::C: return 2.0 * kPi / 3.0;
    }
    return 0.0;
}

const PowerFlowSolution::BranchFlow* PowerFlowSolution::find_flow(const std::string& element) const {
    for (const auto& f : flows)
        if (f.element == element) return &f;
    return nullptr;
}

namespace {

double wrap_angle(double a) {
    while (a > kPi) a -= 2.0 * kPi;
    while (a <= -kPi) a += 2.0 * kPi;
    return a;
}

Eigen::VectorXcd specified_injections(const NetworkModel& model, const NodeMap& nodes) {
    Eigen::VectorXcd s = Eigen::VectorXcd::Zero(nodes.count());
    for (const auto& d : model.loads)
        for (size_t k = 0; k < d.phases.size(); ++k)
            s[nodes.require(d.bus, d.phases[k])] -= d.power[k];
    for (const auto& g : model.generators)
        for (size_t k = 0; k < g.phases.size(); ++k)
            s[nodes.require(g.bus, g.phases[k])] += g.power[k];
    return s;
}

} // namespace

PowerFlowSolution solve_pf(const NetworkModel& model, const std::array<Complex, 3>& ref_voltage,
                           double tol, int max_iter, const Eigen::VectorXcd* warm_start) {
    if (!model.per_unit) throw InputError("solve_pf requires a per-unit model");
    NodeMap nodes(model);
    const int n = nodes.count();
    auto Y = net::assemble_admittance(model, nodes);
    Eigen::VectorXcd s_spec = specified_injections(model, nodes);

    std::vector<bool> is_ref(n, false);
    for (int r : nodes.reference_nodes()) is_ref[r] = true;

    std::vector<int> eq_of(n, -1);
    int n_eq = 0;
    for (int i = 0; i < n; ++i)
        if (!is_ref[i]) eq_of[i] = n_eq++;

    Eigen::VectorXcd U(n);
    for (int i = 0; i < n; ++i)
        U[i] = ref_voltage[static_cast<int>(nodes.node(i).second)];
    if (warm_start) {
        if (warm_start->size() != n) throw InputError("warm start dimension mismatch");
        U = *warm_start;
        for (int r : nodes.reference_nodes())
            U[r] = ref_voltage[static_cast<int>(nodes.node(r).second)];
    }

    auto mismatch = [&](const Eigen::VectorXcd& V) {
        Eigen::VectorXcd I = Y * V;
        Eigen::VectorXcd F(n_eq);
        for (int i = 0; i < n; ++i)
            if (eq_of[i] >= 0) F[eq_of[i]] = s_spec[i] - V[i] * std::conj(I[i]);
        return F;
    };

    std::vector<double> trace;
    int iterations = 0;
    double mism = 0.0;
    for (int iter = 0;; ++iter) {
        Eigen::VectorXcd F = mismatch(U);
        mism = n_eq == 0 ? 0.0 : F.cwiseAbs().maxCoeff();
        trace.push_back(mism);
        iterations = iter;
        if (mism < tol) break;
        if (iter >= max_iter) {
            std::ostringstream os;
            os << "power flow did not converge after " << max_iter
               << " iterations (mismatch " << mism << " pu)";
            throw PfDivergence(os.str(), iter, trace);
        }

        // dS_n/dUre_m = U_n conj(Y_nm) + [n==m] conj(I_n)
        // dS_n/dUim_m = -j U_n conj(Y_nm) + [n==m] j conj(I_n)
        Eigen::VectorXcd I = Y * U;
        std::vector<Eigen::Triplet<double>> trip;
        trip.reserve(static_cast<size_t>(Y.nonZeros()) * 4 + static_cast<size_t>(n_eq) * 4);
        for (int col = 0; col < Y.outerSize(); ++col) {
            if (eq_of[col] < 0) continue;
            for (Eigen::SparseMatrix<Complex>::InnerIterator it(Y, col); it; ++it) {
                int row = static_cast<int>(it.row());
                if (eq_of[row] < 0) continue;
                Complex dre = U[row] * std::conj(it.value());
                Complex dim = Complex(0.0, -1.0) * dre;
                int r2 = 2 * eq_of[row], c2 = 2 * eq_of[col];
                trip.emplace_back(r2, c2, dre.real());
                trip.emplace_back(r2 + 1, c2, dre.imag());
                trip.emplace_back(r2, c2 + 1, dim.real());
                trip.emplace_back(r2 + 1, c2 + 1, dim.imag());
            }
        }
        for (int i = 0; i < n; ++i) {
            if (eq_of[i] < 0) continue;
            Complex dre = std::conj(I[i]);
            Complex dim = Complex(0.0, 1.0) * dre;
            int r2 = 2 * eq_of[i];
            trip.emplace_back(r2, r2, dre.real());
            trip.emplace_back(r2 + 1, r2, dre.imag());
            trip.emplace_back(r2, r2 + 1, dim.real());
            trip.emplace_back(r2 + 1, r2 + 1, dim.imag());
        }
        Eigen::SparseMatrix<double> J(2 * n_eq, 2 * n_eq);
        J.setFromTriplets(trip.begin(), trip.end());
        Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
        lu.compute(J);
        if (lu.info() != Eigen::Success)
            throw Error("power flow Jacobian is singular: " + lu.lastErrorMessage());
        Eigen::VectorXd rhs(2 * n_eq);
        for (int k = 0; k < n_eq; ++k) {
            rhs[2 * k] = F[k].real();
            rhs[2 * k + 1] = F[k].imag();
        }
        Eigen::VectorXd dx = lu.solve(rhs);

        // step halving when the full Newton step overshoots
        double alpha = 1.0;
        Eigen::VectorXcd U_next;
        for (int h = 0; h < 8; ++h) {
            U_next = U;
            for (int i = 0; i < n; ++i)
                if (eq_of[i] >= 0)
                    U_next[i] += alpha * Complex(dx[2 * eq_of[i]], dx[2 * eq_of[i] + 1]);
            double m_next = n_eq == 0 ? 0.0 : mismatch(U_next).cwiseAbs().maxCoeff();
            if (m_next < mism || alpha < 1.0 / 128.0) break;
            alpha *= 0.5;
        }
        U = U_next;
    }

    PowerFlowSolution sol;
    sol.voltages = U;
    Eigen::VectorXcd I = Y * U;
    sol.injections = U.cwiseProduct(I.conjugate());
    sol.iterations = iterations;
    sol.max_mismatch = mism;

    for (const auto& st : net::assemble_stamps(model, nodes)) {
        int np = static_cast<int>(st.nodes.size()) / 2;
        PowerFlowSolution::BranchFlow bf;
        bf.element = st.id;
        for (int k = 0; k < np; ++k) bf.phases.push_back(nodes.node(st.nodes[k]).second);
        Eigen::VectorXcd Uf(np), Ut(np);
        for (int k = 0; k < np; ++k) {
            Uf[k] = U[st.nodes[k]];
            Ut[k] = U[st.nodes[np + k]];
        }
        Eigen::VectorXcd If = st.Y.topLeftCorner(np, np) * Uf + st.Y.topRightCorner(np, np) * Ut;
        Eigen::VectorXcd It = st.Y.bottomLeftCorner(np, np) * Uf + st.Y.bottomRightCorner(np, np) * Ut;
        bf.from_S = Uf.cwiseProduct(If.conjugate());
        bf.to_S = Ut.cwiseProduct(It.conjugate());
        if (st.is_line)
            bf.series_I = st.Y_series.topLeftCorner(np, np) * (Uf - Ut);
        else
            bf.series_I = Eigen::VectorXcd::Zero(np);
        sol.flows.push_back(std::move(bf));
    }
    return sol;
}

NetworkModel scaled_model(const NetworkModel& model, const ProfileSet& profiles, int period) {
    NetworkModel out = model;
    auto apply = [&](const std::string& id, std::vector<Complex>& power) {
        auto it = profiles.find(id);
        if (it == profiles.end()) return;
        if (period >= static_cast<int>(it->second.size()))
            throw InputError("profile for '" + id + "' does not cover period " +
                             std::to_string(period));
        const auto& pt = it->second[period];
        for (auto& s : power) s = Complex(s.real() * pt.p_scale, s.imag() * pt.q_scale);
    };
    for (auto& d : out.loads) apply(d.id, d.power);
    for (auto& g : out.generators) apply(g.id, g.power);
    return out;
}

std::vector<PowerFlowSolution> time_series_pf(const NetworkModel& model, const ProfileSet& profiles,
                                              int periods, const std::array<Complex, 3>& ref_voltage,
                                              double tol, int max_iter) {
    for (const auto& [id, pts] : profiles)
        if (static_cast<int>(pts.size()) < periods)
            throw InputError("profile for '" + id + "' covers " + std::to_string(pts.size()) +
                             " of " + std::to_string(periods) + " periods");
    std::vector<PowerFlowSolution> out(periods);
    std::vector<std::string> errors(periods);
    int threads = parallel::max_threads();
#pragma omp parallel for schedule(dynamic) num_threads(threads) if (threads > 1)
    for (int t = 0; t < periods; ++t) {
        try {
            out[t] = solve_pf(scaled_model(model, profiles, t), ref_voltage, tol, max_iter);
        } catch (const std::exception& e) {
            errors[t] = e.what();
        }
    }
    for (int t = 0; t < periods; ++t)
        if (!errors[t].empty())
            throw ConvergenceError("period " + std::to_string(t) + ": " + errors[t], t);
    return out;
}

// --- synthetic measurements -----------------------------------------------

namespace {

std::pair<std::string, bool> split_end(const std::string& element) {
    auto pos = element.find(':');
    if (pos == std::string::npos) return {element, false};
    std::string suffix = element.substr(pos + 1);
    if (suffix == "to") return {element.substr(0, pos), true};
    if (suffix == "from") return {element.substr(0, pos), false};
    throw InputError("bad element end suffix '" + element + "' (use id, id:from or id:to)");
}

int phase_slot(const net::PhaseSet& phases, MeasPhase p) {
    for (size_t k = 0; k < phases.size(); ++k)
        if (static_cast<int>(phases[k]) == static_cast<int>(p)) return static_cast<int>(k);
    return -1;
}

} // namespace

double measured_quantity(const NetworkModel& model, const NodeMap& nodes,
                         const PowerFlowSolution& sol, const std::string& element, MeasKind kind,
                         MeasPhase phase) {
    double p_base_kw = model.s_base_mva * 1000.0;
    auto [base, to_end] = split_end(element);

    if (const auto* bus = model.find_bus(base)) {
        if (kind == MeasKind::V_MAG || kind == MeasKind::V_ANGLE_REL) {
            if (phase == MeasPhase::AGG)
                throw InputError("aggregate phase not allowed for " + telemetry::to_string(kind));
            int node = nodes.require(base, static_cast<Phase>(phase));
            if (kind == MeasKind::V_MAG) return std::abs(sol.voltages[node]) * bus->base_kv;
            return wrap_angle(std::arg(sol.voltages[node]) -
                              nominal_angle(static_cast<Phase>(phase)));
        }
        if (kind == MeasKind::P_INJ || kind == MeasKind::Q_INJ) {
            Complex s(0.0, 0.0);
            if (phase == MeasPhase::AGG) {
                for (int node : nodes.bus_nodes(base)) s += sol.injections[node];
            } else {
                s = sol.injections[nodes.require(base, static_cast<Phase>(phase))];
            }
            return (kind == MeasKind::P_INJ ? s.real() : s.imag()) * p_base_kw;
        }
        throw InputError("kind " + telemetry::to_string(kind) + " not supported on bus " + base);
    }

    const auto* line = model.find_line(base);
    if (line || model.find_transformer(base)) {
        const auto* bf = sol.find_flow(base);
        if (!bf) throw InputError("no flow solution for de-energized element '" + base + "'");
        if (kind == MeasKind::P_FLOW || kind == MeasKind::Q_FLOW) {
            const Eigen::VectorXcd& S = to_end ? bf->to_S : bf->from_S;
            Complex s(0.0, 0.0);
            if (phase == MeasPhase::AGG) {
                s = S.sum();
            } else {
                int slot = phase_slot(bf->phases, phase);
                if (slot < 0) throw InputError("phase not present on line " + base);
                s = S[slot];
            }
            return (kind == MeasKind::P_FLOW ? s.real() : s.imag()) * p_base_kw;
        }
        if (kind == MeasKind::I_MAG && line) {
            if (phase == MeasPhase::AGG) throw InputError("aggregate phase not allowed for I_MAG");
            int slot = phase_slot(bf->phases, phase);
            if (slot < 0) throw InputError("phase not present on line " + base);
            const net::Bus* fb = model.find_bus(line->from_bus);
            double i_base_a = 1000.0 * model.s_base_mva / fb->base_kv;
            return std::abs(bf->series_I[slot]) * i_base_a;
        }
        throw InputError("kind " + telemetry::to_string(kind) + " not supported on '" + base + "'");
    }

    // load / generator meters read the bus-phase quantities at the unit's
    // connection point
    const net::LoadModel* load = model.find_load(base);
    const net::GeneratorModel* gen = load ? nullptr : model.find_generator(base);
    if (load || gen) {
        const std::string& bus_id = load ? load->bus : gen->bus;
        const net::PhaseSet& phases = load ? load->phases : gen->phases;
        const net::Bus* bus = model.find_bus(bus_id);
        if (kind == MeasKind::V_MAG) {
            if (phases.size() != 1)
                throw InputError("V_MAG on multi-phase unit '" + base + "'");
            int node = nodes.require(bus_id, phases[0]);
            return std::abs(sol.voltages[node]) * bus->base_kv;
        }
        if (kind == MeasKind::P_INJ || kind == MeasKind::Q_INJ) {
            Complex s(0.0, 0.0);
            if (phase == MeasPhase::AGG) {
                for (Phase p : phases) s += sol.injections[nodes.require(bus_id, p)];
            } else {
                int slot = phase_slot(phases, phase);
                Phase p = slot >= 0 ? phases[static_cast<size_t>(slot)] : phases[0];
                if (phases.size() != 1 && slot < 0)
                    throw InputError("phase not present on unit '" + base + "'");
                s = sol.injections[nodes.require(bus_id, p)];
            }
            return (kind == MeasKind::P_INJ ? s.real() : s.imag()) * p_base_kw;
        }
        throw InputError("kind " + telemetry::to_string(kind) + " not supported on unit " + base);
    }

    throw InputError("plan references unknown element '" + base + "'");
}

double default_sigma_floor(MeasKind kind) {
    switch (kind) {
        case MeasKind::V_MAG: return 1e-3;
        case MeasKind::P_INJ:
        case MeasKind::P_FLOW:
        case MeasKind::Q_INJ:
        case MeasKind::Q_FLOW: return 0.5;
        case MeasKind::I_MAG: return 0.5;
        case MeasKind::V_ANGLE_REL: return 1e-3;
    }
    return 1e-3;
}

MeasurementPlan plan_full_injection(const NetworkModel& model) {
    MeasurementPlan plan;
    const net::Bus& ref = model.reference_bus();
    for (const auto& b : model.buses) {
        for (Phase p : b.phases) {
            if (b.is_reference) continue;
            plan.entries.push_back({b.id, MeasKind::P_INJ, static_cast<MeasPhase>(p),
                                    Source::SCADA, 0.005, 0.0, false});
            plan.entries.push_back({b.id, MeasKind::Q_INJ, static_cast<MeasPhase>(p),
                                    Source::SCADA, 0.005, 0.0, false});
        }
    }
    for (Phase p : ref.phases)
        plan.entries.push_back({ref.id, MeasKind::V_MAG, static_cast<MeasPhase>(p), Source::SCADA,
                                0.005, 0.0, false});
    return plan;
}

void add_meter(MeasurementPlan& plan, const NetworkModel& model, const std::string& element,
               const std::vector<MeasKind>& kinds, Source source, double sigma_rel, bool holdout) {
    auto [base, to_end] = split_end(element);
    net::PhaseSet phases;
    if (const auto* bus = model.find_bus(base)) {
        phases = bus->phases;
    } else if (const auto* line = model.find_line(base)) {
        phases = line->phases;
    } else if (const auto* load = model.find_load(base)) {
        phases = load->phases;
    } else if (const auto* gen = model.find_generator(base)) {
        phases = gen->phases;
    } else {
        throw InputError("meter references unknown element '" + base + "'");
    }
    (void)to_end;
    for (MeasKind k : kinds)
        for (Phase p : phases)
            plan.entries.push_back(
                {element, k, static_cast<MeasPhase>(p), source, sigma_rel, 0.0, holdout});
}

SimulatedData simulate_measurements(const NetworkModel& model,
                                    const std::vector<PowerFlowSolution>& solutions,
                                    const MeasurementPlan& plan,
                                    const std::optional<NoiseModel>& noise, std::uint64_t seed) {
    if (solutions.empty()) throw InputError("simulate_measurements needs at least one solution");
    NodeMap nodes(model);
    const int T = static_cast<int>(solutions.size());
    double p_base_kw = model.s_base_mva * 1000.0;

    // loads already covered by an explicit P/Q meter entry
    std::set<std::string> metered_loads;
    for (const auto& e : plan.entries)
        if (e.kind == MeasKind::P_INJ || e.kind == MeasKind::Q_INJ)
            metered_loads.insert(split_end(e.element).first);

    MeasurementSet training, holdout, truth;
    auto push = [&](const telemetry::Measurement& m, bool is_holdout) {
        truth.records.push_back(m);
        if (is_holdout)
            holdout.records.push_back(m);
        else
            training.records.push_back(m);
    };

    for (int t = 0; t < T; ++t) {
        auto stamp = static_cast<std::int64_t>(std::llround(t * plan.period_spacing_s));
        for (const auto& e : plan.entries) {
            telemetry::Measurement m;
            m.timestamp = stamp;
            m.kind = e.kind;
            m.element = e.element;
            m.phase = e.phase;
            m.source = e.source;
            m.value = measured_quantity(model, nodes, solutions[t], e.element, e.kind, e.phase);
            double floor = e.sigma_floor > 0 ? e.sigma_floor : default_sigma_floor(e.kind);
            m.sigma = std::max(floor, e.sigma_rel * std::abs(m.value));
            push(m, e.holdout);
        }
        if (plan.pseudo_unmetered_loads) {
            for (const auto& d : model.loads) {
                if (metered_loads.count(d.id)) continue;
                for (size_t k = 0; k < d.phases.size(); ++k) {
                    double p_nom = -d.power[k].real() * p_base_kw;
                    double q_nom = -d.power[k].imag() * p_base_kw;
                    telemetry::Measurement m;
                    m.timestamp = stamp;
                    m.element = d.id;
                    m.phase = static_cast<MeasPhase>(d.phases[k]);
                    m.source = Source::PSEUDO;
                    m.kind = MeasKind::P_INJ;
                    m.value = measured_quantity(model, nodes, solutions[t], d.id, m.kind, m.phase);
                    m.sigma = std::max(0.01, plan.pseudo_sigma_rel * std::abs(p_nom));
                    push(m, false);
                    m.kind = MeasKind::Q_INJ;
                    m.value = measured_quantity(model, nodes, solutions[t], d.id, m.kind, m.phase);
                    m.sigma = std::max(0.01, plan.pseudo_sigma_rel * std::abs(q_nom));
                    push(m, false);
                }
            }
        }
        if (plan.virtual_zero_injections) {
            for (const auto& bus_id : net::zero_injection_buses(model)) {
                const net::Bus* b = model.find_bus(bus_id);
                for (Phase p : b->phases) {
                    telemetry::Measurement m;
                    m.timestamp = stamp;
                    m.element = bus_id;
                    m.phase = static_cast<MeasPhase>(p);
                    m.source = Source::VIRTUAL;
                    m.value = 0.0;
                    m.sigma = 0.0;
                    m.kind = MeasKind::P_INJ;
                    push(m, false);
                    m.kind = MeasKind::Q_INJ;
                    push(m, false);
                }
            }
        }
    }
    training.reindex();
    holdout.reindex();
    truth.reindex();
    if (noise) {
        training = telemetry::add_noise(training, *noise, sub_seed(seed, "train"));
        holdout = telemetry::add_noise(holdout, *noise, sub_seed(seed, "holdout"));
    }
    return {std::move(training), std::move(holdout), std::move(truth)};
}

} // namespace gridest::pf
