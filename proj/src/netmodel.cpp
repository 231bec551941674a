#include "gridest/netmodel.hpp"

#include <Eigen/LU>
#include <algorithm>
#include <queue>
#include <set>
#include <sstream>

namespace gridest::net {

namespace {
constexpr double kSwitchImpedancePu = 1e-4;  // closed-switch series impedance
constexpr double kTapTol = 1e-9;
}

char phase_letter(Phase p) {
    switch (p) {
        case Phase::A: return 'a';
        case Phase::B: return 'b';
        case Phase::C: return 'c';
    }
    return '?';
}

std::optional<Phase> phase_from_letter(char c) {
    switch (c) {
        case 'a': case 'A': return Phase::A;
        case 'b': case 'B': return Phase::B;
        case 'c': case 'C': return Phase::C;
        default: return std::nullopt;
    }
}

const Bus* NetworkModel::find_bus(const std::string& id) const {
    for (const auto& b : buses)
        if (b.id == id) return &b;
    return nullptr;
}

const LineModel* NetworkModel::find_line(const std::string& id) const {
    for (const auto& l : lines)
        if (l.id == id) return &l;
    return nullptr;
}

const TransformerModel* NetworkModel::find_transformer(const std::string& id) const {
    for (const auto& t : transformers)
        if (t.id == id) return &t;
    return nullptr;
}

const LoadModel* NetworkModel::find_load(const std::string& id) const {
    for (const auto& d : loads)
        if (d.id == id) return &d;
    return nullptr;
}

const GeneratorModel* NetworkModel::find_generator(const std::string& id) const {
    for (const auto& g : generators)
        if (g.id == id) return &g;
    return nullptr;
}

const Bus& NetworkModel::reference_bus() const {
    for (const auto& b : buses)
        if (b.is_reference) return b;
    throw InputError("network has no reference bus");
}

std::string to_string(FindingClass c) {
    switch (c) {
        case FindingClass::DISCONNECTED_ISLAND: return "disconnected-island";
        case FindingClass::DANGLING_REFERENCE: return "dangling-reference";
        case FindingClass::SINGULAR_IMPEDANCE: return "singular-impedance";
        case FindingClass::DUPLICATE_ID: return "duplicate-id";
        case FindingClass::INVALID_VALUE: return "invalid-value";
    }
    return "?";
}

std::string ValidationReport::summary() const {
    std::ostringstream os;
    for (const auto& f : findings)
        os << to_string(f.cls) << " [" << f.element << "] " << f.detail << "\n";
    return os.str();
}

std::string to_string(ParameterKind k) {
    switch (k) {
        case ParameterKind::IMPEDANCE_SCALE: return "impedance_scale";
        case ParameterKind::TAP_RATIO: return "tap_ratio";
        case ParameterKind::SWITCH_STATUS: return "switch_status";
        case ParameterKind::PHASE_ASSIGNMENT: return "phase_assignment";
    }
    return "?";
}

// --- validate -------------------------------------------------------------

namespace {

bool phases_subset(const PhaseSet& sub, const PhaseSet& super) {
    for (Phase p : sub)
        if (std::find(super.begin(), super.end(), p) == super.end()) return false;
    return true;
}

bool matrix_symmetric(const Eigen::MatrixXcd& m) {
    double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
    return (m - m.transpose()).cwiseAbs().maxCoeff() <= 1e-9 * scale;
}

bool matrix_invertible(const Eigen::MatrixXcd& m) {
    if (m.rows() == 0 || m.rows() != m.cols()) return false;
    Eigen::FullPivLU<Eigen::MatrixXcd> lu(m);
    lu.setThreshold(1e-12);
    return lu.isInvertible();
}

} // namespace

ValidationReport validate(const NetworkModel& model) {
    ValidationReport rep;
    auto add = [&](FindingClass cls, const std::string& el, const std::string& detail) {
        rep.findings.push_back({cls, el, detail});
    };

    // unique ids across all element classes
    std::set<std::string> seen;
    auto check_id = [&](const std::string& id) {
        if (!seen.insert(id).second) add(FindingClass::DUPLICATE_ID, id, "identifier reused");
    };
    for (const auto& b : model.buses) check_id(b.id);
    for (const auto& l : model.lines) check_id(l.id);
    for (const auto& t : model.transformers) check_id(t.id);
    for (const auto& d : model.loads) check_id(d.id);
    for (const auto& g : model.generators) check_id(g.id);

    int n_ref = 0;
    for (const auto& b : model.buses) {
        if (b.phases.empty()) add(FindingClass::INVALID_VALUE, b.id, "bus has no phases");
        if (!(b.base_kv > 0)) add(FindingClass::INVALID_VALUE, b.id, "base_kv must be positive");
        if (!(b.vmin < b.vmax)) add(FindingClass::INVALID_VALUE, b.id, "vmin must be below vmax");
        if (b.is_reference) ++n_ref;
    }
    if (n_ref != 1)
        add(FindingClass::INVALID_VALUE, "network",
            "expected exactly one reference bus, found " + std::to_string(n_ref));

    if (!(model.s_base_mva > 0))
        add(FindingClass::INVALID_VALUE, "network", "s_base must be positive");

    for (const auto& l : model.lines) {
        const Bus* fb = model.find_bus(l.from_bus);
        const Bus* tb = model.find_bus(l.to_bus);
        if (!fb) add(FindingClass::DANGLING_REFERENCE, l.id, "from_bus '" + l.from_bus + "' not found");
        if (!tb) add(FindingClass::DANGLING_REFERENCE, l.id, "to_bus '" + l.to_bus + "' not found");
        if (l.from_bus == l.to_bus) add(FindingClass::INVALID_VALUE, l.id, "from_bus equals to_bus");
        if (l.phases.empty()) add(FindingClass::INVALID_VALUE, l.id, "line has no phases");
        if (fb && !phases_subset(l.phases, fb->phases))
            add(FindingClass::INVALID_VALUE, l.id, "phases not present at from_bus");
        if (tb && !phases_subset(l.phases, tb->phases))
            add(FindingClass::INVALID_VALUE, l.id, "phases not present at to_bus");
        if (fb && tb && fb->base_kv != tb->base_kv)
            add(FindingClass::INVALID_VALUE, l.id, "end buses have different voltage bases");
        if (!l.is_switch) {
            int np = static_cast<int>(l.phases.size());
            if (l.series_impedance.rows() != np || l.series_impedance.cols() != np) {
                add(FindingClass::INVALID_VALUE, l.id, "series impedance dimension mismatch");
            } else {
                if (!matrix_symmetric(l.series_impedance))
                    add(FindingClass::INVALID_VALUE, l.id, "series impedance not symmetric");
                if (l.status && !matrix_invertible(l.series_impedance))
                    add(FindingClass::SINGULAR_IMPEDANCE, l.id, "series impedance singular");
            }
            if (l.shunt_admittance.size() != 0 &&
                (l.shunt_admittance.rows() != np || l.shunt_admittance.cols() != np))
                add(FindingClass::INVALID_VALUE, l.id, "shunt admittance dimension mismatch");
        }
    }

    for (const auto& t : model.transformers) {
        const Bus* fb = model.find_bus(t.from_bus);
        const Bus* tb = model.find_bus(t.to_bus);
        if (!fb) add(FindingClass::DANGLING_REFERENCE, t.id, "from_bus '" + t.from_bus + "' not found");
        if (!tb) add(FindingClass::DANGLING_REFERENCE, t.id, "to_bus '" + t.to_bus + "' not found");
        if (t.from_bus == t.to_bus) add(FindingClass::INVALID_VALUE, t.id, "from_bus equals to_bus");
        if (std::abs(t.series_impedance) <= 0)
            add(FindingClass::SINGULAR_IMPEDANCE, t.id, "series impedance magnitude must be positive");
        double lo = 1.0 + t.tap_min * t.tap_step, hi = 1.0 + t.tap_max * t.tap_step;
        if (t.tap_ratio < lo - kTapTol || t.tap_ratio > hi + kTapTol)
            add(FindingClass::INVALID_VALUE, t.id, "tap ratio outside tap range");
        if (t.connection == WindingConnection::DELTA_WYE && fb && tb &&
            (fb->phases.size() != 3 || tb->phases.size() != 3))
            add(FindingClass::INVALID_VALUE, t.id, "delta-wye requires three phases at both buses");
    }

    auto check_unit = [&](const std::string& id, const std::string& bus, const PhaseSet& phases,
                          size_t n_power) {
        const Bus* b = model.find_bus(bus);
        if (!b) {
            add(FindingClass::DANGLING_REFERENCE, id, "bus '" + bus + "' not found");
            return;
        }
        if (phases.empty()) add(FindingClass::INVALID_VALUE, id, "no phases");
        if (!phases_subset(phases, b->phases))
            add(FindingClass::INVALID_VALUE, id, "phases not present at bus");
        if (n_power != phases.size())
            add(FindingClass::INVALID_VALUE, id, "power entries do not match phase count");
    };
    for (const auto& d : model.loads) check_unit(d.id, d.bus, d.phases, d.power.size());
    for (const auto& g : model.generators) check_unit(g.id, g.bus, g.phases, g.power.size());

    // connectivity over energized elements
    if (!model.buses.empty()) {
        std::map<std::string, int> bus_idx;
        for (size_t i = 0; i < model.buses.size(); ++i) bus_idx[model.buses[i].id] = static_cast<int>(i);
        std::vector<std::vector<int>> adj(model.buses.size());
        auto connect = [&](const std::string& a, const std::string& b) {
            auto ia = bus_idx.find(a), ib = bus_idx.find(b);
            if (ia == bus_idx.end() || ib == bus_idx.end()) return;
            adj[ia->second].push_back(ib->second);
            adj[ib->second].push_back(ia->second);
        };
        for (const auto& l : model.lines)
            if (l.status) connect(l.from_bus, l.to_bus);
        for (const auto& t : model.transformers) connect(t.from_bus, t.to_bus);

        std::vector<int> comp(model.buses.size(), -1);
        int ncomp = 0;
        for (size_t s = 0; s < model.buses.size(); ++s) {
            if (comp[s] >= 0) continue;
            std::queue<int> q;
            q.push(static_cast<int>(s));
            comp[s] = ncomp;
            while (!q.empty()) {
                int u = q.front();
                q.pop();
                for (int v : adj[u])
                    if (comp[v] < 0) {
                        comp[v] = ncomp;
                        q.push(v);
                    }
            }
            ++ncomp;
        }
        int main_comp = 0;
        for (size_t i = 0; i < model.buses.size(); ++i)
            if (model.buses[i].is_reference) main_comp = comp[i];
        if (ncomp > 1) {
            for (int c = 0; c < ncomp; ++c) {
                if (c == main_comp) continue;
                std::string members;
                for (size_t i = 0; i < model.buses.size(); ++i)
                    if (comp[i] == c) members += (members.empty() ? "" : ",") + model.buses[i].id;
                add(FindingClass::DISCONNECTED_ISLAND, members,
                    "buses not connected to the reference bus");
            }
        }
    }

    return rep;
}

// --- per unit ---------------------------------------------------------------

NetworkModel to_per_unit(const NetworkModel& model) {
    if (model.per_unit) return model;
    NetworkModel out = model;
    out.per_unit = true;
    for (auto& l : out.lines) {
        const Bus* fb = model.find_bus(l.from_bus);
        if (!fb) throw InputError("line " + l.id + ": from_bus not found");
        if (!(fb->base_kv > 0)) throw InputError("bus " + fb->id + ": zero voltage base");
        double zbase = fb->base_kv * fb->base_kv / model.s_base_mva;
        if (l.is_switch) continue;  // stamped with the fixed per-unit impedance
        l.series_impedance /= zbase;
        if (l.shunt_admittance.size() != 0) l.shunt_admittance *= zbase;
    }
    double p_base_kw = model.s_base_mva * 1000.0;
    for (auto& d : out.loads)
        for (auto& s : d.power) s /= p_base_kw;
    for (auto& g : out.generators)
        for (auto& s : g.power) s /= p_base_kw;
    // transformer impedances are declared in per-unit already
    return out;
}

// --- node map ---------------------------------------------------------------

NodeMap::NodeMap(const NetworkModel& model) {
    for (const auto& b : model.buses) {
        PhaseSet ph = b.phases;
        std::sort(ph.begin(), ph.end());
        for (Phase p : ph) {
            int idx = static_cast<int>(nodes_.size());
            nodes_.emplace_back(b.id, p);
            lookup_[{b.id, static_cast<int>(p)}] = idx;
            if (b.is_reference) ref_nodes_.push_back(idx);
        }
    }
}

int NodeMap::index(const std::string& bus, Phase p) const {
    auto it = lookup_.find({bus, static_cast<int>(p)});
    return it == lookup_.end() ? -1 : it->second;
}

int NodeMap::require(const std::string& bus, Phase p) const {
    int i = index(bus, p);
    if (i < 0)
        throw InputError("no node for bus '" + bus + "' phase " + std::string(1, phase_letter(p)));
    return i;
}

std::string NodeMap::label(int i) const {
    return nodes_[i].first + "." + std::string(1, phase_letter(nodes_[i].second));
}

std::vector<int> NodeMap::bus_nodes(const std::string& bus) const {
    std::vector<int> out;
    for (int p = 0; p < 3; ++p) {
        auto it = lookup_.find({bus, p});
        if (it != lookup_.end()) out.push_back(it->second);
    }
    return out;
}

// --- admittance assembly ----------------------------------------------------

namespace {

ElementStamp stamp_line(const NodeMap& nodes, const LineModel& l) {
    int np = static_cast<int>(l.phases.size());
    Eigen::MatrixXcd z;
    if (l.is_switch) {
        z = Eigen::MatrixXcd::Identity(np, np) * Complex(kSwitchImpedancePu, 0.0);
    } else {
        z = l.series_impedance;
    }
    Eigen::FullPivLU<Eigen::MatrixXcd> lu(z);
    lu.setThreshold(1e-12);
    if (!lu.isInvertible())
        throw InputError("line " + l.id + ": singular series impedance");
    Eigen::MatrixXcd ys = lu.inverse();
    ys = Complex(0.5, 0.0) * (ys + ys.transpose()).eval();  // keep the stamp exactly symmetric
    Eigen::MatrixXcd ysh = Eigen::MatrixXcd::Zero(np, np);
    if (!l.is_switch && l.shunt_admittance.size() != 0) ysh = l.shunt_admittance;

    ElementStamp st;
    st.id = l.id;
    st.is_line = true;
    st.nodes.reserve(2 * np);
    for (Phase p : l.phases) st.nodes.push_back(nodes.require(l.from_bus, p));
    for (Phase p : l.phases) st.nodes.push_back(nodes.require(l.to_bus, p));
    st.Y = Eigen::MatrixXcd::Zero(2 * np, 2 * np);
    st.Y_series = Eigen::MatrixXcd::Zero(2 * np, 2 * np);
    st.Y_series.topLeftCorner(np, np) = ys;
    st.Y_series.topRightCorner(np, np) = -ys;
    st.Y_series.bottomLeftCorner(np, np) = -ys;
    st.Y_series.bottomRightCorner(np, np) = ys;
    st.Y = st.Y_series;
    st.Y.topLeftCorner(np, np) += 0.5 * ysh;
    st.Y.bottomRightCorner(np, np) += 0.5 * ysh;
    return st;
}

ElementStamp stamp_transformer(const NetworkModel& model, const NodeMap& nodes,
                               const TransformerModel& t) {
    if (std::abs(t.series_impedance) <= 0)
        throw InputError("transformer " + t.id + ": zero series impedance");
    Complex y = 1.0 / t.series_impedance;
    double tap = t.tap_ratio;

    const Bus* fb = model.find_bus(t.from_bus);
    const Bus* tb = model.find_bus(t.to_bus);
    if (!fb || !tb) throw InputError("transformer " + t.id + ": bus not found");

    ElementStamp st;
    st.id = t.id;
    st.is_line = false;

    if (t.connection == WindingConnection::WYE_WYE) {
        // phases present at both ends, stamped per phase
        PhaseSet common;
        for (Phase p : fb->phases)
            if (std::find(tb->phases.begin(), tb->phases.end(), p) != tb->phases.end())
                common.push_back(p);
        std::sort(common.begin(), common.end());
        if (common.empty()) throw InputError("transformer " + t.id + ": no common phases");
        int np = static_cast<int>(common.size());
        for (Phase p : common) st.nodes.push_back(nodes.require(t.from_bus, p));
        for (Phase p : common) st.nodes.push_back(nodes.require(t.to_bus, p));
        st.Y = Eigen::MatrixXcd::Zero(2 * np, 2 * np);
        st.dY_dtap = Eigen::MatrixXcd::Zero(2 * np, 2 * np);
        for (int i = 0; i < np; ++i) {
            st.Y(i, i) = y / (tap * tap);
            st.Y(i, np + i) = -y / tap;
            st.Y(np + i, i) = -y / tap;
            st.Y(np + i, np + i) = y;
            st.dY_dtap(i, i) = -2.0 * y / (tap * tap * tap);
            st.dY_dtap(i, np + i) = y / (tap * tap);
            st.dY_dtap(np + i, i) = y / (tap * tap);
        }
    } else {
        // delta primary, grounded-wye secondary; wye side leads by +30 deg
        if (fb->phases.size() != 3 || tb->phases.size() != 3)
            throw InputError("transformer " + t.id + ": delta-wye requires three-phase buses");
        for (Phase p : {Phase::A, Phase::B, Phase::C})
            st.nodes.push_back(nodes.require(t.from_bus, p));
        for (Phase p : {Phase::A, Phase::B, Phase::C})
            st.nodes.push_back(nodes.require(t.to_bus, p));
        Eigen::Matrix3cd C;
        C << 1, -1, 0,
             0, 1, -1,
             -1, 0, 1;
        const double s3 = std::sqrt(3.0);
        Eigen::Matrix3cd Yff = (y / (3.0 * tap * tap)) * (C.transpose() * C);
        Eigen::Matrix3cd Yft = (-y / (s3 * tap)) * C.transpose();
        Eigen::Matrix3cd Ytt = y * Eigen::Matrix3cd::Identity();
        st.Y = Eigen::MatrixXcd::Zero(6, 6);
        st.Y.topLeftCorner(3, 3) = Yff;
        st.Y.topRightCorner(3, 3) = Yft;
        st.Y.bottomLeftCorner(3, 3) = Yft.transpose();
        st.Y.bottomRightCorner(3, 3) = Ytt;
        st.dY_dtap = Eigen::MatrixXcd::Zero(6, 6);
        st.dY_dtap.topLeftCorner(3, 3) = (-2.0 / tap) * Yff;
        st.dY_dtap.topRightCorner(3, 3) = (-1.0 / tap) * Yft;
        st.dY_dtap.bottomLeftCorner(3, 3) = (-1.0 / tap) * Yft.transpose();
    }
    return st;
}

} // namespace

std::vector<ElementStamp> assemble_stamps(const NetworkModel& model, const NodeMap& nodes) {
    if (!model.per_unit) throw InputError("admittance assembly requires a per-unit model");
    std::vector<ElementStamp> stamps;
    stamps.reserve(model.lines.size() + model.transformers.size());
    for (const auto& l : model.lines) {
        if (!l.status) continue;  // de-energized / open switch
        stamps.push_back(stamp_line(nodes, l));
    }
    for (const auto& t : model.transformers) stamps.push_back(stamp_transformer(model, nodes, t));
    return stamps;
}

Eigen::SparseMatrix<Complex> assemble_admittance(const NetworkModel& model, const NodeMap& nodes) {
    auto stamps = assemble_stamps(model, nodes);
    std::vector<Eigen::Triplet<Complex>> trip;
    for (const auto& st : stamps) {
        int n = static_cast<int>(st.nodes.size());
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j)
                if (st.Y(i, j) != Complex(0.0, 0.0))
                    trip.emplace_back(st.nodes[i], st.nodes[j], st.Y(i, j));
    }
    Eigen::SparseMatrix<Complex> Y(nodes.count(), nodes.count());
    Y.setFromTriplets(trip.begin(), trip.end());
    return Y;
}

Eigen::SparseMatrix<Complex> assemble_admittance(const NetworkModel& model) {
    NodeMap nodes(model);
    return assemble_admittance(model, nodes);
}

// --- parameter overrides ------------------------------------------------

NetworkModel apply_parameter_overrides(const NetworkModel& model,
                                       const ParameterAssignment& overrides) {
    NetworkModel out = model;
    for (const auto& ov : overrides) {
        switch (ov.kind) {
            case ParameterKind::IMPEDANCE_SCALE: {
                bool found = false;
                for (auto& l : out.lines)
                    if (l.id == ov.element) {
                        if (!(ov.value > 0))
                            throw InputError("impedance scale for " + ov.element +
                                             " must be positive");
                        l.series_impedance *= ov.value;
                        found = true;
                        break;
                    }
                if (!found) throw InputError("impedance scale target '" + ov.element + "' not found");
                break;
            }
            case ParameterKind::TAP_RATIO: {
                bool found = false;
                for (auto& t : out.transformers)
                    if (t.id == ov.element) {
                        double lo = 1.0 + t.tap_min * t.tap_step;
                        double hi = 1.0 + t.tap_max * t.tap_step;
                        if (ov.value < lo - kTapTol || ov.value > hi + kTapTol)
                            throw InputError("tap " + std::to_string(ov.value) + " for " +
                                             ov.element + " outside range [" + std::to_string(lo) +
                                             ", " + std::to_string(hi) + "]");
                        t.tap_ratio = ov.value;
                        found = true;
                        break;
                    }
                if (!found) throw InputError("tap target '" + ov.element + "' not found");
                break;
            }
            case ParameterKind::SWITCH_STATUS: {
                bool found = false;
                for (auto& l : out.lines)
                    if (l.id == ov.element) {
                        if (!l.is_switch)
                            throw InputError("switch status target '" + ov.element +
                                             "' is not a switch");
                        l.status = ov.value != 0.0;
                        found = true;
                        break;
                    }
                if (!found) throw InputError("switch target '" + ov.element + "' not found");
                break;
            }
            case ParameterKind::PHASE_ASSIGNMENT: {
                bool found = false;
                for (auto& d : out.loads)
                    if (d.id == ov.element) {
                        if (d.phases.size() != 1)
                            throw InputError("phase assignment target '" + ov.element +
                                             "' is not single-phase");
                        int pi = static_cast<int>(ov.value);
                        if (pi < 0 || pi > 2)
                            throw InputError("phase assignment for " + ov.element +
                                             " must be 0, 1 or 2");
                        Phase p = static_cast<Phase>(pi);
                        const Bus* b = out.find_bus(d.bus);
                        if (!b || std::find(b->phases.begin(), b->phases.end(), p) == b->phases.end())
                            throw InputError("phase assignment for " + ov.element +
                                             ": phase not present at bus " + d.bus);
                        d.phases = {p};
                        found = true;
                        break;
                    }
                if (!found) throw InputError("phase assignment target '" + ov.element + "' not found");
                break;
            }
        }
    }
    return out;
}

std::vector<std::string> zero_injection_buses(const NetworkModel& model) {
    std::set<std::string> occupied;
    for (const auto& d : model.loads) occupied.insert(d.bus);
    for (const auto& g : model.generators) occupied.insert(g.bus);
    std::vector<std::string> out;
    for (const auto& b : model.buses)
        if (!b.is_reference && !occupied.count(b.id)) out.push_back(b.id);
    return out;
}

} // namespace gridest::net
