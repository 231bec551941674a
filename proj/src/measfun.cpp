#include "measfun.hpp"

#include <algorithm>
#include <cmath>

namespace gridest::est::detail {

using net::Phase;
using telemetry::MeasKind;
using telemetry::MeasPhase;

namespace {
constexpr double kModEps = 1e-9;  // |g| guard at zero current / voltage

// collapses duplicate nodes and returns per-node complex coefficients
std::vector<LinTerm> collapse(const std::vector<LinTerm>& terms) {
    std::vector<LinTerm> out;
    for (const auto& t : terms) {
        bool merged = false;
        for (auto& o : out)
            if (o.node == t.node) {
                o.coef += t.coef;
                merged = true;
                break;
            }
        if (!merged) out.push_back(t);
    }
    return out;
}

Complex lin_sum(const std::vector<LinTerm>& terms, const Eigen::VectorXcd& z) {
    Complex g(0.0, 0.0);
    for (const auto& t : terms) g += t.coef * z[t.node];
    return g;
}

Complex bil_sum(const std::vector<BilTerm>& terms, const Eigen::VectorXcd& z) {
    Complex s(0.0, 0.0);
    for (const auto& t : terms) s += t.coef * z[t.n] * std::conj(z[t.m]);
    return s;
}

} // namespace

double eval_value(const CompiledMeas& cm, const Eigen::VectorXcd& z) {
    switch (cm.form) {
        case Form::MOD: return std::abs(lin_sum(cm.lin, z));
        case Form::ANG: {
            Complex g = lin_sum(cm.lin, z);
            return std::atan2(g.imag(), g.real());
        }
        case Form::BILIN_RE: return bil_sum(cm.bil, z).real();
        case Form::BILIN_IM: return bil_sum(cm.bil, z).imag();
    }
    return 0.0;
}

void eval_gradient(const CompiledMeas& cm, const Eigen::VectorXcd& z, std::vector<NodeGrad>& out) {
    out.clear();
    switch (cm.form) {
        case Form::MOD: {
            auto terms = collapse(cm.lin);
            Complex g = lin_sum(terms, z);
            double mag = std::abs(g);
            if (mag < kModEps) return;  // flat at the origin by convention
            Complex ghat = std::conj(g) / mag;
            for (const auto& t : terms) {
                Complex p = ghat * t.coef;
                out.push_back({t.node, p.real(), -p.imag()});
                // d/db: Re(ghat * j * d) = -Im(ghat * d)
            }
            break;
        }
        case Form::ANG: {
            auto terms = collapse(cm.lin);
            Complex g = lin_sum(terms, z);
            double r2 = std::norm(g);
            if (r2 < kModEps * kModEps) return;
            for (const auto& t : terms) {
                Complex p = std::conj(g) * t.coef;
                out.push_back({t.node, p.imag() / r2, p.real() / r2});
                // d/db: Im(conj(g) j d)/r2 = Re(conj(g) d)/r2
            }
            break;
        }
        case Form::BILIN_RE:
        case Form::BILIN_IM: {
            // A_k multiplies dz_k, B_k multiplies d(conj z_k)
            std::map<int, std::pair<Complex, Complex>> acc;
            for (const auto& t : cm.bil) {
                acc[t.n].first += t.coef * std::conj(z[t.m]);
                acc[t.m].second += t.coef * z[t.n];
            }
            bool re = cm.form == Form::BILIN_RE;
            for (const auto& [node, ab] : acc) {
                Complex dSda = ab.first + ab.second;
                Complex dSdb = Complex(0.0, 1.0) * (ab.first - ab.second);
                out.push_back({node, re ? dSda.real() : dSda.imag(),
                               re ? dSdb.real() : dSdb.imag()});
            }
            break;
        }
    }
}

void eval_hessian(const CompiledMeas& cm, const Eigen::VectorXcd& z, double factor,
                  std::vector<HessEntry>& out) {
    switch (cm.form) {
        case Form::MOD: {
            auto terms = collapse(cm.lin);
            Complex g = lin_sum(terms, z);
            double mag = std::abs(g);
            if (mag < kModEps) return;
            Complex ghat = std::conj(g) / mag;
            // variables: (node, comp) with D = d (comp 0) or j d (comp 1)
            size_t nv = terms.size();
            auto D = [&](size_t i, int comp) {
                return comp == 0 ? terms[i].coef : Complex(0.0, 1.0) * terms[i].coef;
            };
            for (size_t i = 0; i < nv; ++i) {
                for (int ci = 0; ci < 2; ++ci) {
                    double pi = (ghat * D(i, ci)).real();
                    for (size_t j = i; j < nv; ++j) {
                        for (int cj = (j == i ? ci : 0); cj < 2; ++cj) {
                            double pj = (ghat * D(j, cj)).real();
                            double h = ((std::conj(D(i, ci)) * D(j, cj)).real() - pi * pj) / mag;
                            double v = factor * h;
                            if (v == 0.0) continue;
                            out.push_back({terms[i].node, ci, terms[j].node, cj, v});
                            if (!(i == j && ci == cj))
                                out.push_back({terms[j].node, cj, terms[i].node, ci, v});
                        }
                    }
                }
            }
            break;
        }
        case Form::ANG: {
            auto terms = collapse(cm.lin);
            if (terms.size() != 1) return;  // compiled angles are single-node
            Complex g = terms[0].coef * z[terms[0].node];
            double a = g.real(), b = g.imag();
            double r2 = a * a + b * b;
            if (r2 < kModEps * kModEps) return;
            // in terms of (a, b) of g; with coef = 1 this is the node state
            double r4 = r2 * r2;
            double haa = 2.0 * a * b / r4;
            double hab = (b * b - a * a) / r4;
            double hbb = -2.0 * a * b / r4;
            int n = terms[0].node;
            out.push_back({n, 0, n, 0, factor * haa});
            out.push_back({n, 0, n, 1, factor * hab});
            out.push_back({n, 1, n, 0, factor * hab});
            out.push_back({n, 1, n, 1, factor * hbb});
            break;
        }
        case Form::BILIN_RE:
        case Form::BILIN_IM: {
            bool re = cm.form == Form::BILIN_RE;
            auto part = [&](Complex c) { return re ? c.real() : c.imag(); };
            for (const auto& t : cm.bil) {
                Complex c = t.coef;
                if (t.n == t.m) {
                    double v = factor * part(2.0 * c);
                    out.push_back({t.n, 0, t.n, 0, v});
                    out.push_back({t.n, 1, t.n, 1, v});
                    continue;
                }
                Complex jc = Complex(0.0, 1.0) * c;
                // d2S/(da_n da_m) = c, /(da_n db_m) = -jc, /(db_n da_m) = jc,
                // /(db_n db_m) = c
                const double vaa = factor * part(c);
                const double vab = factor * part(-jc);
                const double vba = factor * part(jc);
                const double vbb = factor * part(c);
                out.push_back({t.n, 0, t.m, 0, vaa});
                out.push_back({t.m, 0, t.n, 0, vaa});
                out.push_back({t.n, 0, t.m, 1, vab});
                out.push_back({t.m, 1, t.n, 0, vab});
                out.push_back({t.n, 1, t.m, 0, vba});
                out.push_back({t.m, 0, t.n, 1, vba});
                out.push_back({t.n, 1, t.m, 1, vbb});
                out.push_back({t.m, 1, t.n, 1, vbb});
            }
            break;
        }
    }
}

double eval_param_deriv(const CompiledMeas& cm, const ParamTerms& pt, const Eigen::VectorXcd& z) {
    switch (cm.form) {
        case Form::MOD: {
            Complex g = lin_sum(cm.lin, z);
            double mag = std::abs(g);
            if (mag < kModEps) return 0.0;
            Complex dg = lin_sum(pt.dlin, z);
            return (std::conj(g) / mag * dg).real();
        }
        case Form::ANG: {
            Complex g = lin_sum(cm.lin, z);
            double r2 = std::norm(g);
            if (r2 < kModEps * kModEps) return 0.0;
            Complex dg = lin_sum(pt.dlin, z);
            return (std::conj(g) * dg).imag() / r2;
        }
        case Form::BILIN_RE: return bil_sum(pt.dbil, z).real();
        case Form::BILIN_IM: return bil_sum(pt.dbil, z).imag();
    }
    return 0.0;
}

// --- compiler ---------------------------------------------------------------

namespace {

std::pair<std::string, bool> split_end(const std::string& element) {
    auto pos = element.find(':');
    if (pos == std::string::npos) return {element, false};
    std::string suffix = element.substr(pos + 1);
    if (suffix == "to") return {element.substr(0, pos), true};
    if (suffix == "from") return {element.substr(0, pos), false};
    throw InputError("bad element end suffix '" + element + "'");
}

} // namespace

Compiler::Compiler(const NetworkModel& model_current, const NodeMap& nodes,
                   const std::array<Complex, 3>& ref_voltage,
                   const std::vector<ParameterVariable>& params,
                   const std::vector<double>& values)
    : model_(model_current), nodes_(nodes) {
    stamps_ = net::assemble_stamps(model_, nodes_);
    incident_.resize(nodes_.count());
    for (const auto& st : stamps_) {
        stamp_of_[st.id] = &st;
        for (size_t i = 0; i < st.nodes.size(); ++i)
            incident_[st.nodes[i]].emplace_back(&st, static_cast<int>(i));
    }
    for (size_t p = 0; p < params.size(); ++p) {
        if (params[p].kind == net::ParameterKind::IMPEDANCE_SCALE)
            scale_param_of_[params[p].element] = {static_cast<int>(p), values[p]};
        else if (params[p].kind == net::ParameterKind::TAP_RATIO)
            tap_param_of_[params[p].element] = static_cast<int>(p);
    }
    rot_ = Eigen::VectorXcd(nodes_.count());
    for (int i = 0; i < nodes_.count(); ++i) {
        Complex r = ref_voltage[static_cast<int>(nodes_.node(i).second)];
        double ang = std::abs(r) > 0 ? std::arg(r) : 0.0;
        rot_[i] = std::polar(1.0, ang);
    }
    p_base_kw_ = model_.s_base_mva * 1000.0;
}

void Compiler::add_injection_terms(CompiledMeas& cm, int node) const {
    for (const auto& [st, i] : incident_[node]) {
        int nn = static_cast<int>(st->nodes.size());
        auto get_sens = [&](int param) -> ParamTerms& {
            for (auto& s : cm.sens)
                if (s.param == param) return s;
            cm.sens.push_back({param, {}, {}});
            return cm.sens.back();
        };
        auto sc = scale_param_of_.find(st->id);
        auto tp = tap_param_of_.find(st->id);
        for (int j = 0; j < nn; ++j) {
            int m = st->nodes[j];
            Complex base = rot_[node] * std::conj(rot_[m]);
            Complex c = base * std::conj(st->Y(i, j));
            if (c != Complex(0.0, 0.0)) cm.bil.push_back({node, m, c});
            if (sc != scale_param_of_.end() && st->Y_series.size() != 0) {
                Complex dY = -st->Y_series(i, j) / sc->second.second;
                if (dY != Complex(0.0, 0.0))
                    get_sens(sc->second.first).dbil.push_back({node, m, base * std::conj(dY)});
            }
            if (tp != tap_param_of_.end() && st->dY_dtap.size() != 0) {
                Complex dY = st->dY_dtap(i, j);
                if (dY != Complex(0.0, 0.0))
                    get_sens(tp->second).dbil.push_back({node, m, base * std::conj(dY)});
            }
        }
    }
}

void Compiler::add_flow_terms(CompiledMeas& cm, const net::ElementStamp& st, int local_row) const {
    int nn = static_cast<int>(st.nodes.size());
    int node = st.nodes[local_row];
    auto get_sens = [&](int param) -> ParamTerms& {
        for (auto& s : cm.sens)
            if (s.param == param) return s;
        cm.sens.push_back({param, {}, {}});
        return cm.sens.back();
    };
    auto sc = scale_param_of_.find(st.id);
    auto tp = tap_param_of_.find(st.id);
    for (int j = 0; j < nn; ++j) {
        int m = st.nodes[j];
        Complex base = rot_[node] * std::conj(rot_[m]);
        Complex c = base * std::conj(st.Y(local_row, j));
        if (c != Complex(0.0, 0.0)) cm.bil.push_back({node, m, c});
        if (sc != scale_param_of_.end() && st.Y_series.size() != 0) {
            Complex dY = -st.Y_series(local_row, j) / sc->second.second;
            if (dY != Complex(0.0, 0.0))
                get_sens(sc->second.first).dbil.push_back({node, m, base * std::conj(dY)});
        }
        if (tp != tap_param_of_.end() && st.dY_dtap.size() != 0) {
            Complex dY = st.dY_dtap(local_row, j);
            if (dY != Complex(0.0, 0.0))
                get_sens(tp->second).dbil.push_back({node, m, base * std::conj(dY)});
        }
    }
}

CompiledMeas Compiler::compile(const Measurement& rec) const {
    CompiledMeas cm;
    auto [base, to_end] = split_end(rec.element);

    const net::Bus* bus = model_.find_bus(base);
    const net::LineModel* line = bus ? nullptr : model_.find_line(base);
    const net::TransformerModel* xfmr = bus || line ? nullptr : model_.find_transformer(base);
    const net::LoadModel* load = bus || line || xfmr ? nullptr : model_.find_load(base);
    const net::GeneratorModel* gen =
        bus || line || xfmr || load ? nullptr : model_.find_generator(base);
    if (!bus && !line && !xfmr && !load && !gen)
        throw InputError("measurement references unknown element '" + base + "'");

    auto bus_of_unit = [&]() -> const net::Bus* {
        const std::string& bid = load ? load->bus : gen->bus;
        return model_.find_bus(bid);
    };
    auto unit_phases = [&]() -> const net::PhaseSet& { return load ? load->phases : gen->phases; };

    switch (rec.kind) {
        case MeasKind::V_MAG:
        case MeasKind::V_ANGLE_REL: {
            int node;
            const net::Bus* b;
            if (bus) {
                if (rec.phase == MeasPhase::AGG)
                    throw InputError("aggregate phase invalid for voltage records");
                node = nodes_.require(base, static_cast<Phase>(rec.phase));
                b = bus;
            } else if (load || gen) {
                const auto& ph = unit_phases();
                if (ph.size() != 1)
                    throw InputError("voltage record on multi-phase unit '" + base + "'");
                b = bus_of_unit();
                node = nodes_.require(b->id, ph[0]);
            } else {
                throw InputError("voltage record on series element '" + base + "'");
            }
            cm.form = rec.kind == MeasKind::V_MAG ? Form::MOD : Form::ANG;
            cm.lin.push_back({node, Complex(1.0, 0.0)});
            cm.si_scale = rec.kind == MeasKind::V_MAG ? b->base_kv : 1.0;
            break;
        }
        case MeasKind::P_INJ:
        case MeasKind::Q_INJ: {
            std::vector<int> inj_nodes;
            if (bus) {
                if (rec.phase == MeasPhase::AGG) {
                    inj_nodes = nodes_.bus_nodes(base);
                } else {
                    inj_nodes.push_back(nodes_.require(base, static_cast<Phase>(rec.phase)));
                }
            } else if (load || gen) {
                const net::Bus* b = bus_of_unit();
                const auto& ph = unit_phases();
                if (rec.phase == MeasPhase::AGG) {
                    for (Phase p : ph) inj_nodes.push_back(nodes_.require(b->id, p));
                } else {
                    // the unit's records read the bus-phase injection at its
                    // connection point, at the currently assigned phase
                    Phase p = ph.size() == 1 ? ph[0] : static_cast<Phase>(rec.phase);
                    inj_nodes.push_back(nodes_.require(b->id, p));
                }
            } else {
                throw InputError("injection record on series element '" + base + "'");
            }
            cm.form = rec.kind == MeasKind::P_INJ ? Form::BILIN_RE : Form::BILIN_IM;
            for (int n : inj_nodes) add_injection_terms(cm, n);
            cm.si_scale = p_base_kw_;
            break;
        }
        case MeasKind::P_FLOW:
        case MeasKind::Q_FLOW: {
            if (!line && !xfmr)
                throw InputError("flow record needs a line or transformer element, got '" + base +
                                 "'");
            cm.form = rec.kind == MeasKind::P_FLOW ? Form::BILIN_RE : Form::BILIN_IM;
            cm.si_scale = p_base_kw_;
            auto it = stamp_of_.find(base);
            if (it == stamp_of_.end()) break;  // de-energized: flow is identically zero
            const auto& st = *it->second;
            int np = static_cast<int>(st.nodes.size()) / 2;
            std::vector<int> rows;
            if (rec.phase == MeasPhase::AGG) {
                for (int k = 0; k < np; ++k) rows.push_back(to_end ? np + k : k);
            } else {
                int slot = -1;
                for (int k = 0; k < np; ++k)
                    if (nodes_.node(st.nodes[k]).second == static_cast<Phase>(rec.phase)) slot = k;
                if (slot < 0)
                    throw InputError("phase " + telemetry::to_string(rec.phase) +
                                     " not present on '" + base + "'");
                rows.push_back(to_end ? np + slot : slot);
            }
            for (int r : rows) add_flow_terms(cm, st, r);
            break;
        }
        case MeasKind::I_MAG: {
            if (!line) throw InputError("current records are supported on lines only");
            if (rec.phase == MeasPhase::AGG)
                throw InputError("aggregate phase invalid for current records");
            cm.form = Form::MOD;
            const net::Bus* fb = model_.find_bus(line->from_bus);
            cm.si_scale = 1000.0 * model_.s_base_mva / fb->base_kv;
            auto it = stamp_of_.find(base);
            if (it == stamp_of_.end()) break;  // de-energized: no current
            const auto& st = *it->second;
            int np = static_cast<int>(st.nodes.size()) / 2;
            int slot = -1;
            for (int k = 0; k < np; ++k)
                if (nodes_.node(st.nodes[k]).second == static_cast<Phase>(rec.phase)) slot = k;
            if (slot < 0)
                throw InputError("phase " + telemetry::to_string(rec.phase) +
                                 " not present on '" + base + "'");
            auto sc = scale_param_of_.find(st.id);
            ParamTerms* sens = nullptr;
            if (sc != scale_param_of_.end()) {
                cm.sens.push_back({sc->second.first, {}, {}});
                sens = &cm.sens.back();
            }
            for (size_t j = 0; j < st.nodes.size(); ++j) {
                Complex d = st.Y_series(slot, static_cast<int>(j)) * rot_[st.nodes[j]];
                if (d != Complex(0.0, 0.0)) cm.lin.push_back({st.nodes[j], d});
                if (sens) {
                    Complex dd = -d / sc->second.second;
                    if (dd != Complex(0.0, 0.0)) sens->dlin.push_back({st.nodes[j], dd});
                }
            }
            break;
        }
    }
    return cm;
}

} // namespace gridest::est::detail
