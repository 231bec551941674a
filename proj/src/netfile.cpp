#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "gridest/io.hpp"

namespace gridest::io {

using net::NetworkModel;
using net::Phase;
using net::PhaseSet;

namespace {

// --- nested key-value reader -----------------------------------------------

struct KvNode {
    std::string key;
    std::vector<std::string> args;
    std::vector<std::pair<std::string, std::vector<std::string>>> leaves;
    std::vector<std::string> raw;  ///< bare value lines (matrix bodies)
    std::vector<KvNode> children;
    int line = 0;

    const KvNode* child(const std::string& k, const std::string& arg0 = "") const {
        for (const auto& c : children)
            if (c.key == k && (arg0.empty() || (!c.args.empty() && c.args[0] == arg0))) return &c;
        return nullptr;
    }
    std::vector<const KvNode*> all(const std::string& k) const {
        std::vector<const KvNode*> out;
        for (const auto& c : children)
            if (c.key == k) out.push_back(&c);
        return out;
    }
    const std::vector<std::string>* leaf(const std::string& k) const {
        for (const auto& l : leaves)
            if (l.first == k) return &l.second;
        return nullptr;
    }
    std::string str(const std::string& k, const std::string& dflt = "") const {
        const auto* v = leaf(k);
        if (!v || v->empty()) return dflt;
        return (*v)[0];
    }
    double num(const std::string& k, double dflt) const {
        const auto* v = leaf(k);
        if (!v || v->empty()) return dflt;
        return std::stod((*v)[0]);
    }
    double require_num(const std::string& k) const {
        const auto* v = leaf(k);
        if (!v || v->empty())
            throw InputError("line " + std::to_string(line) + ": missing key '" + k + "' in " + key);
        return std::stod((*v)[0]);
    }
    std::string require_str(const std::string& k) const {
        const auto* v = leaf(k);
        if (!v || v->empty())
            throw InputError("line " + std::to_string(line) + ": missing key '" + k + "' in " + key);
        return (*v)[0];
    }
    bool flag(const std::string& k, bool dflt) const {
        std::string s = str(k, dflt ? "true" : "false");
        return s == "true" || s == "1" || s == "yes";
    }
};

std::vector<std::string> tokenize(const std::string& line) {
    std::vector<std::string> out;
    std::istringstream in(line);
    std::string tok;
    while (in >> tok) out.push_back(tok);
    return out;
}

bool looks_like_value(const std::string& tok) {
    char c = tok[0];
    return (c >= '0' && c <= '9') || c == '-' || c == '+' || c == '.';
}

KvNode parse_kv(const std::string& text) {
    KvNode root;
    std::vector<KvNode*> stack{&root};
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        auto toks = tokenize(line);
        if (toks.empty()) continue;
        if (toks.size() == 1 && toks[0] == "}") {
            if (stack.size() == 1) throw InputError("line " + std::to_string(lineno) + ": stray '}'");
            stack.pop_back();
            continue;
        }
        if (toks.back() == "{") {
            KvNode child;
            child.key = toks[0];
            child.args.assign(toks.begin() + 1, toks.end() - 1);
            child.line = lineno;
            stack.back()->children.push_back(std::move(child));
            stack.push_back(&stack.back()->children.back());
            continue;
        }
        if (looks_like_value(toks[0])) {
            for (auto& t : toks) stack.back()->raw.push_back(t);
        } else {
            stack.back()->leaves.emplace_back(toks[0],
                                              std::vector<std::string>(toks.begin() + 1, toks.end()));
            if (stack.back()->leaves.size() == 1 && stack.back()->line == 0)
                stack.back()->line = lineno;
        }
    }
    if (stack.size() != 1) throw InputError("unbalanced braces at end of file");
    return root;
}

Complex parse_complex(const std::string& s, int line) {
    // forms: 1.5, -1.5, 1.5+0.3j, 1.5-0.3j, 0.3j
    try {
        if (s.back() == 'j' || s.back() == 'J') {
            std::string body = s.substr(0, s.size() - 1);
            // split at the last +/- that is not an exponent sign
            for (size_t i = body.size(); i-- > 1;) {
                char c = body[i];
                if ((c == '+' || c == '-') && body[i - 1] != 'e' && body[i - 1] != 'E') {
                    double re = std::stod(body.substr(0, i));
                    double im = std::stod(body.substr(i));
                    return {re, im};
                }
            }
            return {0.0, std::stod(body)};
        }
        return {std::stod(s), 0.0};
    } catch (const InputError&) {
        throw;
    } catch (...) {
        throw InputError("line " + std::to_string(line) + ": bad complex number '" + s + "'");
    }
}

std::string format_complex(Complex c) {
    char buf[80];
    std::snprintf(buf, sizeof(buf), "%.17g%+.17gj", c.real(), c.imag());
    return buf;
}

PhaseSet parse_phases(const std::string& s, int line) {
    PhaseSet out;
    for (char c : s) {
        auto p = net::phase_from_letter(c);
        if (!p) throw InputError("line " + std::to_string(line) + ": bad phase set '" + s + "'");
        out.push_back(*p);
    }
    std::sort(out.begin(), out.end());
    return out;
}

std::string phases_string(const PhaseSet& ps) {
    std::string s;
    for (Phase p : ps) s += net::phase_letter(p);
    return s;
}

Eigen::MatrixXcd parse_matrix(const KvNode& el, const std::string& key, int np, bool required) {
    const KvNode* m = el.child(key);
    if (!m) {
        if (required)
            throw InputError("line " + std::to_string(el.line) + ": " + el.key + " " +
                             (el.args.empty() ? "" : el.args[0]) + " is missing " + key);
        return {};
    }
    if (static_cast<int>(m->raw.size()) != np * np)
        throw InputError("line " + std::to_string(m->line) + ": " + key + " needs " +
                         std::to_string(np * np) + " entries (row-major), got " +
                         std::to_string(m->raw.size()));
    Eigen::MatrixXcd out(np, np);
    for (int i = 0; i < np; ++i)
        for (int j = 0; j < np; ++j) out(i, j) = parse_complex(m->raw[i * np + j], m->line);
    return out;
}

std::vector<Complex> parse_powers(const KvNode& el, int np) {
    const auto* p = el.leaf("p_kw");
    const auto* q = el.leaf("q_kvar");
    if (!p || static_cast<int>(p->size()) != np)
        throw InputError("line " + std::to_string(el.line) + ": p_kw needs " + std::to_string(np) +
                         " values");
    if (!q || static_cast<int>(q->size()) != np)
        throw InputError("line " + std::to_string(el.line) + ": q_kvar needs " + std::to_string(np) +
                         " values");
    std::vector<Complex> out(np);
    for (int i = 0; i < np; ++i) out[i] = {std::stod((*p)[i]), std::stod((*q)[i])};
    return out;
}

} // namespace

NetworkModel read_network_string(const std::string& text) {
    KvNode root = parse_kv(text);
    const KvNode* netn = root.child("network");
    if (!netn) throw InputError("network file has no 'network' block");
    NetworkModel model;
    model.s_base_mva = netn->num("s_base_mva", 1.0);

    for (const auto& c : netn->children) {
        if (c.args.empty() && c.key != "network")
            throw InputError("line " + std::to_string(c.line) + ": element '" + c.key +
                             "' needs an identifier");
        if (c.key == "bus") {
            net::Bus b;
            b.id = c.args[0];
            b.phases = parse_phases(c.require_str("phases"), c.line);
            b.base_kv = c.require_num("base_kv");
            b.vmin = c.num("vmin", 0.8);
            b.vmax = c.num("vmax", 1.2);
            b.is_reference = c.flag("reference", false);
            model.buses.push_back(std::move(b));
        } else if (c.key == "line") {
            net::LineModel l;
            l.id = c.args[0];
            l.from_bus = c.require_str("from");
            l.to_bus = c.require_str("to");
            l.phases = parse_phases(c.require_str("phases"), c.line);
            l.length_km = c.num("length_km", 0.0);
            l.status = c.flag("energized", true);
            int np = static_cast<int>(l.phases.size());
            l.series_impedance = parse_matrix(c, "z_ohm", np, true);
            l.shunt_admittance = parse_matrix(c, "y_shunt_s", np, false);
            model.lines.push_back(std::move(l));
        } else if (c.key == "switch") {
            net::LineModel l;
            l.id = c.args[0];
            l.is_switch = true;
            l.from_bus = c.require_str("from");
            l.to_bus = c.require_str("to");
            l.phases = parse_phases(c.require_str("phases"), c.line);
            l.status = c.flag("closed", true);
            model.lines.push_back(std::move(l));
        } else if (c.key == "transformer") {
            net::TransformerModel t;
            t.id = c.args[0];
            t.from_bus = c.require_str("from");
            t.to_bus = c.require_str("to");
            std::string conn = c.str("connection", "wye_wye");
            if (conn == "wye_wye")
                t.connection = net::WindingConnection::WYE_WYE;
            else if (conn == "delta_wye")
                t.connection = net::WindingConnection::DELTA_WYE;
            else
                throw InputError("line " + std::to_string(c.line) + ": bad connection '" + conn +
                                 "' (wye_wye or delta_wye)");
            t.series_impedance = parse_complex(c.require_str("z_pu"), c.line);
            t.tap_ratio = c.num("tap", 1.0);
            t.tap_step = c.num("tap_step", 0.0125);
            t.tap_min = static_cast<int>(c.num("tap_min", -16));
            t.tap_max = static_cast<int>(c.num("tap_max", 16));
            t.gang_operated = c.flag("gang", true);
            model.transformers.push_back(std::move(t));
        } else if (c.key == "load" || c.key == "generator") {
            PhaseSet phases = parse_phases(c.require_str("phases"), c.line);
            auto power = parse_powers(c, static_cast<int>(phases.size()));
            if (c.key == "load") {
                net::LoadModel d;
                d.id = c.args[0];
                d.bus = c.require_str("bus");
                d.phases = phases;
                d.power = power;
                d.is_monitored = c.flag("monitored", false);
                model.loads.push_back(std::move(d));
            } else {
                net::GeneratorModel g;
                g.id = c.args[0];
                g.bus = c.require_str("bus");
                g.phases = phases;
                g.power = power;
                g.is_monitored = c.flag("monitored", false);
                model.generators.push_back(std::move(g));
            }
        } else {
            throw InputError("line " + std::to_string(c.line) + ": unknown element type '" + c.key +
                             "'");
        }
    }
    return model;
}

NetworkModel read_network_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw InputError("cannot open network file '" + path + "'");
    std::stringstream ss;
    ss << f.rdbuf();
    try {
        return read_network_string(ss.str());
    } catch (const InputError& e) {
        throw InputError(path + ": " + e.what());
    }
}

std::string write_network_string(const NetworkModel& model) {
    std::ostringstream os;
    char buf[64];
    auto num = [&](double v) {
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        return std::string(buf);
    };
    os << "network {\n";
    os << "  s_base_mva " << num(model.s_base_mva) << "\n";
    for (const auto& b : model.buses) {
        os << "  bus " << b.id << " { phases " << phases_string(b.phases) << "  base_kv "
           << num(b.base_kv) << "  vmin " << num(b.vmin) << "  vmax " << num(b.vmax);
        if (b.is_reference) os << "  reference true";
        os << " }\n";
    }
    for (const auto& l : model.lines) {
        if (l.is_switch) {
            os << "  switch " << l.id << " { from " << l.from_bus << "  to " << l.to_bus
               << "  phases " << phases_string(l.phases) << "  closed "
               << (l.status ? "true" : "false") << " }\n";
            continue;
        }
        os << "  line " << l.id << " {\n";
        os << "    from " << l.from_bus << "  to " << l.to_bus << "  phases "
           << phases_string(l.phases) << "  length_km " << num(l.length_km) << "\n";
        if (!l.status) os << "    energized false\n";
        int np = static_cast<int>(l.phases.size());
        os << "    z_ohm {\n";
        for (int i = 0; i < np; ++i) {
            os << "     ";
            for (int j = 0; j < np; ++j) os << " " << format_complex(l.series_impedance(i, j));
            os << "\n";
        }
        os << "    }\n";
        if (l.shunt_admittance.size() != 0 && l.shunt_admittance.cwiseAbs().maxCoeff() > 0) {
            os << "    y_shunt_s {\n";
            for (int i = 0; i < np; ++i) {
                os << "     ";
                for (int j = 0; j < np; ++j) os << " " << format_complex(l.shunt_admittance(i, j));
                os << "\n";
            }
            os << "    }\n";
        }
        os << "  }\n";
    }
    for (const auto& t : model.transformers) {
        os << "  transformer " << t.id << " { from " << t.from_bus << "  to " << t.to_bus
           << "  connection "
           << (t.connection == net::WindingConnection::WYE_WYE ? "wye_wye" : "delta_wye")
           << "  z_pu " << format_complex(t.series_impedance) << "  tap " << num(t.tap_ratio)
           << "  tap_step " << num(t.tap_step) << "  tap_min " << t.tap_min << "  tap_max "
           << t.tap_max << "  gang " << (t.gang_operated ? "true" : "false") << " }\n";
    }
    auto unit = [&](const std::string& kind, const std::string& id, const std::string& bus,
                    const PhaseSet& phases, const std::vector<Complex>& power, bool monitored) {
        os << "  " << kind << " " << id << " { bus " << bus << "  phases " << phases_string(phases)
           << "  p_kw";
        for (const auto& s : power) os << " " << num(s.real());
        os << "  q_kvar";
        for (const auto& s : power) os << " " << num(s.imag());
        if (monitored) os << "  monitored true";
        os << " }\n";
    };
    for (const auto& d : model.loads) unit("load", d.id, d.bus, d.phases, d.power, d.is_monitored);
    for (const auto& g : model.generators)
        unit("generator", g.id, g.bus, g.phases, g.power, g.is_monitored);
    os << "}\n";
    return os.str();
}

void write_network_file(const NetworkModel& model, const std::string& path) {
    atomic_write(path, write_network_string(model));
}

// --- run configuration ------------------------------------------------------

namespace {

est::ParameterVariable parse_parameter(const KvNode& c) {
    if (c.args.size() < 2)
        throw InputError("line " + std::to_string(c.line) +
                         ": parameter needs '<element> <kind>'");
    est::ParameterVariable v;
    v.element = c.args[0];
    const std::string& kind = c.args[1];
    if (kind == "impedance_scale")
        v.kind = net::ParameterKind::IMPEDANCE_SCALE;
    else if (kind == "tap_ratio")
        v.kind = net::ParameterKind::TAP_RATIO;
    else if (kind == "switch_status")
        v.kind = net::ParameterKind::SWITCH_STATUS;
    else if (kind == "phase_assignment")
        v.kind = net::ParameterKind::PHASE_ASSIGNMENT;
    else
        throw InputError("line " + std::to_string(c.line) + ": unknown parameter kind '" + kind +
                         "'");
    if (const auto* set = c.leaf("set")) {
        for (const auto& s : *set) {
            if (auto p = net::phase_from_letter(s[0]); p && s.size() == 1 &&
                                                        v.kind == net::ParameterKind::PHASE_ASSIGNMENT)
                v.values.push_back(static_cast<double>(static_cast<int>(*p)));
            else if (s == "open")
                v.values.push_back(0.0);
            else if (s == "closed")
                v.values.push_back(1.0);
            else
                v.values.push_back(std::stod(s));
        }
    } else {
        v.lo = c.num("min", 0.0);
        v.hi = c.num("max", 0.0);
    }
    v.initial = c.num("init", v.discrete() ? (v.values.empty() ? 0.0 : v.values.front())
                                           : 0.5 * (v.lo + v.hi));
    return v;
}

void parse_meter(const KvNode& c, const NetworkModel& model, pf::MeasurementPlan& plan) {
    if (c.args.empty())
        throw InputError("line " + std::to_string(c.line) + ": meter needs an element");
    std::string element = c.args[0];
    std::vector<telemetry::MeasKind> kinds;
    {
        std::string ks = c.require_str("kinds");
        std::string cur;
        for (char ch : ks + ",") {
            if (ch == ',') {
                if (!cur.empty()) {
                    auto k = telemetry::kind_from_string(cur);
                    if (!k)
                        throw InputError("line " + std::to_string(c.line) + ": unknown kind '" +
                                         cur + "'");
                    kinds.push_back(*k);
                    cur.clear();
                }
            } else {
                cur += ch;
            }
        }
    }
    telemetry::Source source = telemetry::Source::SCADA;
    if (const auto* s = c.leaf("source")) {
        auto src = telemetry::source_from_string((*s)[0]);
        if (!src)
            throw InputError("line " + std::to_string(c.line) + ": unknown source '" + (*s)[0] +
                             "'");
        source = *src;
    }
    double sigma_rel = c.num("sigma_rel", source == telemetry::Source::SM ? 0.01 : 0.005);
    bool holdout = c.flag("holdout", false);
    if (const auto* ph = c.leaf("phases")) {
        for (char pc : (*ph)[0]) {
            auto p = net::phase_from_letter(pc);
            if (!p) throw InputError("line " + std::to_string(c.line) + ": bad phases");
            for (auto k : kinds)
                plan.entries.push_back({element, k, static_cast<telemetry::MeasPhase>(*p), source,
                                        sigma_rel, 0.0, holdout});
        }
    } else if (c.flag("aggregate", false)) {
        for (auto k : kinds)
            plan.entries.push_back(
                {element, k, telemetry::MeasPhase::AGG, source, sigma_rel, 0.0, holdout});
    } else {
        pf::add_meter(plan, model, element, kinds, source, sigma_rel, holdout);
    }
}

} // namespace

JobConfig read_config_string(const std::string& text, const NetworkModel& model) {
    KvNode root = parse_kv(text);
    JobConfig job;

    if (const KvNode* e = root.child("estimation")) {
        auto& spec = job.spec;
        std::string obj = e->str("objective", "wls");
        if (obj == "wls")
            spec.objective = est::Objective::WLS;
        else if (obj == "wlav")
            spec.objective = est::Objective::WLAV;
        else if (obj == "huber")
            spec.objective = est::Objective::SCHWEPPE_HUBER;
        else
            throw InputError("unknown objective '" + obj + "'");
        std::string solver = e->str("solver", "gn");
        if (solver == "gn")
            spec.solver = est::SolverKind::GN;
        else if (solver == "lm")
            spec.solver = est::SolverKind::LM;
        else if (solver == "newton_lagrangian")
            spec.solver = est::SolverKind::NEWTON_LAGRANGIAN;
        else
            throw InputError("unknown solver '" + solver + "'");
        spec.huber_gamma = e->num("huber_gamma", 1.5);
        std::string zi = e->str("zero_injection", "equality");
        if (zi == "equality")
            spec.zero_injection = est::ZeroInjectionMode::EQUALITY;
        else if (zi == "weight")
            spec.zero_injection = est::ZeroInjectionMode::HIGH_WEIGHT;
        else
            throw InputError("unknown zero_injection mode '" + zi + "'");
        spec.zero_injection_weight = e->num("zero_injection_weight", 1e8);
        spec.tol_grad = e->num("tol_grad", 1e-8);
        spec.tol_step = e->num("tol_step", 1e-10);
        spec.max_iter = static_cast<int>(e->num("max_iter", 50));
        if (e->leaf("vmag_min") || e->leaf("vmag_max")) {
            est::Bounds b;
            if (e->leaf("vmag_min")) b.vmag_min = e->num("vmag_min", 0.0);
            if (e->leaf("vmag_max")) b.vmag_max = e->num("vmag_max", 0.0);
            spec.bounds = b;
        }
        job.budget = static_cast<int>(e->num("budget", 4096));
        job.confidence = e->num("confidence", 0.95);
        for (const auto* pc : e->all("parameter")) {
            est::ParameterVariable v = parse_parameter(*pc);
            if (v.discrete())
                job.discrete_vars.push_back(v);
            else
                job.continuous_vars.push_back(v);
        }
    }

    if (const KvNode* s = root.child("simulate")) {
        SimulateConfig sim;
        sim.periods = static_cast<int>(s->num("periods", 1));
        sim.plan.period_spacing_s = s->num("period_s", 900.0);
        if (s->flag("full_injection", false)) sim.plan = pf::plan_full_injection(model);
        sim.plan.period_spacing_s = s->num("period_s", 900.0);
        sim.plan.pseudo_unmetered_loads = s->flag("pseudo_loads", false);
        sim.plan.pseudo_sigma_rel = s->num("pseudo_sigma_rel", 0.5);
        sim.plan.virtual_zero_injections = s->flag("virtual_zero_injection", false);
        for (const auto* mc : s->all("meter")) parse_meter(*mc, model, sim.plan);
        std::string noise = s->str("noise", "gaussian");
        if (noise == "none") {
            sim.noise = std::nullopt;
        } else {
            telemetry::NoiseModel nm;
            nm.distribution = noise == "laplace" ? telemetry::NoiseDistribution::LAPLACE
                                                 : telemetry::NoiseDistribution::GAUSSIAN;
            sim.noise = nm;
        }
        job.simulate = std::move(sim);
    }

    if (const KvNode* pl = root.child("placement")) {
        PlacementConfig pc;
        pc.k = static_cast<int>(pl->num("k", 1));
        for (const auto& l : pl->leaves) {
            if (l.first != "candidate") continue;
            if (l.second.size() < 3)
                throw InputError("candidate needs '<element> <kind> <phase>'");
            auto kind = telemetry::kind_from_string(l.second[1]);
            auto phase = telemetry::phase_from_string(l.second[2]);
            if (!kind || !phase) throw InputError("bad candidate '" + l.second[0] + "'");
            double sigma_rel = l.second.size() > 3 ? std::stod(l.second[3]) : 0.005;
            pc.candidates.push_back(
                {l.second[0], *kind, *phase, telemetry::Source::SCADA, sigma_rel, 0.0, false});
        }
        job.placement = std::move(pc);
    }
    return job;
}

JobConfig read_config_file(const std::string& path, const NetworkModel& model) {
    std::ifstream f(path);
    if (!f) throw InputError("cannot open config file '" + path + "'");
    std::stringstream ss;
    ss << f.rdbuf();
    try {
        return read_config_string(ss.str(), model);
    } catch (const InputError& e) {
        throw InputError(path + ": " + e.what());
    }
}

} // namespace gridest::io
