#include "gridest/telemetry.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace gridest::telemetry {

std::string to_string(MeasKind k) {
    switch (k) {
        case MeasKind::V_MAG: return "V_MAG";
        case MeasKind::P_INJ: return "P_INJ";
        case MeasKind::Q_INJ: return "Q_INJ";
        case MeasKind::P_FLOW: return "P_FLOW";
        case MeasKind::Q_FLOW: return "Q_FLOW";
        case MeasKind::I_MAG: return "I_MAG";
        case MeasKind::V_ANGLE_REL: return "V_ANGLE_REL";
    }
    return "?";
}

std::string to_string(MeasPhase p) {
    switch (p) {
        case MeasPhase::A: return "a";
        case MeasPhase::B: return "b";
        case MeasPhase::C: return "c";
        case MeasPhase::AGG: return "abc";
    }
    return "?";
}

std::string to_string(Source s) {
    switch (s) {
        case Source::SCADA: return "SCADA";
        case Source::SM: return "SM";
        case Source::PSEUDO: return "PSEUDO";
        case Source::VIRTUAL: return "VIRTUAL";
    }
    return "?";
}

std::optional<MeasKind> kind_from_string(const std::string& s) {
    static const std::map<std::string, MeasKind> m = {
        {"V_MAG", MeasKind::V_MAG},   {"P_INJ", MeasKind::P_INJ},
        {"Q_INJ", MeasKind::Q_INJ},   {"P_FLOW", MeasKind::P_FLOW},
        {"Q_FLOW", MeasKind::Q_FLOW}, {"I_MAG", MeasKind::I_MAG},
        {"V_ANGLE_REL", MeasKind::V_ANGLE_REL},
    };
    auto it = m.find(s);
    return it == m.end() ? std::nullopt : std::optional<MeasKind>(it->second);
}

std::optional<MeasPhase> phase_from_string(const std::string& s) {
    if (s == "a" || s == "A") return MeasPhase::A;
    if (s == "b" || s == "B") return MeasPhase::B;
    if (s == "c" || s == "C") return MeasPhase::C;
    if (s == "abc" || s == "ABC") return MeasPhase::AGG;
    return std::nullopt;
}

std::optional<Source> source_from_string(const std::string& s) {
    if (s == "SCADA") return Source::SCADA;
    if (s == "SM") return Source::SM;
    if (s == "PSEUDO") return Source::PSEUDO;
    if (s == "VIRTUAL") return Source::VIRTUAL;
    return std::nullopt;
}

std::string canonical_unit(MeasKind k) {
    switch (k) {
        case MeasKind::V_MAG: return "kV";
        case MeasKind::P_INJ:
        case MeasKind::P_FLOW: return "kW";
        case MeasKind::Q_INJ:
        case MeasKind::Q_FLOW: return "kvar";
        case MeasKind::I_MAG: return "A";
        case MeasKind::V_ANGLE_REL: return "rad";
    }
    return "?";
}

std::string to_string(FaultKind k) {
    switch (k) {
        case FaultKind::CT_REVERSAL: return "CT_REVERSAL";
        case FaultKind::RATIO_ERROR: return "RATIO_ERROR";
        case FaultKind::UNIT_MISLABEL: return "UNIT_MISLABEL";
        case FaultKind::PHASE_ROTATION: return "PHASE_ROTATION";
        case FaultKind::INTERVAL_AVERAGING: return "INTERVAL_AVERAGING";
        case FaultKind::AGGREGATE_ONLY: return "AGGREGATE_ONLY";
        case FaultKind::THRESHOLD_REPORTING: return "THRESHOLD_REPORTING";
        case FaultKind::GROSS_OUTLIER: return "GROSS_OUTLIER";
    }
    return "?";
}

// --- MeasurementSet -------------------------------------------------------

void MeasurementSet::reindex() {
    std::set<std::int64_t> times;
    for (const auto& r : records) times.insert(r.timestamp);
    period_times.assign(times.begin(), times.end());
}

int MeasurementSet::period_of(std::int64_t t) const {
    auto it = std::lower_bound(period_times.begin(), period_times.end(), t);
    if (it == period_times.end() || *it != t) return -1;
    return static_cast<int>(it - period_times.begin());
}

std::vector<std::string> MeasurementSet::check() const {
    std::vector<std::string> issues;
    std::set<std::tuple<std::string, int, int, std::int64_t>> keys;
    for (size_t i = 0; i < records.size(); ++i) {
        const auto& r = records[i];
        if (r.source == Source::VIRTUAL) {
            if (r.sigma != 0.0 || r.value != 0.0)
                issues.push_back("record " + std::to_string(i) +
                                 ": VIRTUAL records must carry value 0 and sigma 0");
        } else if (!(r.sigma > 0.0)) {
            issues.push_back("record " + std::to_string(i) + ": sigma must be positive");
        }
        if (r.phase == MeasPhase::AGG && r.kind != MeasKind::P_INJ &&
            r.kind != MeasKind::Q_INJ && r.kind != MeasKind::P_FLOW &&
            r.kind != MeasKind::Q_FLOW)
            issues.push_back("record " + std::to_string(i) +
                             ": aggregate phase only allowed for P/Q kinds");
        auto key = std::make_tuple(r.element, static_cast<int>(r.kind),
                                   static_cast<int>(r.phase), r.timestamp);
        if (!keys.insert(key).second)
            issues.push_back("record " + std::to_string(i) + ": duplicate (element,kind,phase,period)");
    }
    return issues;
}

double NoiseModel::sigma_for(MeasKind kind, double value) const {
    auto it = rel_sigma.find(kind);
    double rel = it == rel_sigma.end() ? default_rel : it->second;
    return std::max(sigma_floor, rel * std::abs(value));
}

// --- CSV ------------------------------------------------------------------

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(trim(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(trim(cur));
    return out;
}

// factor from the declared unit to the canonical unit of the kind
double unit_factor(MeasKind kind, const std::string& unit, int lineno) {
    auto fail = [&]() -> double {
        throw InputError("line " + std::to_string(lineno) + ": unit '" + unit +
                         "' not valid for kind " + to_string(kind));
    };
    switch (kind) {
        case MeasKind::V_MAG:
            if (unit == "kV") return 1.0;
            if (unit == "V") return 1e-3;
            return fail();
        case MeasKind::P_INJ:
        case MeasKind::P_FLOW:
            if (unit == "kW") return 1.0;
            if (unit == "W") return 1e-3;
            return fail();
        case MeasKind::Q_INJ:
        case MeasKind::Q_FLOW:
            if (unit == "kvar") return 1.0;
            if (unit == "var") return 1e-3;
            return fail();
        case MeasKind::I_MAG:
            if (unit == "A") return 1.0;
            if (unit == "kA") return 1e3;
            return fail();
        case MeasKind::V_ANGLE_REL:
            if (unit == "rad") return 1.0;
            return fail();
    }
    return fail();
}

} // namespace

MeasurementSet ingest_string(const std::string& csv_text, const IngestOptions& options) {
    MeasurementSet set;
    std::istringstream in(csv_text);
    std::string line;
    int lineno = 0;
    bool header_seen = false;
    while (std::getline(in, line)) {
        ++lineno;
        std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        if (!header_seen) {
            auto cols = split_csv_line(t);
            if (cols.size() != 8 || cols[0] != "timestamp" || cols[1] != "element" ||
                cols[2] != "kind" || cols[3] != "phase" || cols[4] != "value" ||
                cols[5] != "sigma" || cols[6] != "unit" || cols[7] != "source")
                throw InputError("line " + std::to_string(lineno) +
                                 ": expected header timestamp,element,kind,phase,value,sigma,unit,source");
            header_seen = true;
            continue;
        }
        auto cols = split_csv_line(t);
        if (cols.size() != 8)
            throw InputError("line " + std::to_string(lineno) + ": expected 8 columns, got " +
                             std::to_string(cols.size()));
        Measurement m;
        try {
            m.timestamp = std::stoll(cols[0]);
        } catch (...) {
            throw InputError("line " + std::to_string(lineno) + ": bad timestamp '" + cols[0] + "'");
        }
        m.element = cols[1];
        if (m.element.empty())
            throw InputError("line " + std::to_string(lineno) + ": empty element");
        auto kind = kind_from_string(cols[2]);
        if (!kind)
            throw InputError("line " + std::to_string(lineno) + ": unknown kind '" + cols[2] + "'");
        m.kind = *kind;
        auto phase = phase_from_string(cols[3]);
        if (!phase)
            throw InputError("line " + std::to_string(lineno) + ": unknown phase '" + cols[3] + "'");
        m.phase = *phase;
        double factor = unit_factor(m.kind, cols[6], lineno);
        try {
            m.value = std::stod(cols[4]) * factor;
        } catch (...) {
            throw InputError("line " + std::to_string(lineno) + ": bad value '" + cols[4] + "'");
        }
        auto source = source_from_string(cols[7]);
        if (!source)
            throw InputError("line " + std::to_string(lineno) + ": unknown source '" + cols[7] + "'");
        m.source = *source;
        if (cols[5].empty()) {
            if (m.source == Source::VIRTUAL) {
                m.sigma = 0.0;
            } else if (options.sigma_defaults) {
                m.sigma = options.sigma_defaults->sigma_for(m.kind, m.value);
            } else {
                throw InputError("line " + std::to_string(lineno) +
                                 ": missing sigma and no default noise model given");
            }
        } else {
            try {
                m.sigma = std::stod(cols[5]) * factor;
            } catch (...) {
                throw InputError("line " + std::to_string(lineno) + ": bad sigma '" + cols[5] + "'");
            }
        }
        if (m.source == Source::VIRTUAL && (m.sigma != 0.0 || m.value != 0.0))
            throw InputError("line " + std::to_string(lineno) +
                             ": VIRTUAL records must carry value 0 and sigma 0");
        if (m.source != Source::VIRTUAL && !(m.sigma > 0.0))
            throw InputError("line " + std::to_string(lineno) + ": sigma must be positive");
        set.records.push_back(m);
    }
    if (!header_seen) throw InputError("measurement CSV has no header row");
    set.reindex();
    if (options.align_window_s) return align_periods(set, *options.align_window_s);
    return set;
}

MeasurementSet ingest(const std::string& csv_path, const IngestOptions& options) {
    std::ifstream f(csv_path);
    if (!f) throw InputError("cannot open measurement file '" + csv_path + "'");
    std::stringstream ss;
    ss << f.rdbuf();
    return ingest_string(ss.str(), options);
}

std::string emit_csv_string(const MeasurementSet& set) {
    std::string out = "timestamp,element,kind,phase,value,sigma,unit,source\n";
    char buf[512];
    for (const auto& r : set.records) {
        std::snprintf(buf, sizeof(buf), "%lld,%s,%s,%s,%.17g,%.17g,%s,%s\n",
                      static_cast<long long>(r.timestamp), r.element.c_str(),
                      to_string(r.kind).c_str(), to_string(r.phase).c_str(), r.value, r.sigma,
                      canonical_unit(r.kind).c_str(), to_string(r.source).c_str());
        out += buf;
    }
    return out;
}

void emit_csv(const MeasurementSet& set, const std::string& csv_path) {
    std::ofstream f(csv_path, std::ios::binary);
    if (!f) throw InputError("cannot write measurement file '" + csv_path + "'");
    f << emit_csv_string(set);
}

// --- alignment --------------------------------------------------------------

MeasurementSet align_periods(const MeasurementSet& set, double window_s, int* collisions) {
    if (!(window_s > 0)) throw InputError("alignment window must be positive");
    MeasurementSet out;
    // bin k covers [k*w, (k+1)*w); records snap to the bin center
    struct Slot {
        Measurement rec;
        double dist;
        std::int64_t orig;
    };
    std::map<std::tuple<std::string, int, int, std::int64_t>, Slot> best;
    int dropped = 0;
    for (const auto& r : set.records) {
        double w = window_s;
        auto bin = static_cast<std::int64_t>(std::floor(static_cast<double>(r.timestamp) / w));
        auto center = static_cast<std::int64_t>(std::llround((static_cast<double>(bin) + 0.5) * w));
        double dist = std::abs(static_cast<double>(r.timestamp) - (static_cast<double>(bin) + 0.5) * w);
        Measurement snapped = r;
        snapped.timestamp = center;
        auto key = std::make_tuple(r.element, static_cast<int>(r.kind),
                                   static_cast<int>(r.phase), center);
        auto it = best.find(key);
        if (it == best.end()) {
            best.emplace(key, Slot{snapped, dist, r.timestamp});
        } else {
            ++dropped;
            // keep the record nearest the center, ties to the earliest original time
            if (dist < it->second.dist ||
                (dist == it->second.dist && r.timestamp < it->second.orig))
                it->second = Slot{snapped, dist, r.timestamp};
        }
    }
    for (auto& [key, slot] : best) out.records.push_back(slot.rec);
    std::stable_sort(out.records.begin(), out.records.end(),
                     [](const Measurement& a, const Measurement& b) {
                         if (a.timestamp != b.timestamp) return a.timestamp < b.timestamp;
                         if (a.element != b.element) return a.element < b.element;
                         if (a.kind != b.kind) return a.kind < b.kind;
                         return a.phase < b.phase;
                     });
    out.reindex();
    if (collisions) *collisions = dropped;
    return out;
}

// --- fault injection ----------------------------------------------------

namespace {

std::string element_base(const std::string& element) {
    auto pos = element.find(':');
    return pos == std::string::npos ? element : element.substr(0, pos);
}

bool fault_matches(const FaultSpec& f, const Measurement& r) {
    if (!f.element.empty() && element_base(r.element) != f.element && r.element != f.element)
        return false;
    if (f.kind && r.kind != *f.kind) return false;
    if (f.phase && r.phase != *f.phase) return false;
    return true;
}

} // namespace

MeasurementSet inject_fault(const MeasurementSet& set, const FaultSpec& fault, std::uint64_t seed) {
    MeasurementSet out = set;
    Rng rng(sub_seed(seed, "fault:" + to_string(fault.fault_kind)));
    std::vector<size_t> matches;
    for (size_t i = 0; i < out.records.size(); ++i)
        if (fault_matches(fault, out.records[i])) matches.push_back(i);
    if (matches.empty()) throw InputError("fault target matches no records");

    switch (fault.fault_kind) {
        case FaultKind::CT_REVERSAL:
            for (size_t i : matches) {
                auto& r = out.records[i];
                if (r.kind == MeasKind::P_FLOW || r.kind == MeasKind::Q_FLOW) r.value = -r.value;
            }
            break;
        case FaultKind::RATIO_ERROR:
            for (size_t i : matches) out.records[i].value *= fault.ratio;
            break;
        case FaultKind::UNIT_MISLABEL: {
            double f = fault.unit_to_smaller ? 1e-3 : 1e3;
            for (size_t i : matches) out.records[i].value *= f;
            break;
        }
        case FaultKind::PHASE_ROTATION:
            for (size_t i : matches) {
                auto& r = out.records[i];
                switch (r.phase) {
                    case MeasPhase::A: r.phase = MeasPhase::B; break;
                    case MeasPhase::B: r.phase = MeasPhase::C; break;
                    case MeasPhase::C: r.phase = MeasPhase::A; break;
                    case MeasPhase::AGG: break;
                }
            }
            break;
        case FaultKind::INTERVAL_AVERAGING: {
            // group matching records per (element,kind,phase), then average
            // non-overlapping windows of `averaging_window` periods
            std::map<std::tuple<std::string, int, int>, std::vector<size_t>> series;
            for (size_t i : matches) {
                const auto& r = out.records[i];
                series[{r.element, static_cast<int>(r.kind), static_cast<int>(r.phase)}].push_back(i);
            }
            for (auto& [key, idxs] : series) {
                std::sort(idxs.begin(), idxs.end(), [&](size_t a, size_t b) {
                    return out.records[a].timestamp < out.records[b].timestamp;
                });
                int w = std::max(1, fault.averaging_window);
                for (size_t g = 0; g < idxs.size(); g += w) {
                    size_t end = std::min(idxs.size(), g + w);
                    double mean = 0.0;
                    for (size_t k = g; k < end; ++k) mean += out.records[idxs[k]].value;
                    mean /= static_cast<double>(end - g);
                    for (size_t k = g; k < end; ++k) out.records[idxs[k]].value = mean;
                }
            }
            break;
        }
        case FaultKind::AGGREGATE_ONLY: {
            std::map<std::tuple<std::string, int, std::int64_t>, std::vector<size_t>> groups;
            for (size_t i : matches) {
                const auto& r = out.records[i];
                if (r.kind != MeasKind::P_INJ && r.kind != MeasKind::Q_INJ &&
                    r.kind != MeasKind::P_FLOW && r.kind != MeasKind::Q_FLOW)
                    continue;
                if (r.phase == MeasPhase::AGG) continue;
                groups[{r.element, static_cast<int>(r.kind), r.timestamp}].push_back(i);
            }
            std::set<size_t> remove;
            std::vector<Measurement> added;
            for (auto& [key, idxs] : groups) {
                Measurement agg = out.records[idxs[0]];
                agg.phase = MeasPhase::AGG;
                agg.value = 0.0;
                double var = 0.0;
                for (size_t i : idxs) {
                    agg.value += out.records[i].value;
                    var += out.records[i].sigma * out.records[i].sigma;
                    remove.insert(i);
                }
                agg.sigma = std::sqrt(var);
                added.push_back(agg);
            }
            MeasurementSet next;
            for (size_t i = 0; i < out.records.size(); ++i)
                if (!remove.count(i)) next.records.push_back(out.records[i]);
            next.records.insert(next.records.end(), added.begin(), added.end());
            out = next;
            break;
        }
        case FaultKind::THRESHOLD_REPORTING: {
            std::map<std::tuple<std::string, int, int>, std::vector<size_t>> series;
            for (size_t i : matches) {
                const auto& r = out.records[i];
                series[{r.element, static_cast<int>(r.kind), static_cast<int>(r.phase)}].push_back(i);
            }
            for (auto& [key, idxs] : series) {
                std::sort(idxs.begin(), idxs.end(), [&](size_t a, size_t b) {
                    return out.records[a].timestamp < out.records[b].timestamp;
                });
                double last = out.records[idxs[0]].value;
                for (size_t k = 1; k < idxs.size(); ++k) {
                    double v = out.records[idxs[k]].value;
                    if (std::abs(v - last) > fault.threshold)
                        last = v;
                    else
                        out.records[idxs[k]].value = last;
                }
            }
            break;
        }
        case FaultKind::GROSS_OUTLIER: {
            std::vector<size_t> eligible;
            for (size_t i : matches)
                if (out.records[i].sigma > 0) eligible.push_back(i);
            if (eligible.empty()) throw InputError("gross outlier target has no noisy records");
            size_t pick = eligible[rng.index(eligible.size())];
            out.records[pick].value += fault.outlier_k * out.records[pick].sigma;
            break;
        }
    }
    out.reindex();
    return out;
}

MeasurementSet add_noise(const MeasurementSet& set, const NoiseModel& noise, std::uint64_t seed) {
    MeasurementSet out = set;
    Rng rng(sub_seed(seed, "noise"));
    for (auto& r : out.records) {
        if (r.source == Source::VIRTUAL) continue;
        double draw = noise.distribution == NoiseDistribution::GAUSSIAN
                          ? rng.normal(0.0, r.sigma)
                          : rng.laplace(r.sigma);
        r.value += draw;
    }
    return out;
}

} // namespace gridest::telemetry
