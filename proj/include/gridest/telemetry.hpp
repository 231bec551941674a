#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "gridest/common.hpp"

namespace gridest::telemetry {

enum class MeasKind { V_MAG, P_INJ, Q_INJ, P_FLOW, Q_FLOW, I_MAG, V_ANGLE_REL };
enum class MeasPhase { A = 0, B = 1, C = 2, AGG = 3 };  ///< AGG = three-phase aggregate
enum class Source { SCADA, SM, PSEUDO, VIRTUAL };

std::string to_string(MeasKind k);
std::string to_string(MeasPhase p);
std::string to_string(Source s);
std::optional<MeasKind> kind_from_string(const std::string& s);
std::optional<MeasPhase> phase_from_string(const std::string& s);
std::optional<Source> source_from_string(const std::string& s);

/// Canonical unit for each kind: V_MAG kV, P kW, Q kvar, I_MAG A, angle rad.
std::string canonical_unit(MeasKind k);

/// One timestamped reading. `element` names a bus, line, load or generator;
/// flow and current records accept an end suffix ("L5" = from end, "L5:to").
/// VIRTUAL records encode zero injections: value = 0, sigma = 0.
struct Measurement {
    std::int64_t timestamp = 0;
    MeasKind kind = MeasKind::V_MAG;
    std::string element;
    MeasPhase phase = MeasPhase::A;
    double value = 0.0;  ///< canonical unit for the kind
    double sigma = 0.0;  ///< standard deviation, same unit
    Source source = Source::SCADA;

    bool operator==(const Measurement&) const = default;
};

/// Ordered measurement records plus the timestamp -> period ordinal mapping.
struct MeasurementSet {
    std::vector<Measurement> records;
    std::vector<std::int64_t> period_times;  ///< sorted distinct timestamps

    void reindex();
    int period_of(std::int64_t t) const;  ///< -1 when the timestamp is unknown
    int period_count() const { return static_cast<int>(period_times.size()); }
    bool operator==(const MeasurementSet&) const = default;

    /// Violations of the record invariants (duplicate keys, bad sigmas).
    std::vector<std::string> check() const;
};

enum class NoiseDistribution { GAUSSIAN, LAPLACE };

/// Noise family plus per-kind default sigma (fraction of reading with an
/// absolute floor), used to fill records ingested without a sigma.
struct NoiseModel {
    NoiseDistribution distribution = NoiseDistribution::GAUSSIAN;
    std::map<MeasKind, double> rel_sigma;  ///< fraction of |value|
    double default_rel = 0.01;
    double sigma_floor = 1e-4;

    double sigma_for(MeasKind kind, double value) const;
};

enum class FaultKind {
    CT_REVERSAL,
    RATIO_ERROR,
    UNIT_MISLABEL,
    PHASE_ROTATION,
    INTERVAL_AVERAGING,
    AGGREGATE_ONLY,
    THRESHOLD_REPORTING,
    GROSS_OUTLIER,
};

std::string to_string(FaultKind k);

/// A telemetry corruption to inject. Empty filters match everything.
struct FaultSpec {
    FaultKind fault_kind = FaultKind::GROSS_OUTLIER;
    std::string element;                    ///< empty = any element
    std::optional<MeasKind> kind;           ///< empty = any kind
    std::optional<MeasPhase> phase;         ///< empty = any phase
    double ratio = 1.0;                     ///< RATIO_ERROR multiplier
    bool unit_to_smaller = false;           ///< UNIT_MISLABEL: x0.001 instead of x1000
    int averaging_window = 4;               ///< INTERVAL_AVERAGING, periods
    double threshold = 0.0;                 ///< THRESHOLD_REPORTING, canonical unit
    double outlier_k = 10.0;                ///< GROSS_OUTLIER, multiples of sigma
};

struct IngestOptions {
    std::optional<NoiseModel> sigma_defaults;  ///< fill-in for rows with missing sigma
    std::optional<double> align_window_s;      ///< snap timestamps after parsing
};

/// Parses the measurement CSV format
/// (`timestamp,element,kind,phase,value,sigma,unit,source`; '#' comments).
/// Values are normalized to the canonical units. Throws InputError with the
/// offending line number on malformed rows.
MeasurementSet ingest(const std::string& csv_path, const IngestOptions& options = {});
MeasurementSet ingest_string(const std::string& csv_text, const IngestOptions& options = {});

/// Writes the CSV form; ingest(emit(s)) == s.
void emit_csv(const MeasurementSet& set, const std::string& csv_path);
std::string emit_csv_string(const MeasurementSet& set);

/// Snaps timestamps to centers of `window_s`-wide bins. Collisions on
/// (element, kind, phase, period) keep the record nearest the bin center,
/// ties to the earliest; the number of dropped records is reported.
MeasurementSet align_periods(const MeasurementSet& set, double window_s,
                             int* collisions = nullptr);

/// Applies one corruption from the fault catalog; deterministic per seed.
MeasurementSet inject_fault(const MeasurementSet& set, const FaultSpec& fault,
                            std::uint64_t seed);

/// Adds a random draw with each record's own sigma; VIRTUAL rows untouched.
MeasurementSet add_noise(const MeasurementSet& set, const NoiseModel& noise, std::uint64_t seed);

} // namespace gridest::telemetry
