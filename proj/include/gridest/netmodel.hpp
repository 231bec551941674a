#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "gridest/common.hpp"

namespace gridest::net {

enum class Phase : int { A = 0, B = 1, C = 2 };

char phase_letter(Phase p);
std::optional<Phase> phase_from_letter(char c);

/// Ordered set of conductor phases (a < b < c).
using PhaseSet = std::vector<Phase>;

struct Bus {
    std::string id;
    PhaseSet phases;
    double base_kv = 1.0;  ///< line-to-neutral voltage base
    double vmin = 0.8;     ///< per-unit magnitude bounds
    double vmax = 1.2;
    bool is_reference = false;
};

/// Multi-phase series element. Switches are lines with `is_switch` set;
/// a closed switch is stamped with a small fixed impedance (1e-4 pu) and an
/// open one is absent from the admittance matrix.
struct LineModel {
    std::string id;
    std::string from_bus;
    std::string to_bus;
    PhaseSet phases;
    Eigen::MatrixXcd series_impedance;  ///< ohm (pu once converted), row-major per phase
    Eigen::MatrixXcd shunt_admittance;  ///< siemens (pu once converted), total, split half per end
    double length_km = 0.0;
    bool status = true;  ///< energized; doubles as closed for switches
    bool is_switch = false;
};

enum class WindingConnection { WYE_WYE, DELTA_WYE };

/// Two-winding transformer stamped as ideal ratio + series impedance.
/// The delta-wye connection applies the +30 degree convention: the wye side
/// positive-sequence voltage leads the delta side by 30 degrees.
struct TransformerModel {
    std::string id;
    std::string from_bus;  ///< primary (delta side for DELTA_WYE)
    std::string to_bus;    ///< secondary
    WindingConnection connection = WindingConnection::WYE_WYE;
    Complex series_impedance{0.0, 0.0};  ///< per-unit on system base
    double tap_ratio = 1.0;              ///< per-unit, applies to the primary winding
    double tap_step = 0.0125;
    int tap_min = -16;  ///< integer positions around 1.0
    int tap_max = 16;
    bool gang_operated = true;
};

/// Constant-power load; `power` holds S per phase in kW + j kvar
/// (per-unit after conversion), aligned with `phases`.
struct LoadModel {
    std::string id;
    std::string bus;
    PhaseSet phases;
    std::vector<Complex> power;
    bool is_monitored = false;
};

struct GeneratorModel {
    std::string id;
    std::string bus;
    PhaseSet phases;
    std::vector<Complex> power;  ///< kW + j kvar injected (pu after conversion)
    bool is_monitored = false;
};

struct NetworkModel {
    std::vector<Bus> buses;
    std::vector<LineModel> lines;
    std::vector<TransformerModel> transformers;
    std::vector<LoadModel> loads;
    std::vector<GeneratorModel> generators;
    double s_base_mva = 1.0;  ///< per-phase MVA base
    bool per_unit = false;

    const Bus* find_bus(const std::string& id) const;
    const LineModel* find_line(const std::string& id) const;
    const TransformerModel* find_transformer(const std::string& id) const;
    const LoadModel* find_load(const std::string& id) const;
    const GeneratorModel* find_generator(const std::string& id) const;
    const Bus& reference_bus() const;
};

// --- validation ---------------------------------------------------------

enum class FindingClass {
    DISCONNECTED_ISLAND,
    DANGLING_REFERENCE,
    SINGULAR_IMPEDANCE,
    DUPLICATE_ID,
    INVALID_VALUE,
};

std::string to_string(FindingClass c);

struct Finding {
    FindingClass cls;
    std::string element;
    std::string detail;
};

/// Diagnostic result of validate(); empty iff the model is admissible.
struct ValidationReport {
    std::vector<Finding> findings;
    bool ok() const { return findings.empty(); }
    std::string summary() const;
};

/// Checks every structural invariant; never throws.
ValidationReport validate(const NetworkModel& model);

// --- per unit -----------------------------------------------------------

/// Scales impedances to Zbase = base_kv^2 / s_base (from-bus base) and powers
/// to s_base. Idempotent; a model already in per-unit is returned unchanged.
NetworkModel to_per_unit(const NetworkModel& model);

// --- node indexing ------------------------------------------------------

/// Flat index over (bus, phase) pairs, bus order as given, phases a<b<c.
class NodeMap {
public:
    NodeMap() = default;
    explicit NodeMap(const NetworkModel& model);

    int count() const { return static_cast<int>(nodes_.size()); }
    int index(const std::string& bus, Phase p) const;        ///< -1 when absent
    int require(const std::string& bus, Phase p) const;      ///< throws on absence
    const std::pair<std::string, Phase>& node(int i) const { return nodes_[i]; }
    std::string label(int i) const;
    const std::vector<int>& reference_nodes() const { return ref_nodes_; }
    std::vector<int> bus_nodes(const std::string& bus) const;

private:
    std::vector<std::pair<std::string, Phase>> nodes_;
    std::map<std::pair<std::string, int>, int> lookup_;
    std::vector<int> ref_nodes_;
};

// --- admittance ---------------------------------------------------------

/// Per-element nodal admittance block, kept separate so parameter
/// sensitivities (impedance scale, tap ratio) stay element-local.
struct ElementStamp {
    std::string id;
    bool is_line = true;            ///< line or switch; false for transformer
    std::vector<int> nodes;         ///< from-side nodes then to-side nodes
    Eigen::MatrixXcd Y;             ///< block admittance over `nodes`
    Eigen::MatrixXcd Y_series;      ///< series-only part (scales with 1/impedance_scale)
    Eigen::MatrixXcd dY_dtap;       ///< transformer only: derivative at current tap
};

/// Stamps for every energized element of a per-unit model.
std::vector<ElementStamp> assemble_stamps(const NetworkModel& model, const NodeMap& nodes);

/// Sparse bus-phase admittance matrix (sum of element stamps). Symmetric by
/// construction; throws on a singular energized series impedance.
Eigen::SparseMatrix<Complex> assemble_admittance(const NetworkModel& model, const NodeMap& nodes);
Eigen::SparseMatrix<Complex> assemble_admittance(const NetworkModel& model);

// --- parameter overrides ------------------------------------------------

enum class ParameterKind { IMPEDANCE_SCALE, TAP_RATIO, SWITCH_STATUS, PHASE_ASSIGNMENT };

std::string to_string(ParameterKind k);

/// One substituted parameter value. `value` encodes: scale factor, tap ratio,
/// 0/1 switch status, or phase index 0/1/2 for single-phase load assignment.
struct ParameterOverride {
    std::string element;
    ParameterKind kind;
    double value;
};

using ParameterAssignment = std::vector<ParameterOverride>;

/// Returns a copy of the model with the overrides substituted; the input is
/// untouched. Throws InputError on unknown elements or out-of-range values.
NetworkModel apply_parameter_overrides(const NetworkModel& model, const ParameterAssignment& overrides);

/// Buses with no load and no generator attached (zero-injection candidates);
/// the reference bus is excluded.
std::vector<std::string> zero_injection_buses(const NetworkModel& model);

} // namespace gridest::net
