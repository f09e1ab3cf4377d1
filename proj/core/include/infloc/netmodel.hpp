#pragma once

#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "infloc/errors.hpp"

namespace infloc::netmodel {

enum class BusKind { Slack, PV, PQ };

const char* to_string(BusKind kind);

struct Bus {
    int id = 0;               ///< external bus number (case-file numbering)
    BusKind kind = BusKind::PQ;
    double v_set = 1.0;       ///< per-unit magnitude setpoint (PV/Slack)
    double theta_set = 0.0;   ///< radians (Slack)
    double shunt_g = 0.0;     ///< per-unit shunt conductance
    double shunt_b = 0.0;     ///< per-unit shunt susceptance
    double base_kv = 0.0;
    double vm0 = 1.0;         ///< case-file voltage magnitude (warm-start data)
    double va0 = 0.0;         ///< case-file voltage angle, radians

    bool operator==(const Bus&) const = default;
};

struct Branch {
    int from_bus = 0;         ///< external id
    int to_bus = 0;           ///< external id
    double r = 0.0;
    double x = 0.0;
    double b_charging = 0.0;  ///< total line charging susceptance
    double tap = 1.0;         ///< off-nominal turns ratio, 1.0 if none
    double shift = 0.0;       ///< radians
    bool in_service = true;

    bool operator==(const Branch&) const = default;
};

struct Generator {
    int bus = 0;              ///< external id
    double p_set = 0.0;       ///< per-unit active injection
    double v_set = 1.0;       ///< per-unit magnitude target
    double q_set = 0.0;       ///< case-file reactive output (warm-start data)
    double q_min = 0.0;       ///< parsed, not enforced during solves
    double q_max = 0.0;       ///< parsed, not enforced during solves
    bool in_service = true;

    bool operator==(const Generator&) const = default;
};

struct Load {
    int bus = 0;              ///< external id
    double p = 0.0;           ///< per-unit active demand
    double q = 0.0;           ///< per-unit reactive demand

    bool operator==(const Load&) const = default;
};

enum class DiagCode {
    DuplicateBusId,
    DanglingBranch,
    NoSlack,
    MultipleSlack,
    ZeroImpedanceBranch,
    NonPositiveTap,
    BadVoltageSetpoint,
    IslandDetected,
    NonFiniteValue,
    GenAtPqBusFolded,
    PvBusWithoutGenDemoted,
    KClampedToInjectionCount,
};

const char* to_string(DiagCode code);

struct Diagnostic {
    DiagCode code;
    int ref_bus = -1;      ///< external bus id, -1 if n/a
    int ref_branch = -1;   ///< branch array position, -1 if n/a
    std::string message;
};

/// Immutable per-unit network model. Construct via parse_matpower(),
/// json_io::network_from_json(), or fill the fields and call finalize().
/// Safe to share across concurrent solves once finalized.
struct Network {
    double base_mva = 100.0;
    double alpha = 1.0;    ///< applied loading factor
    std::string name;      ///< case name, informational

    std::vector<Bus> buses;
    std::vector<Branch> branches;
    std::vector<Generator> generators;
    std::vector<Load> loads;

    /// Normalizations applied while building the model (informational).
    std::vector<Diagnostic> normalizations;

    /// Builds the external-id index and checks fatal structural invariants.
    /// Throws InvalidTopology on duplicate ids, dangling branch endpoints,
    /// missing slack, or an in-service zero-impedance branch.
    void finalize();

    int n_bus() const { return static_cast<int>(buses.size()); }
    int n_branch() const { return static_cast<int>(branches.size()); }

    /// Internal index of an external bus id; throws InvalidTopology if unknown.
    int index_of(int external_id) const;
    bool has_bus(int external_id) const { return index_.count(external_id) != 0; }
    int id_of(int internal_index) const { return buses[internal_index].id; }
    int slack_index() const { return slack_; }

  private:
    std::unordered_map<int, int> index_;
    int slack_ = -1;
};

/// Parses a MATPOWER-format case (matrix tables only). Tables other than
/// baseMVA/bus/gen/branch are skipped. Out-of-service generators and branches
/// are dropped; generators at PQ buses are folded into loads; PV buses with no
/// in-service generator are demoted to PQ (recorded in normalizations).
Network parse_matpower(std::string_view text);

/// Convenience wrapper around parse_matpower for a file on disk.
Network load_case(const std::string& path);

/// Returns a copy with all load powers and generator active-power setpoints
/// scaled by alpha. Voltage setpoints are unchanged. Composition holds:
/// scale_loading(scale_loading(n, a), b) == scale_loading(n, a*b).
Network scale_loading(const Network& net, double alpha);

/// Non-throwing invariant check; returns one diagnostic per violation,
/// empty for a well-formed network. Never mutates.
std::vector<Diagnostic> validate(const Network& net);

/// Field-wise equality of the model data (normalization notes excluded).
bool model_equal(const Network& a, const Network& b);

}  // namespace infloc::netmodel
