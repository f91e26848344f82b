#pragma once

// Reduced bus-branch DC network: incidence, impedance, power flow, limits.

#include <Eigen/Dense>

#include <cstddef>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace psv::grid {

enum class BusKind { Generator, Load, Ess, Junction, Boundary };

const char* to_string(BusKind kind);
BusKind bus_kind_from_string(const std::string& s);

struct Bus {
    std::string id;
    BusKind kind = BusKind::Junction;
    double p_max_kw = 0.0;  ///< generation positive, consumption negative
    double p_min_kw = 0.0;
    std::optional<double> q_rating_kvar;
    double v_setpoint = 1.0;
    double v_min = 0.95;
    double v_max = 1.05;
};

struct Branch {
    std::string id;
    std::string from_bus;
    std::string to_bus;
    double r_mohm = 0.0;
    std::optional<double> x_mohm;
    double rating_kva = 0.0;
    double derating = 1.25;
};

struct NetworkModel {
    std::vector<Bus> buses;
    std::vector<Branch> branches;
    double base_voltage_v = 1500.0;
    double base_power_kva = 10000.0;
    /// Buses cut off by a bus-isolation event: every incident branch is open.
    std::set<std::string> isolated_buses;
    std::set<std::string> open_branches;

    std::size_t bus_index(const std::string& id) const;  ///< throws Error(Model)
    std::optional<std::size_t> find_bus(const std::string& id) const;
    bool branch_live(const Branch& b) const;
    /// Checks bus and branch invariants; throws Error(Model).
    void validate() const;
};

// =============================================================================
// Topology
// =============================================================================

struct IncidenceMatrix {
    Eigen::MatrixXd a;                 ///< live branches x buses
    std::vector<std::string> branch_ids;
    std::vector<std::string> bus_ids;
};

IncidenceMatrix build_incidence(const NetworkModel& network);

struct Island {
    std::vector<std::size_t> buses;    ///< indices into NetworkModel::buses, ascending
    std::optional<std::size_t> slack;
};

/// Connected components over live branches. The slack is the lowest-numbered
/// generator bus in `sources` (or of generator kind when `sources` is empty),
/// falling back to an ESS bus.
std::vector<Island> find_islands(const NetworkModel& network,
                                 const std::set<std::string>& sources = {});

struct BusImpedanceMatrix {
    struct Block {
        std::vector<std::string> buses;
        std::string slack;
        Eigen::MatrixXd z_mohm;
    };
    std::vector<Block> islands;
    std::vector<std::string> isolated;  ///< buses with no branch and no slack role
};

/// Nodal inversion per island with the slack tied to ground through r_ref.
BusImpedanceMatrix build_zbus(const NetworkModel& network, double r_ref_mohm = 1.0);

// =============================================================================
// Power flow
// =============================================================================

struct FlowOptions {
    double tolerance_kw = 0.1;
    int max_iterations = 50;
    /// Slack buses by id; empty means derive per island from bus kinds.
    std::set<std::string> sources;
    std::map<std::string, double> slack_voltage_pu;
    /// Voltage sources behind a resistance, used for partition boundaries.
    struct Tie {
        std::string bus;
        double r_ohm = 0.0;
        double v_source_pu = 1.0;
        double shunt_ohm = 0.0;  ///< optional shunt to ground at the bus, 0 = none
    };
    std::vector<Tie> ties;
};

struct FlowSolution {
    std::vector<double> bus_voltages;    ///< pu, zero on de-energized islands
    std::vector<double> bus_injections;  ///< kW, slack buses include the balance
    std::vector<double> branch_flows;    ///< kW leaving from_bus, zero on open branches
    std::vector<double> branch_currents; ///< pu from -> to
    double total_losses = 0.0;
    bool converged = false;
    int iterations = 0;
    double max_mismatch_kw = 0.0;
    std::vector<Island> islands;
};

/// Newton iteration on P_i = V_i sum_j G_ij (V_i - V_j). `injections_kw` is
/// indexed like network.buses; slack entries are ignored. Throws NumericError
/// on non-convergence and Error(Islanding) when a loaded island has no source.
FlowSolution dc_power_flow(const NetworkModel& network, const std::vector<double>& injections_kw,
                           const FlowOptions& options = {});

/// Balance residual sum(injections) - losses over energized islands [kW].
double balance_residual_kw(const FlowSolution& flow);

// =============================================================================
// Limits
// =============================================================================

enum class ViolationKind {
    GenOverload,
    GenUnderload,
    GenReactive,
    ShedBounds,
    EssBounds,
    ConverterAcVoltage,
    FilterVoltage,
    DcVoltage,
    ConverterCurrent,
    BranchOverload,
};

const char* to_string(ViolationKind kind);

struct Violation {
    ViolationKind kind;
    std::string element;
    double value = 0.0;
    double limit = 0.0;
    double margin = 0.0;  ///< amount beyond the limit, positive
};

struct ViolationReport {
    std::vector<Violation> items;
    bool empty() const { return items.empty(); }
    bool has(ViolationKind kind) const;
};

struct UnitPoint {
    std::string id;
    std::string bus;
    double p_kw = 0.0;
    double p_min_kw = 0.0;
    double p_max_kw = 0.0;
    double q_kvar = 0.0;
    double q_min_kvar = -std::numeric_limits<double>::infinity();
    double q_max_kvar = std::numeric_limits<double>::infinity();
    double rating_kw = 0.0;  ///< converter rating for the current check, 0 = skip
};

struct ShedPoint {
    std::string load_id;
    double shed_kw = 0.0;
    double demand_kw = 0.0;
};

/// AC-side operating point behind a boundary-node converter.
struct ConverterPoint {
    std::string bus;
    double p_kw = 0.0;      ///< AC active power
    double q_kvar = 0.0;
    double rating_kva = 0.0;
    double r_filter_pu = 0.01;  ///< on the converter base
    double x_filter_pu = 0.10;
};

/// Everything check_limits needs from a schedule, decoupled from dispatch.
struct OperatingPoint {
    std::vector<UnitPoint> gens;
    std::optional<UnitPoint> ess;
    std::vector<ShedPoint> sheds;
    std::vector<ConverterPoint> converters;
};

struct LimitOptions {
    double conv_v_min = 0.90;
    double conv_v_max = 1.10;
    double filter_v_min = 0.90;
    double filter_v_max = 1.10;
    double tolerance = 1e-6;
};

ViolationReport check_limits(const NetworkModel& network, const FlowSolution& flow,
                             const OperatingPoint& point, const LimitOptions& options = {});

}  // namespace psv::grid
