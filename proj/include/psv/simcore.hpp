#pragma once

// Fixed-step transient engine: unit dynamics, quasi-static network, periodic
// dispatch, contingencies, gyrator partitioning and trace recording.

#include "psv/dispatch.hpp"
#include "psv/grid.hpp"
#include "psv/loads.hpp"
#include "psv/powertrain.hpp"
#include "psv/storage.hpp"

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace psv::simcore {

// =============================================================================
// Scenario model
// =============================================================================

enum class EventKind { LoadStep, BusIsolation, EssUnavailable, GenTrip, MissionChange, ShedApproval };

const char* to_string(EventKind kind);
EventKind event_kind_from_string(const std::string& s);  ///< throws Error(Validation)

struct ContingencyEvent {
    double at = 0.0;
    EventKind kind = EventKind::LoadStep;
    std::string target;                       ///< bus, unit or mission name
    std::map<std::string, double> loads;      ///< load-step setpoints [kW]
    double ramp_s = 0.0;                      ///< load-step ramp duration
    /// Explicit shed entries; empty approves the latest advisory plan.
    std::vector<std::pair<std::string, double>> shed;
    std::string origin = "scenario";
    std::int64_t command_seq = -1;            ///< operator command sequence, -1 for scripted
};

struct PulseSpec {
    double amplitude_kw = 0.0;
    double width_s = 0.0;
    double period_s = 0.0;
};

struct IrradiancePoint {
    double t = 0.0;
    double w_m2 = 0.0;
};

struct SimParams {
    double dt = 1e-3;
    double schedule_period = 0.5;
    double duration = 10.0;
    int partitions = 1;
    int workers = 1;
    std::uint64_t seed = 0;
    int trace_decimation = 1;
    double realtime_factor = 0.0;   ///< 1 = wall-clock pacing, 0 = as fast as possible
    double telemetry_hz = 20.0;
    double r_t_ohm = 1e6;
    int coupling_delay = 1;
    double ess_ramp_kw_s = 50.0;    ///< applied when the ESS setpoint drops
};

struct Scenario {
    std::string name;
    std::string description;
    grid::NetworkModel network;
    std::vector<dispatch::GenUnit> fleet;
    std::optional<storage::EssUnit> ess;
    std::vector<loads::LoadUnit> loads;
    std::map<std::string, PulseSpec> pulses;  ///< by load id
    loads::Mission mission = loads::Mission::Cruising;
    std::vector<IrradiancePoint> irradiance;
    std::vector<ContingencyEvent> events;
    SimParams sim;
    dispatch::DispatchOptions dispatch;
    std::vector<std::vector<std::string>> partition_hint;

    /// Cross-reference checks; throws Error(Validation).
    void validate() const;
};

/// Irradiance at t from breakpoints, linearly interpolated and held at the ends.
double irradiance_at(const std::vector<IrradiancePoint>& timeline, double t);

// =============================================================================
// Partitioning
// =============================================================================

struct GyratorLink {
    std::string branch;
    std::string bus_a;      ///< voltage port side
    std::string bus_b;      ///< current port side
    int part_a = 0;
    int part_b = 0;
    double r_ohm = 0.0;     ///< cut branch resistance
    double r_t_ohm = 1e6;
    int delay = 1;
};

struct Partition {
    int id = 0;
    std::vector<std::string> buses;
    std::vector<GyratorLink> links;
};

/// Greedy balanced cut over live branches. `hint` groups buses explicitly;
/// islands never share a partition.
std::vector<Partition> partition(const grid::NetworkModel& network, int k,
                                 const std::vector<std::vector<std::string>>& hint = {},
                                 double r_t_ohm = 1e6, int delay = 1);

// =============================================================================
// State
// =============================================================================

struct UnitRuntime {
    powertrain::DieselEngineState engine;
    powertrain::GovernorState governor;
    powertrain::ConverterPlant converter;
    double p_e_kw = 0.0;        ///< electrical output to the bus
    double p_in_kw = 0.0;       ///< rectifier input, the engine load
    double p_set_kw = 0.0;
    double omega_ref_rpm = 0.0;
    bool connected = true;
    bool running = true;        ///< false once coasted below stall speed
};

struct LoadRuntime {
    double base_kw = 0.0;       ///< setpoint before any active ramp
    double target_kw = 0.0;
    double ramp_start = 0.0;
    double ramp_s = 0.0;
    double shed_kw = 0.0;
};

struct EnergyAudit {
    double mech_in_kj = 0.0;
    double pv_in_kj = 0.0;
    double load_kj = 0.0;
    double network_loss_kj = 0.0;
    double rotational_loss_kj = 0.0;
    double charge_loss_kj = 0.0;
    double coupling_kj = 0.0;       ///< partition boundary mismatch
    double kinetic_delta_kj = 0.0;
    double battery_delta_kj = 0.0;
    double capacitor_delta_kj = 0.0;

    double input_kj() const { return mech_in_kj + pv_in_kj; }
    double output_kj() const;
    double relative_error() const;
};

struct GenSample {
    double p_kw = 0.0;
    double p_set_kw = 0.0;
    double omega_rpm = 0.0;
    double omega_ref_rpm = 0.0;
    double sfoc = 0.0;          ///< at the actual speed, 0 when idle
    double sfoc_fixed = 0.0;    ///< same power at rated speed
    double fuel_kg_h = 0.0;
    bool running = false;
};

struct TraceEvent {
    double t = 0.0;               ///< step boundary at which it took effect
    std::string kind;
    std::string detail;
    std::int64_t command_seq = -1;
};

struct TraceRecord {
    double t = 0.0;
    std::uint64_t schedule_id = 0;
    std::string mode;
    std::string mission;
    std::vector<GenSample> gens;
    double ess_p_kw = 0.0;
    double ess_p_set_kw = 0.0;
    double soc = 0.0;
    std::string ess_mode;
    double load_kw = 0.0;
    double losses_kw = 0.0;
    std::vector<double> bus_v;
    double sfoc_fleet = 0.0;
    double sfoc_fixed_fleet = 0.0;
    std::vector<TraceEvent> events;
    std::string advisory;
};

struct SimTrace {
    std::vector<std::string> gen_ids;
    std::vector<std::string> bus_ids;
    std::vector<TraceRecord> records;
};

/// One row per applied schedule, shaped like the dispatch summary table.
struct ScheduleRow {
    double t = 0.0;
    dispatch::Schedule schedule;
};

struct SimState {
    double t = 0.0;
    std::int64_t step_index = 0;
    double dt = 1e-3;
    Scenario scenario;               ///< live copy, mutated by events
    std::vector<UnitRuntime> units;
    std::vector<LoadRuntime> load_rt;
    loads::MissionProfile mission;
    storage::EssOperatingPoint ess_op;
    double ess_set_kw = 0.0;         ///< ramped setpoint actually commanded
    double ess_target_kw = 0.0;      ///< latest schedule value
    std::vector<Partition> partitions;
    std::vector<grid::NetworkModel> part_networks;
    std::vector<double> bus_v;       ///< pu, last solution
    std::vector<std::vector<double>> v_history;  ///< delayed voltages for the couplings
    double losses_kw = 0.0;
    double load_kw = 0.0;
    dispatch::Schedule active;
    std::optional<dispatch::Schedule> pending;
    std::vector<ContingencyEvent> queue;  ///< sorted by time, stable
    std::vector<TraceEvent> step_events;
    double next_schedule_t = 0.0;
    bool schedule_applied = false;   ///< a schedule took effect this step
    std::vector<ScheduleRow> schedule_log;
    EnergyAudit audit;
    double initial_kinetic_kj = 0.0;
    double initial_battery_kj = 0.0;
    double initial_capacitor_kj = 0.0;
    std::vector<bool> load_energized;
    bool halted = false;
    std::string halt_reason;
};

struct RunOptions {
    std::optional<int> partitions;
    std::optional<int> workers;
    std::optional<double> duration;
    std::optional<int> trace_decimation;
    bool keep_trace = true;
    /// Called after every recorded step; return false to stop early.
    std::function<bool(const SimState&, const TraceRecord&)> on_record;
};

struct SimResult {
    SimTrace trace;
    std::vector<ScheduleRow> schedules;
    EnergyAudit audit;
    SimState final_state;
};

/// Equilibrium state at t = 0 under the initial schedule.
SimState init_state(const Scenario& scenario, const RunOptions& options = {});

/// Queues an event after validating its references; throws Error(Validation).
void inject(SimState& state, ContingencyEvent event);

/// Advances the state by one dt. Returns the record for this step.
TraceRecord step(SimState& state);

SimResult run_scenario(const Scenario& scenario, const RunOptions& options = {});

/// Fleet SFOC of a record at rated speed versus the actual speed.
double fixed_speed_penalty(const TraceRecord& record);

}  // namespace psv::simcore
