#pragma once

// SFOC-minimizing DC optimal power flow and suboptimal-point handling.

#include "psv/grid.hpp"
#include "psv/loads.hpp"
#include "psv/powertrain.hpp"
#include "psv/storage.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace psv::dispatch {

/// One diesel-generator train as seen by the scheduler and the simulator.
struct GenUnit {
    std::string id;
    std::string bus;
    double rated_kw = 2048.0;
    double p_min_kw = 0.0;
    bool available = true;
    std::shared_ptr<const powertrain::SfocMap> sfoc;
    powertrain::DieselEngineParams engine = powertrain::DieselEngineParams::sized();
    powertrain::GovernorParams governor;
    powertrain::ConverterPlant converter;
};

enum class Relaxation { None, Overload };
enum class ScheduleMode { Feasible, OverloadRelaxed, Infeasible };
enum class ZeroDispatch { Idle, Stop };

const char* to_string(ScheduleMode mode);

struct DispatchOptions {
    double dg_reserve_kw = 700.0;       ///< spinning reserve kept on the DGs
    double overload_factor = 1.30;
    double overload_weight = 1e4;       ///< kg/h per (pu overload)^2
    double reserve_weight = 1e3;        ///< kg/h per (pu shortfall)^2
    double converter_efficiency = 0.98;
    double f_p = 0.0;                   ///< ESS energy price, 0 = derive from DG marginals
    double loss_tolerance_kw = 1.0;
    int max_outer_iterations = 12;
    int max_iterations = 4000;
    ZeroDispatch zero_dispatch = ZeroDispatch::Idle;
    double idle_speed_rpm = 700.0;
};

struct Control {
    enum class Kind { Gen, Ess, Shed };
    Kind kind = Kind::Gen;
    std::string id;
    std::string bus;
    double lo = 0.0;
    double hi = 0.0;
    double rated = 0.0;
    int island = -1;
};

/// Linearized scheduling problem. Rows of j_e/o_e are one balance equality per
/// live island (J_e u + o_e = 0); rows of j_i/o_i are inequalities
/// (J_i u + o_i <= 0). Both matrices are built once; only the loss part of
/// o_e is refreshed by the outer loop.
struct OpfProblem {
    std::vector<Control> controls;
    std::vector<int> unit;  ///< fleet index per control, -1 for ESS and shed
    Eigen::MatrixXd j_e;
    Eigen::VectorXd o_e;
    Eigen::MatrixXd j_i;
    Eigen::VectorXd o_i;
    std::vector<double> island_demand_kw;  ///< load net of approved shed
    std::vector<double> island_losses_kw;
    std::vector<std::vector<std::size_t>> island_buses;

    Relaxation relaxation = Relaxation::None;
    double f_p = 0.0;
    DispatchOptions options;

    grid::NetworkModel network;
    std::vector<GenUnit> gens;
    std::optional<storage::EssUnit> ess;
    std::vector<loads::LoadUnit> loads;
    loads::MissionProfile mission;
    std::vector<double> fixed_injections_kw;  ///< per bus, loads only
    std::vector<grid::ConverterPoint> converters;

    std::size_t count(Control::Kind kind) const;
    /// Objective at u [kg/h]: fuel at optimized speed, ESS price, penalties.
    double objective(const Eigen::VectorXd& u) const;
    Eigen::VectorXd gradient(const Eigen::VectorXd& u) const;
    /// Fuel only [kg/h].
    double fuel(const Eigen::VectorXd& u) const;
};

struct GenDispatch {
    std::string id;
    std::string bus;
    double p_kw = 0.0;
    double omega_ref_rpm = 0.0;
    bool available = true;
};

struct Schedule {
    std::uint64_t id = 0;
    std::vector<GenDispatch> gens;
    double p_ess_kw = 0.0;
    std::optional<loads::ShedPlan> shed;  ///< advisory, applied only on approval
    double objective = 0.0;               ///< kg/h including penalties
    double fuel_kg_h = 0.0;
    ScheduleMode mode = ScheduleMode::Feasible;
    grid::ViolationReport violations;
    /// Branch thermal overloads. Flows on fixed-load feeders are outside the
    /// scheduler's control, so these never change the mode.
    grid::ViolationReport warnings;
    double solve_time = 0.0;              ///< wall clock [s], informational
    double losses_kw = 0.0;
    double demand_kw = 0.0;
    double deficit_kw = 0.0;              ///< unserved demand in infeasible mode
    bool iteration_cap = false;
    int outer_iterations = 0;
    std::string advisory;

    double total_generation_kw() const;
};

/// Highest DG marginal fuel cost over [0, rated] divided by the charge
/// efficiency [kg/kWh].
double default_ess_price(const std::vector<GenUnit>& gens, double charge_efficiency);

OpfProblem build_opf(const grid::NetworkModel& network, const std::vector<GenUnit>& gens,
                     const std::optional<storage::EssUnit>& ess,
                     const std::vector<loads::LoadUnit>& loads,
                     const loads::MissionProfile& mission, Relaxation relaxation,
                     const DispatchOptions& options = {},
                     const std::vector<std::pair<std::string, double>>& approved_shed = {});

/// Strict solve, falling back to the overload relaxation and finally to a
/// minimal-violation point.
Schedule solve_opf(const grid::NetworkModel& network, const std::vector<GenUnit>& gens,
                   const std::optional<storage::EssUnit>& ess,
                   const std::vector<loads::LoadUnit>& loads,
                   const loads::MissionProfile& mission, const DispatchOptions& options = {},
                   const Schedule* warm_start = nullptr,
                   const std::vector<std::pair<std::string, double>>& approved_shed = {});

/// Solves a built problem as posed (no mode fallback). `tol` is the loss
/// iteration tolerance in kW.
Schedule solve_opf(const OpfProblem& problem, double tol, const Schedule* warm_start = nullptr);

std::vector<double> speed_setpoints(const Schedule& schedule, const std::vector<GenUnit>& gens,
                                    const DispatchOptions& options = {});

// =============================================================================
// Reserve
// =============================================================================

struct ReserveReport {
    double reserve_kw = 0.0;
    double dg_reserve_kw = 0.0;
    double ess_headroom_kw = 0.0;
    double requirement_kw = 0.0;
    bool below_requirement = false;
    double shortfall_kw = 0.0;
};

ReserveReport reserve_check(const std::vector<GenUnit>& fleet, const Schedule& schedule,
                            double ess_p_max_kw, double headroom_req_kw);

// =============================================================================
// Suboptimal points
// =============================================================================

enum class PointClass { Global, Local };

const char* to_string(PointClass c);

struct SuboptimalPoint {
    std::vector<double> p_gen;   ///< per running unit [kW]
    double p_ess = 0.0;
    double sfoc = 0.0;           ///< fleet g/kWh
    double omega = 0.0;          ///< pu of rated speed
    PointClass classification = PointClass::Local;
    double delta = 0.0;          ///< neighbourhood radius [kW]
    double objective = 0.0;
};

using SfocFunction = std::function<double(double p_kw, double omega_rpm)>;

struct ScanGrid {
    double gen_step_kw = 25.0;
    double ess_step_kw = 10.0;
    double omega_step_rpm = 10.0;
    std::optional<double> ess_lo_kw;   ///< sweep range, defaults to problem bounds
    std::optional<double> ess_hi_kw;
    SfocFunction sfoc;                 ///< overrides the units' maps when set
};

struct SuboptimalScan {
    std::vector<SuboptimalPoint> points;  ///< global first among equals, sorted by SFOC
    bool all_equivalent = false;
    bool coarse = false;
};

SuboptimalScan enumerate_suboptimal(const OpfProblem& problem, const Schedule& schedule,
                                    const ScanGrid& grid = {});

struct TrajectoryPoint {
    double t = 0.0;
    double p_ess = 0.0;
    double p_gen = 0.0;       ///< per running unit
    double omega_rpm = 0.0;
    double sfoc = 0.0;
    double demand_kw = 0.0;
};

struct Trajectory {
    std::vector<TrajectoryPoint> points;
    std::optional<SuboptimalPoint> via;
    bool truncated = false;
    std::string event;
};

struct RampRequest {
    double from_p_ess = 0.0;
    double to_p_ess = 0.0;
    double ramp_limit_kw_s = 50.0;       ///< infinity gives a single step
    double dt = 0.5;
    double dwell_s = 0.0;
    int running_units = 1;
    /// Demand seen by the fleet over time since the ramp start [kW].
    std::function<double(double)> demand;
    std::shared_ptr<const powertrain::SfocMap> sfoc;
};

Trajectory treat_suboptimal(const std::vector<SuboptimalPoint>& points,
                            const storage::EssUnit& ess_state, const RampRequest& request);

}  // namespace psv::dispatch
