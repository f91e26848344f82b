#pragma once

// Consumer models, mission priorities and load shedding.

#include <map>
#include <string>
#include <utility>
#include <vector>

namespace psv::loads {

enum class LoadClass { Cruise, DpThruster, HotelHigh, HotelLow, Pulsed, Radar };
enum class Priority { HP, MP, LP };
enum class Mission { Cruising, DynamicPositioning, NavalWarfare, AtPort };
enum class Intensity { Low, High };

const char* to_string(LoadClass c);
const char* to_string(Priority p);
const char* to_string(Mission m);
LoadClass load_class_from_string(const std::string& s);
Mission mission_from_string(const std::string& s);

struct ThrusterParams {
    double c_t = 0.80;
    double c_tau = 0.56;
    double rho = 997.0;
    double d_p = 3.5;
    double omega_max = 2.0;       ///< rev/s
    double rated_power_kw = 1100.0;
};

struct LoadUnit {
    std::string id;
    std::string bus;
    LoadClass cls = LoadClass::HotelHigh;
    double rated = 0.0;          ///< kW, or kVA for hotel classes
    double power_factor = 0.8;   ///< hotel only
    double setpoint_kw = 0.0;    ///< consumption magnitude, AC side for hotel
    bool behind_converter = false;

    bool is_hotel() const { return cls == LoadClass::HotelHigh || cls == LoadClass::HotelLow; }
    double rated_kw() const { return is_hotel() ? rated * power_factor : rated; }
    /// Reactive power drawn by hotel loads at the current setpoint [kVAr].
    double reactive_kvar() const;
};

/// DC-side draw of a load including its boundary converter [kW].
double dc_draw_kw(const LoadUnit& load, double converter_efficiency = 0.98);

struct MissionProfile {
    Mission mission = Mission::Cruising;
    std::map<LoadClass, Priority> priority;
};

/// Load priorities per mission.
MissionProfile mission_profile(Mission mission);

struct ShedPlan {
    std::vector<std::pair<std::string, double>> entries;  ///< (load id, shed kW)
    double total_shed = 0.0;
    bool insufficient = false;
    double residual_kw = 0.0;
    std::string advisory;
};

// =============================================================================
// Operations
// =============================================================================

double cruise_load(double omega_frac, double rated_kw);

struct ThrusterForces {
    double thrust_n = 0.0;
    double torque_nm = 0.0;
};

ThrusterForces thruster_forces(const ThrusterParams& params, double omega_p);

struct DpLoad {
    double kw = 0.0;
    bool saturated = false;
};

/// C_tau rho d^5 w^3 with w in rev/s, clamped to the thruster rating.
DpLoad dp_load(const ThrusterParams& params, double omega_p);

/// Speed that draws the requested power (rev/s).
double dp_speed_for_power(const ThrusterParams& params, double p_kw);

struct PulseSegment {
    double t0 = 0.0;
    double t1 = 0.0;
    double p_kw = 0.0;
};

/// Window average of a piecewise-constant profile over [t1, t2] per period T.
double pulsed_load(const std::vector<PulseSegment>& profile, double t1, double t2, double period);

/// Instantaneous value of a rectangular pulse train.
double pulse_train(double t, double amplitude_kw, double width_s, double period_s);

/// Setpoints per load id for a mission preset. Loads missing from the roster
/// are ignored.
std::map<std::string, double> mission_preset(Mission mission, Intensity intensity,
                                              const std::vector<LoadUnit>& roster);

ShedPlan shed_plan(const MissionProfile& mission, double deficit_kw,
                   const std::vector<LoadUnit>& loads);

}  // namespace psv::loads
