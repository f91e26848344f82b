#include "psv/loads.hpp"

#include "psv/errors.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace psv::loads {

const char* to_string(LoadClass c) {
    switch (c) {
        case LoadClass::Cruise: return "cruise";
        case LoadClass::DpThruster: return "dp-thruster";
        case LoadClass::HotelHigh: return "hotel-high";
        case LoadClass::HotelLow: return "hotel-low";
        case LoadClass::Pulsed: return "pulsed";
        case LoadClass::Radar: return "radar";
    }
    return "cruise";
}

const char* to_string(Priority p) {
    switch (p) {
        case Priority::HP: return "HP";
        case Priority::MP: return "MP";
        case Priority::LP: return "LP";
    }
    return "HP";
}

const char* to_string(Mission m) {
    switch (m) {
        case Mission::Cruising: return "cruising";
        case Mission::DynamicPositioning: return "dynamic-positioning";
        case Mission::NavalWarfare: return "naval-warfare";
        case Mission::AtPort: return "at-port";
    }
    return "cruising";
}

LoadClass load_class_from_string(const std::string& s) {
    for (auto c : {LoadClass::Cruise, LoadClass::DpThruster, LoadClass::HotelHigh,
                   LoadClass::HotelLow, LoadClass::Pulsed, LoadClass::Radar}) {
        if (s == to_string(c)) return c;
    }
    throw Error(ErrorKind::Validation, "unknown load class '" + s + "'");
}

Mission mission_from_string(const std::string& s) {
    for (auto m : {Mission::Cruising, Mission::DynamicPositioning, Mission::NavalWarfare,
                   Mission::AtPort}) {
        if (s == to_string(m)) return m;
    }
    throw Error(ErrorKind::Validation, "unknown mission '" + s + "'");
}

double LoadUnit::reactive_kvar() const {
    if (!is_hotel() || power_factor <= 0 || power_factor >= 1) return 0.0;
    return setpoint_kw * std::tan(std::acos(power_factor));
}

double dc_draw_kw(const LoadUnit& load, double converter_efficiency) {
    return load.behind_converter ? load.setpoint_kw / converter_efficiency : load.setpoint_kw;
}

MissionProfile mission_profile(Mission mission) {
    using P = Priority;
    MissionProfile m;
    m.mission = mission;
    P propulsion = P::HP;
    P thrusters = P::MP;
    P hotel = P::MP;
    P misc = P::LP;
    switch (mission) {
        case Mission::Cruising: break;
        case Mission::DynamicPositioning: thrusters = P::HP; break;
        case Mission::NavalWarfare:
            thrusters = P::LP;
            hotel = P::LP;
            misc = P::HP;
            break;
        case Mission::AtPort: misc = P::MP; break;
    }
    m.priority = {{LoadClass::Cruise, propulsion}, {LoadClass::DpThruster, thrusters},
                  {LoadClass::HotelHigh, hotel},   {LoadClass::HotelLow, hotel},
                  {LoadClass::Pulsed, misc},       {LoadClass::Radar, misc}};
    return m;
}

// =============================================================================
// Operations
// =============================================================================

double cruise_load(double omega_frac, double rated_kw) {
    if (omega_frac < 0 || omega_frac > 1.1) {
        throw Error(ErrorKind::Domain, "cruise_load: speed fraction outside [0, 1.1]");
    }
    return rated_kw * omega_frac * omega_frac * omega_frac;
}

ThrusterForces thruster_forces(const ThrusterParams& params, double omega_p) {
    if (omega_p < 0) throw Error(ErrorKind::Domain, "thruster speed must be non-negative");
    const double w2 = omega_p * omega_p;
    const double d4 = std::pow(params.d_p, 4);
    return {params.c_t * params.rho * d4 * w2, params.c_tau * params.rho * d4 * params.d_p * w2};
}

DpLoad dp_load(const ThrusterParams& params, double omega_p) {
    if (omega_p < 0) throw Error(ErrorKind::Domain, "thruster speed must be non-negative");
    const double w = params.c_tau * params.rho * std::pow(params.d_p, 5) * omega_p * omega_p * omega_p;
    DpLoad out{w / 1e3, false};
    if (out.kw > params.rated_power_kw) {
        out.kw = params.rated_power_kw;
        out.saturated = true;
    }
    return out;
}

double dp_speed_for_power(const ThrusterParams& params, double p_kw) {
    if (p_kw < 0) throw Error(ErrorKind::Domain, "thruster power must be non-negative");
    return std::cbrt(p_kw * 1e3 / (params.c_tau * params.rho * std::pow(params.d_p, 5)));
}

double pulsed_load(const std::vector<PulseSegment>& profile, double t1, double t2, double period) {
    if (!(t1 < t2 && t2 <= period)) throw Error(ErrorKind::Domain, "pulsed_load: need t1 < t2 <= T");
    double energy = 0.0;
    for (const auto& s : profile) {
        const double a = std::max(s.t0, t1);
        const double b = std::min(s.t1, t2);
        if (b > a) energy += s.p_kw * (b - a);
    }
    return energy / period;
}

double pulse_train(double t, double amplitude_kw, double width_s, double period_s) {
    if (period_s <= 0) return amplitude_kw;
    const double phase = std::fmod(t, period_s);
    return phase < width_s ? amplitude_kw : 0.0;
}

std::map<std::string, double> mission_preset(Mission mission, Intensity intensity,
                                              const std::vector<LoadUnit>& roster) {
    const bool high = intensity == Intensity::High;
    const bool dp = mission == Mission::DynamicPositioning;
    const bool port = mission == Mission::AtPort;
    const double hotel_high_kva = 1000.0;
    const double hotel_low_kva = 270.0;

    double hh_rated = 0.0;
    double hl_rated = 0.0;
    for (const auto& l : roster) {
        if (l.cls == LoadClass::HotelHigh) hh_rated += l.rated;
        if (l.cls == LoadClass::HotelLow) hl_rated += l.rated;
    }

    std::map<std::string, double> out;
    for (const auto& l : roster) {
        double p = 0.0;
        switch (l.cls) {
            case LoadClass::Cruise:
                p = (dp || port) ? 0.0 : (high ? 2500.0 : 1000.0);
                break;
            case LoadClass::DpThruster:
                p = dp ? (high ? 800.0 : 300.0) : 0.0;
                break;
            case LoadClass::HotelHigh:
                p = hh_rated > 0 ? hotel_high_kva * l.rated / hh_rated * l.power_factor : 0.0;
                break;
            case LoadClass::HotelLow:
                p = hl_rated > 0 ? hotel_low_kva * l.rated / hl_rated * l.power_factor : 0.0;
                break;
            case LoadClass::Pulsed:
            case LoadClass::Radar:
                p = port ? 0.0 : l.rated;
                break;
        }
        out[l.id] = std::min(p, l.rated_kw());
    }
    return out;
}

ShedPlan shed_plan(const MissionProfile& mission, double deficit_kw,
                   const std::vector<LoadUnit>& loads) {
    ShedPlan plan;
    if (deficit_kw <= 0) return plan;
    double remaining = deficit_kw;
    for (Priority tier : {Priority::LP, Priority::MP}) {
        std::vector<const LoadUnit*> candidates;
        for (const auto& l : loads) {
            auto it = mission.priority.find(l.cls);
            if (it != mission.priority.end() && it->second == tier && l.setpoint_kw > 0) {
                candidates.push_back(&l);
            }
        }
        std::stable_sort(candidates.begin(), candidates.end(),
                         [](const LoadUnit* a, const LoadUnit* b) { return a->setpoint_kw > b->setpoint_kw; });
        for (const auto* l : candidates) {
            if (remaining <= 0) break;
            const double shed = std::min(l->setpoint_kw, remaining);
            plan.entries.push_back({l->id, shed});
            plan.total_shed += shed;
            remaining -= shed;
        }
    }
    if (remaining > 1e-9) {
        plan.insufficient = true;
        plan.residual_kw = remaining;
        std::ostringstream ss;
        ss.precision(1);
        ss << std::fixed << "insufficient shed: " << remaining
           << " kW still uncovered after shedding all LP/MP loads; reduce vessel speed";
        plan.advisory = ss.str();
    }
    return plan;
}

}  // namespace psv::loads
