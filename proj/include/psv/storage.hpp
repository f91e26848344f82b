#pragma once

// PV array, battery pack and the bidirectional ESS converter logic.

#include <string>
#include <vector>

namespace psv::storage {

struct PvArray {
    int modules_total = 360;
    int n_s = 6;
    int n_p = 60;
    double p_module_stc_w = 305.0;
    double v_mp = 54.7;
    double i_mp = 5.58;
    double area_per_module = 1.63;

    double rating_kw() const { return p_module_stc_w * modules_total / 1e3; }
    void validate() const;
};

struct BatteryPack {
    double v_nom = 650.0;
    double capacity_ah = 1200.0;
    int modules_series = 14;
    int modules_parallel = 20;
    double soc = 1.0;
    double soc_min = 0.20;
    double soc_max = 1.00;
    double charge_rate_max_a = 600.0;   ///< C/2
    double charge_efficiency = 0.95;
    bool limit_event = false;           ///< last soc_step was clipped

    double energy_kwh() const { return v_nom * capacity_ah / 1e3; }
    double stored_kwh() const { return soc * energy_kwh(); }
};

enum class EssMode { Discharge, PvCharge, FastCharge, Idle };

const char* to_string(EssMode mode);

struct EssUnit {
    std::string id = "ESS";
    std::string bus = "B14";
    PvArray pv;
    BatteryPack battery;
    double p_rating_kw = 820.0;
    double f_p = 0.0;                 ///< kg fuel equivalent per kWh, 0 = derive
    EssMode mode = EssMode::Idle;
    double p_ess_kw = 0.0;            ///< positive supplies the ship
    bool unavailable = false;         ///< forced p_max = 0
    bool grid_charge_allowed = false; ///< fast charge from the DC bus
    bool charging_latched = false;
    double threshold_band = 0.25;     ///< discharge resumes above soc_min + band
    double horizon_s = 900.0;
};

/// 10% of installed DG capacity, rounded to 10 kW.
double ess_rating_for_fleet(double total_dg_kw);

double pv_power(const PvArray& pv, double irradiance_w_m2);

BatteryPack soc_step(const BatteryPack& pack, double p_batt_kw, double dt);

/// Full electrical state of the ESS for one step.
struct EssOperatingPoint {
    EssMode mode = EssMode::Idle;
    double p_ess_kw = 0.0;   ///< bus side, positive supplies the ship
    double p_batt_kw = 0.0;  ///< positive discharges the battery
    double p_pv_kw = 0.0;    ///< PV actually used
    double v_batt = 650.0;
    double v_bus = 1500.0;
    double i_ess = 0.0;
    double i_batt = 0.0;
    double i_pv_dc = 0.0;
    double i_dc = 0.0;       ///< internal node towards the bus converter, signed
    bool charging_latched = false;
};

/// Chooses the converter mode for a requested terminal power. Throws
/// Error(Mode) when discharge is requested below soc_min.
EssOperatingPoint charge_mode_select(const EssUnit& ess, double soc, double pv_kw,
                                     bool grid_allows_fast, double requested_p_ess_kw = 0.0,
                                     double v_bus = 1500.0);

struct DispatchLimits {
    double p_min_kw = 0.0;
    double p_max_kw = 0.0;
};

DispatchLimits ess_dispatch_limits(const EssUnit& ess);

/// Names of the violated sign predicates for the discharge set.
std::vector<std::string> discharge_predicate_failures(const EssOperatingPoint& op, double tol = 1e-9);
/// Names of the violated sign predicates for the grid-assisted charge set.
std::vector<std::string> charge_predicate_failures(const EssOperatingPoint& op, double tol = 1e-9);
/// Names of the violated predicates for PV-only charging.
std::vector<std::string> pv_charge_predicate_failures(const EssOperatingPoint& op, double tol = 1e-9);

}  // namespace psv::storage
