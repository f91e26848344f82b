#include "psv/storage.hpp"

#include "psv/errors.hpp"

#include <algorithm>
#include <cmath>

namespace psv::storage {

const char* to_string(EssMode mode) {
    switch (mode) {
        case EssMode::Discharge: return "discharge";
        case EssMode::PvCharge: return "pv-charge";
        case EssMode::FastCharge: return "fast-charge";
        case EssMode::Idle: return "idle";
    }
    return "idle";
}

void PvArray::validate() const {
    if (n_s * n_p != modules_total) {
        throw Error(ErrorKind::Validation, "PV array series x parallel must equal module count");
    }
}

double ess_rating_for_fleet(double total_dg_kw) {
    return std::round(0.1 * total_dg_kw / 10.0) * 10.0;
}

double pv_power(const PvArray& pv, double irradiance_w_m2) {
    if (irradiance_w_m2 < 0) throw Error(ErrorKind::Domain, "irradiance must be non-negative");
    return std::min(pv.rating_kw() * irradiance_w_m2 / 1000.0, pv.rating_kw());
}

BatteryPack soc_step(const BatteryPack& pack, double p_batt_kw, double dt) {
    if (!(dt > 0)) throw Error(ErrorKind::Domain, "soc_step: dt must be positive");
    BatteryPack next = pack;
    const double e = pack.energy_kwh();
    const double hours = dt / 3600.0;
    double soc = pack.soc;
    if (p_batt_kw > 0) {
        soc -= p_batt_kw * hours / e;
    } else if (p_batt_kw < 0) {
        soc += pack.charge_efficiency * (-p_batt_kw) * hours / e;
    }
    next.limit_event = soc < 0.0 || soc > 1.0;
    next.soc = std::clamp(soc, 0.0, 1.0);
    return next;
}

namespace {

EssOperatingPoint finish(EssOperatingPoint op) {
    op.i_ess = op.p_ess_kw * 1e3 / op.v_bus;
    op.i_batt = op.p_batt_kw * 1e3 / op.v_batt;
    op.i_pv_dc = op.p_pv_kw * 1e3 / op.v_batt;
    op.i_dc = op.i_batt + op.i_pv_dc;
    return op;
}

}  // namespace

EssOperatingPoint charge_mode_select(const EssUnit& ess, double soc, double pv_kw,
                                     bool grid_allows_fast, double requested_p_ess_kw,
                                     double v_bus) {
    if (soc < 0 || soc > 1) throw Error(ErrorKind::Domain, "soc outside [0, 1]");
    const auto& b = ess.battery;
    EssOperatingPoint op;
    op.v_batt = b.v_nom;
    op.v_bus = v_bus;
    pv_kw = std::max(0.0, pv_kw);

    bool latched = ess.charging_latched;
    if (soc < b.soc_min) latched = true;
    if (latched && soc >= b.soc_min + ess.threshold_band) latched = false;
    op.charging_latched = latched;

    const double tol = 1e-9;
    if (requested_p_ess_kw > tol && (soc < b.soc_min || latched)) {
        throw Error(ErrorKind::Mode, "discharge requested while the battery needs charging");
    }
    const bool can_charge = soc < b.soc_max;
    const double fast_kw = b.charge_rate_max_a * b.v_nom / 1e3;

    if (latched) {
        if (grid_allows_fast && can_charge && fast_kw > pv_kw) {
            op.mode = EssMode::FastCharge;
            op.p_pv_kw = pv_kw;
            op.p_batt_kw = -fast_kw;
            op.p_ess_kw = op.p_batt_kw + op.p_pv_kw;
        } else if (can_charge && pv_kw > 0) {
            op.mode = EssMode::PvCharge;
            op.p_pv_kw = std::min(pv_kw, fast_kw);
            op.p_batt_kw = -op.p_pv_kw;
            op.p_ess_kw = 0.0;
        } else {
            op.mode = EssMode::Idle;
        }
        return finish(op);
    }

    const double request = requested_p_ess_kw;
    if (request < -tol) {
        // Grid-assisted charging requested by dispatch.
        op.mode = EssMode::FastCharge;
        op.p_pv_kw = pv_kw;
        op.p_ess_kw = request;
        op.p_batt_kw = request - pv_kw;
        if (!can_charge) {
            op.mode = EssMode::Idle;
            op.p_pv_kw = 0.0;
            op.p_ess_kw = 0.0;
            op.p_batt_kw = 0.0;
        }
        return finish(op);
    }
    if (pv_kw > request + tol && can_charge) {
        op.mode = EssMode::PvCharge;
        op.p_pv_kw = pv_kw;
        op.p_ess_kw = std::max(0.0, request);
        op.p_batt_kw = op.p_ess_kw - pv_kw;
        return finish(op);
    }
    if (request > tol) {
        op.mode = EssMode::Discharge;
        op.p_pv_kw = std::min(pv_kw, request);
        op.p_ess_kw = request;
        op.p_batt_kw = request - op.p_pv_kw;
        return finish(op);
    }
    op.mode = EssMode::Idle;
    return finish(op);
}

DispatchLimits ess_dispatch_limits(const EssUnit& ess) {
    DispatchLimits lim;
    const auto& b = ess.battery;
    const double hours = ess.horizon_s / 3600.0;
    if (!ess.unavailable && !ess.charging_latched && b.soc > b.soc_min) {
        lim.p_max_kw = std::min(ess.p_rating_kw, (b.soc - b.soc_min) * b.energy_kwh() / hours);
    }
    if (ess.grid_charge_allowed && !ess.unavailable && b.soc < b.soc_max) {
        const double acceptance =
            std::min({ess.p_rating_kw, b.charge_rate_max_a * b.v_nom / 1e3,
                      (b.soc_max - b.soc) * b.energy_kwh() / (b.charge_efficiency * hours)});
        lim.p_min_kw = -acceptance;
    }
    return lim;
}

std::vector<std::string> discharge_predicate_failures(const EssOperatingPoint& op, double tol) {
    std::vector<std::string> f;
    if (!(op.p_pv_kw >= -tol)) f.push_back("P_PV >= 0");
    if (!(op.p_batt_kw >= -tol)) f.push_back("P_batt >= 0");
    if (!(op.p_ess_kw >= -tol)) f.push_back("P_ESS >= 0");
    if (!(op.i_pv_dc >= -tol)) f.push_back("i_PV_dc >= 0");
    if (!(op.i_batt >= -tol)) f.push_back("i_batt >= 0");
    if (!(std::abs(op.i_dc - (op.i_batt + op.i_pv_dc)) <= 1e-6 && op.i_dc >= -tol)) {
        f.push_back("i_dc = i_batt + i_PV_dc >= 0");
    }
    if (!(op.i_ess >= -tol)) f.push_back("i_ESS >= 0");
    if (!(std::abs(op.p_ess_kw - (op.p_batt_kw + op.p_pv_kw)) <= 1e-6)) f.push_back("P_ESS = P_batt + P_PV");
    return f;
}

std::vector<std::string> charge_predicate_failures(const EssOperatingPoint& op, double tol) {
    std::vector<std::string> f;
    if (!(op.p_pv_kw >= -tol)) f.push_back("P_PV >= 0");
    if (!(op.p_batt_kw < 0)) f.push_back("P_batt < 0");
    if (!(op.p_ess_kw <= tol)) f.push_back("P_ESS <= 0");
    if (!(op.i_pv_dc >= -tol)) f.push_back("i_PV_dc >= 0");
    if (!(op.i_batt < 0)) f.push_back("i_batt < 0");
    // Magnitude form: |i_dc| = |i_batt| - i_PV_dc with the node current negative.
    if (!(op.i_dc < 0 && std::abs(std::abs(op.i_dc) - (std::abs(op.i_batt) - op.i_pv_dc)) <= 1e-6)) {
        f.push_back("i_dc = i_batt - i_PV_dc < 0");
    }
    if (!(op.i_ess <= tol)) f.push_back("i_ESS <= 0");
    if (!(std::abs(std::abs(op.p_batt_kw) - (std::abs(op.p_ess_kw) + op.p_pv_kw)) <= 1e-6)) {
        f.push_back("P_batt = P_ESS + P_PV");
    }
    return f;
}

std::vector<std::string> pv_charge_predicate_failures(const EssOperatingPoint& op, double tol) {
    std::vector<std::string> f;
    if (!(op.p_pv_kw > 0)) f.push_back("P_PV > 0");
    if (!(op.p_batt_kw < 0)) f.push_back("P_batt < 0");
    if (!(op.p_ess_kw >= -tol)) f.push_back("P_ESS >= 0");
    if (!(std::abs(op.p_ess_kw - (op.p_batt_kw + op.p_pv_kw)) <= 1e-6)) f.push_back("P_ESS = P_batt + P_PV");
    return f;
}

}  // namespace psv::storage
