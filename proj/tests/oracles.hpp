#pragma once

// Reference computations that share no code path with the units under test.

#include "psv/dispatch.hpp"
#include "psv/powertrain.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace psv::oracle {

/// Small-signal speed response of a governed engine to a load step, from the
/// linearized plant (1/w0)/(J s + 2 k_loss) closed through the PI governor,
/// the fuel lag and the dead time. RK4 on a fine grid with the delayed
/// command interpolated from its history. Returns the speed deviation [rpm]
/// at multiples of `sample_dt`.
inline std::vector<double> governed_speed_step(const powertrain::DieselEngineParams& e,
                                               const powertrain::GovernorParams& g, double omega0_rpm,
                                               double step_kw, double t_end, double sample_dt,
                                               double h = 1e-5) {
    const double w0 = omega0_rpm * 2.0 * M_PI / 60.0;
    const double rpm_per_rad = 60.0 / (2.0 * M_PI);
    const std::size_t delay = static_cast<std::size_t>(std::llround(e.t_d / h));
    const std::size_t n = static_cast<std::size_t>(std::llround(t_end / h));
    const std::size_t every = static_cast<std::size_t>(std::llround(sample_dt / h));

    // x = (dw [rad/s], dp_mech [kW], integral)
    struct X { double dw, dp, i; };
    std::vector<double> du_hist(n + 2, 0.0);
    auto du_of = [&](const X& x) { return g.kp * (-x.dw * rpm_per_rad / g.omega_base_rpm) + x.i; };
    auto delayed = [&](double t) {
        const double s = t / h - static_cast<double>(delay);
        if (s <= 0) return 0.0;
        const auto k = static_cast<std::size_t>(s);
        const double f = s - static_cast<double>(k);
        return du_hist[k] * (1 - f) + du_hist[std::min(k + 1, n + 1)] * f;
    };
    auto deriv = [&](double t, const X& x) {
        X d{};
        d.dw = ((x.dp - step_kw) * 1e3 / w0 - 2.0 * e.k_loss * x.dw) / e.J;
        d.dp = e.tau_pm > 0 ? (e.k_pm * e.p_rated_kw * delayed(t) - x.dp) / e.tau_pm : 0.0;
        d.i = g.ki * (-x.dw * rpm_per_rad / g.omega_base_rpm);
        return d;
    };
    auto axpy = [](const X& a, double s, const X& b) { return X{a.dw + s * b.dw, a.dp + s * b.dp, a.i + s * b.i}; };

    std::vector<double> out;
    X x{};
    for (std::size_t k = 0; k < n; ++k) {
        const double t = static_cast<double>(k) * h;
        du_hist[k] = du_of(x);
        const X k1 = deriv(t, x);
        const X k2 = deriv(t + h / 2, axpy(x, h / 2, k1));
        const X k3 = deriv(t + h / 2, axpy(x, h / 2, k2));
        const X k4 = deriv(t + h, axpy(x, h, k3));
        x.dw += h / 6 * (k1.dw + 2 * k2.dw + 2 * k3.dw + k4.dw);
        x.dp += h / 6 * (k1.dp + 2 * k2.dp + 2 * k3.dp + k4.dp);
        x.i += h / 6 * (k1.i + 2 * k2.i + 2 * k3.i + k4.i);
        du_hist[k + 1] = du_of(x);
        if ((k + 1) % every == 0) out.push_back(x.dw * rpm_per_rad);
    }
    return out;
}

/// Fuel of one unit at its optimized speed [kg/h].
inline double unit_fuel(const powertrain::SfocMap& map, double p_kw) {
    if (p_kw <= 0) return 0.0;
    return map.sfoc(p_kw, map.optimized_speed(p_kw)) * p_kw / 1000.0;
}

struct GridSearchResult {
    std::vector<double> p;   ///< per free control, last one is the ESS when present
    double objective = std::numeric_limits<double>::infinity();
};

/// Identical units that must share load equally.
struct UnitGroup {
    int count = 1;
    int rated_kw = 2048;
};

/// Copper-plate dispatch by exhaustive search on a 1 kW lattice of per-unit
/// power: groups of identical units (each unit within [0, rated]), an
/// optional ESS in [0, ess_max] priced at f_p, total equal to `demand` and
/// generator headroom of at least `reserve`. The last group closes the
/// balance, so the lattice covers all but one control.
inline GridSearchResult copper_plate_search(const powertrain::SfocMap& map, const std::vector<UnitGroup>& groups,
                                            int ess_max, double f_p, double demand, double reserve) {
    GridSearchResult best;
    const std::size_t ng = groups.size();
    int top = 0;
    double gen_cap = -reserve;
    for (const auto& g : groups) {
        top = std::max(top, g.rated_kw);
        gen_cap += g.count * g.rated_kw;
    }
    std::vector<double> fuel(static_cast<std::size_t>(top) + 1);
    for (int p = 0; p <= top; ++p) fuel[static_cast<std::size_t>(p)] = unit_fuel(map, p);

    std::vector<double> p(ng, 0.0);
    auto recurse = [&](auto&& self, std::size_t i, int ess, double sum, double f) -> void {
        const auto& g = groups[i];
        if (i + 1 == ng) {
            const double last = (demand - ess - sum) / g.count;
            if (last < -1e-9 || last > g.rated_kw + 1e-9 || sum + g.count * last > gen_cap + 1e-9) return;
            const double total = f + g.count * unit_fuel(map, last);
            if (total < best.objective) {
                best.objective = total;
                best.p.assign(p.begin(), p.end());
                best.p[i] = last;
                if (ess_max > 0) best.p.push_back(ess);
            }
            return;
        }
        for (int v = 0; v <= g.rated_kw && sum + g.count * v <= demand - ess; ++v) {
            p[i] = v;
            self(self, i + 1, ess, sum + g.count * v, f + g.count * fuel[static_cast<std::size_t>(v)]);
        }
    };
    for (int ess = 0; ess <= std::max(ess_max, 0) && ess <= demand; ++ess) {
        recurse(recurse, 0, ess, 0.0, f_p * ess);
    }
    return best;
}

}  // namespace psv::oracle
