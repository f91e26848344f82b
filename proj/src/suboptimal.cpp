#include "psv/dispatch.hpp"

#include "psv/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace psv::dispatch {

const char* to_string(PointClass c) { return c == PointClass::Global ? "global" : "local"; }

namespace {

struct Fleet {
    std::vector<std::size_t> running;  ///< schedule indices with positive output
    const GenUnit* unit = nullptr;
    double demand_kw = 0.0;
};

Fleet running_fleet(const OpfProblem& problem, const Schedule& schedule) {
    Fleet f;
    for (std::size_t i = 0; i < schedule.gens.size(); ++i) {
        if (schedule.gens[i].available && schedule.gens[i].p_kw > 1e-6) f.running.push_back(i);
        f.demand_kw += schedule.gens[i].p_kw;
    }
    f.demand_kw += schedule.p_ess_kw;
    if (!f.running.empty()) {
        const auto& id = schedule.gens[f.running.front()].id;
        for (const auto& g : problem.gens) {
            if (g.id == id) f.unit = &g;
        }
    }
    return f;
}

}  // namespace

SuboptimalScan enumerate_suboptimal(const OpfProblem& problem, const Schedule& schedule,
                                    const ScanGrid& grid) {
    if (!(grid.gen_step_kw > 0 && grid.ess_step_kw > 0 && grid.omega_step_rpm > 0)) {
        throw Error(ErrorKind::Domain, "scan resolution must be positive");
    }
    SuboptimalScan scan;
    const Fleet fleet = running_fleet(problem, schedule);
    if (fleet.running.empty() || !fleet.unit) return scan;
    const auto& map = *fleet.unit->sfoc;
    const double n = static_cast<double>(fleet.running.size());
    SfocFunction sfoc = grid.sfoc;
    if (!sfoc) sfoc = [&map](double p, double w) { return map.sfoc(p, w); };
    const double w_rated = map.options().omega_max_rpm;

    double e_lo = 0.0;
    double e_hi = 0.0;
    for (const auto& c : problem.controls) {
        if (c.kind == Control::Kind::Ess) {
            e_lo = c.lo;
            e_hi = c.hi;
        }
    }
    e_lo = grid.ess_lo_kw.value_or(e_lo);
    e_hi = grid.ess_hi_kw.value_or(e_hi);
    if (e_hi < e_lo) std::swap(e_lo, e_hi);

    const double p_cap = fleet.unit->rated_kw * problem.options.overload_factor;
    const double w_lo = map.options().omega_min_rpm;
    const double w_hi = map.options().omega_max_rpm;
    const int ne = static_cast<int>(std::floor((e_hi - e_lo) / grid.ess_step_kw + 1e-9)) + 1;
    const int nw = static_cast<int>(std::floor((w_hi - w_lo) / grid.omega_step_rpm + 1e-9)) + 1;
    const double nan = std::numeric_limits<double>::quiet_NaN();

    auto e_at = [&](int i) { return std::min(e_hi, e_lo + i * grid.ess_step_kw); };
    auto w_at = [&](int j) { return std::min(w_hi, w_lo + j * grid.omega_step_rpm); };
    std::vector<double> value(static_cast<std::size_t>(ne) * static_cast<std::size_t>(nw), nan);
    auto at = [&](int i, int j) -> double& { return value[static_cast<std::size_t>(i) * static_cast<std::size_t>(nw) + static_cast<std::size_t>(j)]; };
    double vmin = std::numeric_limits<double>::infinity();
    double vmax = -vmin;
    for (int i = 0; i < ne; ++i) {
        const double p = (fleet.demand_kw - e_at(i)) / n;
        if (!(p > 0) || p > p_cap) continue;
        for (int j = 0; j < nw; ++j) {
            const double v = sfoc(p, w_at(j));
            at(i, j) = v;
            vmin = std::min(vmin, v);
            vmax = std::max(vmax, v);
        }
    }

    SuboptimalPoint global;
    for (auto k : fleet.running) global.p_gen.push_back(schedule.gens[k].p_kw);
    global.p_ess = schedule.p_ess_kw;
    {
        double fuel = 0.0;
        double power = 0.0;
        double w_sum = 0.0;
        for (auto k : fleet.running) {
            const auto& g = schedule.gens[k];
            fuel += sfoc(g.p_kw, g.omega_ref_rpm) * g.p_kw;
            power += g.p_kw;
            w_sum += g.omega_ref_rpm;
        }
        global.sfoc = fuel / power;
        global.omega = w_sum / n / w_rated;
    }
    global.classification = PointClass::Global;
    global.delta = std::max(grid.gen_step_kw, grid.ess_step_kw);
    global.objective = schedule.objective;
    scan.coarse = grid.ess_step_kw > 50.0 || grid.omega_step_rpm > 50.0 || grid.gen_step_kw > 100.0;

    const double flat_tol = 1e-9 * std::max(1.0, std::abs(vmin));
    if (!(vmax - vmin > flat_tol)) {
        scan.all_equivalent = true;
        scan.points.push_back(global);
        return scan;
    }

    std::vector<SuboptimalPoint> locals;
    for (int i = 0; i < ne; ++i) {
        for (int j = 0; j < nw; ++j) {
            const double v = at(i, j);
            if (std::isnan(v)) continue;
            bool minimum = true;
            bool strict = false;
            for (int di = -1; di <= 1 && minimum; ++di) {
                for (int dj = -1; dj <= 1; ++dj) {
                    if (di == 0 && dj == 0) continue;
                    const int a = i + di;
                    const int b = j + dj;
                    if (a < 0 || a >= ne || b < 0 || b >= nw) continue;
                    const double u = at(a, b);
                    if (std::isnan(u)) continue;
                    if (u < v - flat_tol) {
                        minimum = false;
                        break;
                    }
                    if (u > v + flat_tol) strict = true;
                }
            }
            if (!minimum || !strict) continue;
            SuboptimalPoint pt;
            const double e = e_at(i);
            pt.p_gen.assign(fleet.running.size(), (fleet.demand_kw - e) / n);
            pt.p_ess = e;
            pt.sfoc = v;
            pt.omega = w_at(j) / w_rated;
            pt.classification = PointClass::Local;
            pt.delta = global.delta;
            pt.objective = 0.0;
            for (double p : pt.p_gen) pt.objective += v * p / 1000.0;
            pt.objective += problem.f_p * std::max(0.0, e);
            locals.push_back(pt);
        }
    }

    // Plateau cells and points next to the global one collapse into one entry.
    const double e_tol = grid.ess_step_kw * 1.0001;
    const double w_tol = grid.omega_step_rpm * 1.0001 / w_rated;
    std::vector<SuboptimalPoint> kept;
    for (const auto& pt : locals) {
        if (std::abs(pt.p_ess - global.p_ess) <= e_tol && std::abs(pt.omega - global.omega) <= w_tol) continue;
        bool dup = false;
        for (const auto& k : kept) {
            dup = dup || (std::abs(pt.p_ess - k.p_ess) <= e_tol && std::abs(pt.omega - k.omega) <= w_tol);
        }
        if (!dup) kept.push_back(pt);
    }
    scan.points.push_back(global);
    scan.points.insert(scan.points.end(), kept.begin(), kept.end());
    std::stable_sort(scan.points.begin(), scan.points.end(), [](const SuboptimalPoint& a, const SuboptimalPoint& b) {
        if (a.sfoc != b.sfoc) return a.sfoc < b.sfoc;
        return a.classification == PointClass::Global && b.classification != PointClass::Global;
    });
    return scan;
}

Trajectory treat_suboptimal(const std::vector<SuboptimalPoint>& points,
                            const storage::EssUnit& ess_state, const RampRequest& request) {
    if (request.running_units < 1) throw Error(ErrorKind::Domain, "ramp needs at least one running unit");
    if (!(request.dt > 0)) throw Error(ErrorKind::Domain, "ramp sample interval must be positive");
    Trajectory out;
    const double e0 = request.from_p_ess;
    const double e1 = request.to_p_ess;
    double fallback_demand = e0;
    if (!points.empty()) {
        fallback_demand = points.front().p_ess;
        for (double p : points.front().p_gen) fallback_demand += p;
    }
    auto demand = [&](double t) { return request.demand ? request.demand(t) : fallback_demand; };
    const double n = request.running_units;

    auto sample = [&](double t, double e) {
        TrajectoryPoint tp;
        tp.t = t;
        tp.p_ess = e;
        tp.demand_kw = demand(t);
        tp.p_gen = (tp.demand_kw - e) / n;
        if (tp.p_gen > 0) {
            if (request.sfoc) {
                tp.omega_rpm = request.sfoc->optimized_speed(tp.p_gen);
                tp.sfoc = request.sfoc->sfoc(tp.p_gen, tp.omega_rpm);
            } else {
                tp.omega_rpm = powertrain::optimized_speed(tp.p_gen);
            }
        }
        return tp;
    };

    const double lo = std::min(e0, e1);
    const double hi = std::max(e0, e1);
    for (const auto& p : points) {
        if (p.p_ess < lo - 1e-9 || p.p_ess > hi + 1e-9) continue;
        if (!out.via || p.sfoc < out.via->sfoc) out.via = p;
    }

    if (std::abs(e1 - e0) <= 1e-9 || !std::isfinite(request.ramp_limit_kw_s) || request.ramp_limit_kw_s <= 0) {
        out.points.push_back(sample(0.0, e1));
        return out;
    }

    const auto& b = ess_state.battery;
    double stored = b.stored_kwh();
    const double floor_kwh = b.soc_min * b.energy_kwh();
    const double step = request.ramp_limit_kw_s * request.dt;
    const double dir = e1 > e0 ? 1.0 : -1.0;
    double e = e0;
    double t = 0.0;
    double dwell_left = out.via ? request.dwell_s : 0.0;
    bool dwelled = false;
    out.points.push_back(sample(t, e));
    const int max_steps = 1000000;
    for (int k = 0; k < max_steps && std::abs(e - e1) > 1e-9; ++k) {
        double next = e + dir * std::min(step, std::abs(e1 - e));
        if (out.via && !dwelled && dwell_left > 0 && (next - out.via->p_ess) * dir >= 0 &&
            (e - out.via->p_ess) * dir <= 0) {
            next = out.via->p_ess;
        }
        if (out.via && !dwelled && std::abs(e - out.via->p_ess) <= 1e-9 && dwell_left > 0) {
            next = e;
            dwell_left -= request.dt;
            if (dwell_left <= 1e-12) dwelled = true;
        }
        stored -= 0.5 * (std::max(0.0, e) + std::max(0.0, next)) * request.dt / 3600.0;
        t += request.dt;
        if (stored < floor_kwh) {
            out.truncated = true;
            out.event = "soc-limit: ramp truncated";
            out.points.push_back(sample(t, e1));
            return out;
        }
        e = next;
        out.points.push_back(sample(t, e));
    }
    return out;
}

}  // namespace psv::dispatch
