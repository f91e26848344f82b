#pragma once

// Small dispatch instances shared by the unit tests and the acceptance run.

#include "oracles.hpp"
#include "support.hpp"

#include "psv/dispatch.hpp"

#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace psv::test {

/// Network, fleet, ESS and loads for a direct dispatch call.
struct Plant {
    grid::NetworkModel network;
    std::vector<dispatch::GenUnit> gens;
    std::optional<storage::EssUnit> ess;
    std::vector<loads::LoadUnit> loads;

    dispatch::OpfProblem problem(dispatch::Relaxation relaxation = dispatch::Relaxation::None,
                                 const dispatch::DispatchOptions& o = {}) const {
        return dispatch::build_opf(network, gens, ess, loads, loads::mission_profile(loads::Mission::Cruising),
                                   relaxation, o);
    }
    dispatch::Schedule solve(const dispatch::DispatchOptions& o = {}) const {
        return dispatch::solve_opf(network, gens, ess, loads, loads::mission_profile(loads::Mission::Cruising), o);
    }
};

inline grid::Bus generator_bus(const std::string& id, double p_max_kw) {
    grid::Bus b;
    b.id = id;
    b.kind = grid::BusKind::Generator;
    b.v_min = 0.90;
    b.v_max = 1.10;
    b.p_max_kw = p_max_kw;
    return b;
}

/// Cruise load of `kw` split into rated-size pieces on `bus`.
inline void add_cruise_load(Plant& plant, const std::string& bus, double kw) {
    for (int i = 0; kw > 1e-9; ++i) {
        loads::LoadUnit l;
        l.id = "MP" + bus + "_" + std::to_string(i + 1);
        l.bus = bus;
        l.cls = loads::LoadClass::Cruise;
        l.rated = 3000;
        l.setpoint_kw = std::min(kw, 3000.0);
        kw -= l.setpoint_kw;
        plant.loads.push_back(l);
    }
}

/// Every unit, the ESS and the load on one bus. No branches, no losses.
inline Plant copper_plate(int units, bool with_ess, double demand_kw) {
    Plant c;
    c.network.buses = {generator_bus("B1", 1e5)};
    for (int i = 0; i < units; ++i) c.gens.push_back(gen_unit("G" + std::to_string(i + 1), "B1"));
    if (with_ess) {
        storage::EssUnit e;
        e.bus = "B1";
        c.ess = e;
    }
    add_cruise_load(c, "B1", demand_kw);
    return c;
}

/// Oracle comparison case: two generator switchboards joined by a
/// near-lossless tie, units alternating between them as on the vessel.
struct OracleInstance {
    std::string label;
    int units = 4;
    bool ess = true;
    bool b2_down = false;      ///< units on B2 unavailable
    double demand_kw = 0.0;
    double b2_rated_kw = 2048; ///< a different rating keeps the B2 units apart
    double f_p = 0.0;          ///< 0 derives the price from the fleet
};

inline Plant build(const OracleInstance& in) {
    Plant c;
    c.network.buses = {generator_bus("B1", 4096), generator_bus("B2", 4096)};
    grid::Branch tie;
    tie.id = "L1";
    tie.from_bus = "B1";
    tie.to_bus = "B2";
    tie.r_mohm = 1e-3;
    tie.rating_kva = 1e5;
    c.network.branches = {tie};
    for (int i = 0; i < in.units; ++i) {
        auto g = gen_unit("G" + std::to_string(i + 1), i % 2 == 0 ? "B1" : "B2");
        if (g.bus == "B2") g.rated_kw = in.b2_rated_kw;
        g.available = !(in.b2_down && g.bus == "B2");
        c.gens.push_back(g);
    }
    if (in.ess) {
        storage::EssUnit e;
        e.bus = "B1";
        c.ess = e;
    }
    add_cruise_load(c, "B1", in.demand_kw / 2);
    add_cruise_load(c, "B2", in.demand_kw / 2);
    return c;
}

/// Twenty cases over the contingency-table load range, each at the derived
/// ESS price and at a cheap fixed one. Identical units in one island share
/// load equally, so each case has at most three free controls: one per
/// distinct unit rating plus the ESS.
inline std::vector<OracleInstance> oracle_instances() {
    const std::vector<OracleInstance> base = {
        {"4G+ESS 3800", 4, true, false, 3800},          {"4G+ESS 5320", 4, true, false, 5320},
        {"4G+ESS 7400", 4, true, false, 7400},          {"4G 5600", 4, false, false, 5600},
        {"2G+ESS 3400", 4, true, true, 3400},           {"2G+2G' +ESS 3800", 4, true, false, 3800, 1600},
        {"2G+2G' +ESS 5320", 4, true, false, 5320, 1600}, {"2G+2G' +ESS 6400", 4, true, false, 6400, 1600},
        {"2G+2G' 5600", 4, false, false, 5600, 1600},    {"2G+G' +ESS 4500", 3, true, false, 4500, 1600},
    };
    std::vector<OracleInstance> out;
    for (double f_p : {0.0, 0.17}) {
        for (auto in : base) {
            in.f_p = f_p;
            in.label += f_p > 0 ? " f_p=0.17" : " f_p=derived";
            out.push_back(in);
        }
    }
    return out;
}

struct OracleComparison {
    double solver = 0.0;
    double reference = 0.0;
    std::size_t free_controls = 0;
    double relative_gap() const { return (solver - reference) / reference; }
};

/// Solves an instance and the matching exhaustive search over the merged
/// controls. Available units group by rating.
inline OracleComparison compare_with_oracle(const OracleInstance& in) {
    const auto plant = build(in);
    dispatch::DispatchOptions o;
    o.f_p = in.f_p;
    const auto s = plant.solve(o);
    const auto p = plant.problem(dispatch::Relaxation::None, o);

    std::map<int, int> by_rating;
    for (const auto& g : plant.gens) {
        if (g.available) ++by_rating[static_cast<int>(g.rated_kw)];
    }
    std::vector<oracle::UnitGroup> groups;
    for (const auto& [rated, n] : by_rating) groups.push_back({n, rated});
    int ess_max = 0;
    for (const auto& c : p.controls) {
        if (c.kind == dispatch::Control::Kind::Ess) ess_max = static_cast<int>(std::floor(c.hi));
    }
    OracleComparison r;
    r.solver = s.mode == dispatch::ScheduleMode::Feasible ? s.fuel_kg_h + p.f_p * std::max(0.0, s.p_ess_kw)
                                                          : std::numeric_limits<double>::infinity();
    r.reference = oracle::copper_plate_search(*sfoc_map(), groups, ess_max, p.f_p, in.demand_kw,
                                              p.options.dg_reserve_kw)
                      .objective;
    r.free_controls = groups.size() + (ess_max > 0 ? 1 : 0);
    return r;
}

}  // namespace psv::test
