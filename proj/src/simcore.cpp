#include "psv/simcore.hpp"

#include "psv/errors.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

namespace psv::simcore {

namespace {

constexpr double kEps = 1e-9;
constexpr double kDcLinkRegulation = 0.02;  // [s]

std::string fmt(double v, int precision = 1) {
    std::ostringstream ss;
    ss.precision(precision);
    ss << std::fixed << v;
    return ss.str();
}

}  // namespace

const char* to_string(EventKind kind) {
    switch (kind) {
        case EventKind::LoadStep: return "load-step";
        case EventKind::BusIsolation: return "bus-isolation";
        case EventKind::EssUnavailable: return "ess-unavailable";
        case EventKind::GenTrip: return "gen-trip";
        case EventKind::MissionChange: return "mission-change";
        case EventKind::ShedApproval: return "shed-approval";
    }
    return "load-step";
}

EventKind event_kind_from_string(const std::string& s) {
    for (auto k : {EventKind::LoadStep, EventKind::BusIsolation, EventKind::EssUnavailable,
                   EventKind::GenTrip, EventKind::MissionChange, EventKind::ShedApproval}) {
        if (s == to_string(k)) return k;
    }
    throw Error(ErrorKind::Validation, "unknown event kind '" + s + "'");
}

double irradiance_at(const std::vector<IrradiancePoint>& timeline, double t) {
    if (timeline.empty()) return 0.0;
    if (t <= timeline.front().t) return timeline.front().w_m2;
    if (t >= timeline.back().t) return timeline.back().w_m2;
    for (std::size_t i = 1; i < timeline.size(); ++i) {
        if (t <= timeline[i].t) {
            const auto& a = timeline[i - 1];
            const auto& b = timeline[i];
            const double span = b.t - a.t;
            return span > 0 ? a.w_m2 + (b.w_m2 - a.w_m2) * (t - a.t) / span : b.w_m2;
        }
    }
    return timeline.back().w_m2;
}

namespace {

void check_event(const Scenario& s, const ContingencyEvent& e) {
    auto fail = [](const std::string& msg) { throw Error(ErrorKind::Validation, msg); };
    if (!(e.at >= 0)) fail("event time must be non-negative");
    switch (e.kind) {
        case EventKind::LoadStep:
            if (e.loads.empty()) fail("load-step needs at least one load");
            for (const auto& [id, kw] : e.loads) {
                const auto it = std::find_if(s.loads.begin(), s.loads.end(),
                                             [&](const loads::LoadUnit& l) { return l.id == id; });
                if (it == s.loads.end()) fail("load-step names unknown load '" + id + "'");
                if (kw < 0) fail("load-step setpoint for '" + id + "' must be non-negative");
            }
            if (e.ramp_s < 0) fail("load-step ramp must be non-negative");
            break;
        case EventKind::BusIsolation:
            if (!s.network.find_bus(e.target)) fail("bus-isolation names unknown bus '" + e.target + "'");
            break;
        case EventKind::EssUnavailable:
            if (!s.ess) fail("ess-unavailable without an ESS");
            break;
        case EventKind::GenTrip: {
            const auto it = std::find_if(s.fleet.begin(), s.fleet.end(),
                                         [&](const dispatch::GenUnit& g) { return g.id == e.target; });
            if (it == s.fleet.end()) fail("gen-trip names unknown unit '" + e.target + "'");
            break;
        }
        case EventKind::MissionChange: loads::mission_from_string(e.target); break;
        case EventKind::ShedApproval:
            for (const auto& [id, kw] : e.shed) {
                const auto it = std::find_if(s.loads.begin(), s.loads.end(),
                                             [&](const loads::LoadUnit& l) { return l.id == id; });
                if (it == s.loads.end()) fail("shed-approval names unknown load '" + id + "'");
                if (kw < 0) fail("shed amount for '" + id + "' must be non-negative");
            }
            break;
    }
}

}  // namespace

void Scenario::validate() const {
    auto fail = [](const std::string& msg) { throw Error(ErrorKind::Validation, msg); };
    network.validate();
    if (fleet.empty()) fail("fleet must contain at least one generator");
    std::set<std::string> ids;
    for (const auto& g : fleet) {
        if (!ids.insert(g.id).second) fail("duplicate unit id '" + g.id + "'");
        if (!network.find_bus(g.bus)) fail("unit '" + g.id + "' sits on unknown bus '" + g.bus + "'");
        if (!g.sfoc) fail("unit '" + g.id + "' has no SFOC map");
        if (!(g.rated_kw > 0)) fail("unit '" + g.id + "' rating must be positive");
        g.engine.validate();
    }
    if (ess) {
        if (!network.find_bus(ess->bus)) fail("ESS sits on unknown bus '" + ess->bus + "'");
        if (ess->battery.soc < 0 || ess->battery.soc > 1) fail("ESS soc must lie in [0, 1]");
        ess->pv.validate();
        if (!ids.insert(ess->id).second) fail("duplicate unit id '" + ess->id + "'");
    }
    std::set<std::string> load_ids;
    for (const auto& l : loads) {
        if (!load_ids.insert(l.id).second) fail("duplicate load id '" + l.id + "'");
        if (!network.find_bus(l.bus)) fail("load '" + l.id + "' sits on unknown bus '" + l.bus + "'");
        if (l.setpoint_kw < 0) fail("load '" + l.id + "' setpoint must be non-negative");
    }
    for (const auto& [id, p] : pulses) {
        if (!load_ids.count(id)) fail("pulse names unknown load '" + id + "'");
        if (p.period_s <= 0 || p.width_s < 0 || p.width_s > p.period_s) fail("pulse timing invalid for '" + id + "'");
    }
    for (std::size_t i = 1; i < irradiance.size(); ++i) {
        if (irradiance[i].t < irradiance[i - 1].t) fail("irradiance breakpoints must be time ordered");
    }
    for (const auto& p : irradiance) {
        if (p.w_m2 < 0) fail("irradiance must be non-negative");
    }
    if (!(sim.dt >= 1e-5 && sim.dt <= 0.1)) fail("sim.dt must lie in [1e-5, 0.1] s");
    if (!(sim.schedule_period >= sim.dt)) fail("sim.schedule_period must be at least dt");
    if (!(sim.duration >= 0)) fail("sim.duration must be non-negative");
    if (sim.partitions < 1 || sim.partitions > static_cast<int>(network.buses.size())) {
        fail("sim.partitions must lie in [1, bus count]");
    }
    if (sim.workers < 1) fail("sim.workers must be at least 1");
    if (sim.trace_decimation < 1) fail("sim.trace_decimation must be at least 1");
    if (sim.coupling_delay < 1) fail("sim.coupling_delay must be at least 1");
    if (!(sim.r_t_ohm > 0)) fail("sim.r_t_ohm must be positive");
    if (sim.realtime_factor < 0) fail("sim.realtime_factor must be non-negative");
    for (const auto& group : partition_hint) {
        for (const auto& b : group) {
            if (!network.find_bus(b)) fail("partition hint names unknown bus '" + b + "'");
        }
    }
    for (const auto& e : events) check_event(*this, e);
}

// =============================================================================
// Partitioning
// =============================================================================

std::vector<Partition> partition(const grid::NetworkModel& network, int k,
                                 const std::vector<std::vector<std::string>>& hint, double r_t_ohm,
                                 int delay) {
    const std::size_t n = network.buses.size();
    if (k < 1 || static_cast<std::size_t>(k) > n) {
        throw Error(ErrorKind::Domain, "partition count must lie in [1, bus count]");
    }
    std::vector<std::vector<std::size_t>> adj(n);
    for (const auto& br : network.branches) {
        if (!network.branch_live(br)) continue;
        const auto a = network.bus_index(br.from_bus);
        const auto b = network.bus_index(br.to_bus);
        adj[a].push_back(b);
        adj[b].push_back(a);
    }
    const auto islands = grid::find_islands(network);
    std::vector<int> part(n, -1);
    int count = 0;

    if (k > 1 && static_cast<int>(hint.size()) == k && static_cast<int>(islands.size()) == 1) {
        for (std::size_t g = 0; g < hint.size(); ++g) {
            for (const auto& id : hint[g]) part[network.bus_index(id)] = static_cast<int>(g);
        }
        // Unhinted buses join the partition of their first assigned neighbour.
        bool changed = true;
        while (changed) {
            changed = false;
            for (std::size_t i = 0; i < n; ++i) {
                if (part[i] >= 0) continue;
                for (auto j : adj[i]) {
                    if (part[j] >= 0) {
                        part[i] = part[j];
                        changed = true;
                        break;
                    }
                }
            }
        }
        for (std::size_t i = 0; i < n; ++i) {
            if (part[i] < 0) part[i] = 0;
        }
        count = k;
    } else {
        // Share k among islands by size, at least one each.
        std::vector<int> quota(islands.size(), 1);
        int spare = std::max(0, k - static_cast<int>(islands.size()));
        while (spare > 0) {
            std::size_t best = 0;
            double best_load = -1.0;
            for (std::size_t i = 0; i < islands.size(); ++i) {
                const double load = static_cast<double>(islands[i].buses.size()) / quota[i];
                if (static_cast<int>(islands[i].buses.size()) > quota[i] && load > best_load) {
                    best_load = load;
                    best = i;
                }
            }
            if (best_load < 0) break;
            ++quota[best];
            --spare;
        }
        for (std::size_t isl = 0; isl < islands.size(); ++isl) {
            const auto& members = islands[isl].buses;
            std::set<std::size_t> left(members.begin(), members.end());
            const int q = quota[isl];
            for (int r = 0; r < q; ++r) {
                const std::size_t target = (left.size() + static_cast<std::size_t>(q - r) - 1) /
                                           static_cast<std::size_t>(q - r);
                const int id = count++;
                std::set<std::size_t> region;
                const std::size_t seed = *left.begin();
                region.insert(seed);
                left.erase(seed);
                part[seed] = id;
                while (region.size() < target && !left.empty()) {
                    // Frontier bus with most links into the region, lowest index on ties.
                    std::size_t pick = n;
                    int best_links = 0;
                    for (auto b : left) {
                        int links = 0;
                        for (auto j : adj[b]) links += region.count(j) ? 1 : 0;
                        if (links > best_links) {
                            best_links = links;
                            pick = b;
                        }
                    }
                    if (pick == n) pick = *left.begin();
                    region.insert(pick);
                    left.erase(pick);
                    part[pick] = id;
                }
            }
        }
    }

    std::vector<Partition> out(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) out[static_cast<std::size_t>(i)].id = i;
    for (std::size_t i = 0; i < n; ++i) out[static_cast<std::size_t>(part[i])].buses.push_back(network.buses[i].id);
    for (const auto& br : network.branches) {
        if (!network.branch_live(br)) continue;
        const int pa = part[network.bus_index(br.from_bus)];
        const int pb = part[network.bus_index(br.to_bus)];
        if (pa == pb) continue;
        GyratorLink link{br.id, br.from_bus, br.to_bus, pa, pb, br.r_mohm / 1e3, r_t_ohm, delay};
        out[static_cast<std::size_t>(pa)].links.push_back(link);
        out[static_cast<std::size_t>(pb)].links.push_back(link);
    }
    out.erase(std::remove_if(out.begin(), out.end(), [](const Partition& p) { return p.buses.empty(); }),
              out.end());
    for (std::size_t i = 0; i < out.size(); ++i) out[i].id = static_cast<int>(i);
    return out;
}

// =============================================================================
// Energy audit
// =============================================================================

double EnergyAudit::output_kj() const {
    return load_kj + network_loss_kj + rotational_loss_kj + charge_loss_kj + coupling_kj +
           kinetic_delta_kj + battery_delta_kj + capacitor_delta_kj;
}

double EnergyAudit::relative_error() const {
    const double scale = std::max({std::abs(input_kj()), std::abs(load_kj), 1e-9});
    return std::abs(input_kj() - output_kj()) / scale;
}

// =============================================================================
// Stepping
// =============================================================================

namespace {

std::size_t load_index(const SimState& s, const std::string& id) {
    const auto& l = s.scenario.loads;
    for (std::size_t i = 0; i < l.size(); ++i) {
        if (l[i].id == id) return i;
    }
    throw Error(ErrorKind::Validation, "unknown load '" + id + "'");
}

double ramp_value(const LoadRuntime& rt, double t) {
    if (rt.ramp_s <= 0 || t >= rt.ramp_start + rt.ramp_s) return t >= rt.ramp_start ? rt.target_kw : rt.base_kw;
    if (t <= rt.ramp_start) return rt.base_kw;
    return rt.base_kw + (rt.target_kw - rt.base_kw) * (t - rt.ramp_start) / rt.ramp_s;
}

/// Consumption setpoint at t net of approved shed [kW, AC side for hotel].
double load_setpoint(const LoadRuntime& rt, double t) {
    return std::max(0.0, ramp_value(rt, t) - rt.shed_kw);
}

/// Bus draw of load i at t. `averaged` replaces pulse trains by their setpoint.
double load_draw(const SimState& s, std::size_t i, double t, bool averaged = false) {
    const auto& l = s.scenario.loads[i];
    double kw = load_setpoint(s.load_rt[i], t);
    const auto p = s.scenario.pulses.find(l.id);
    if (!averaged && p != s.scenario.pulses.end() && p->second.amplitude_kw > 0) {
        kw = std::max(0.0, loads::pulse_train(t, p->second.amplitude_kw, p->second.width_s, p->second.period_s) -
                               s.load_rt[i].shed_kw);
    }
    return l.behind_converter ? kw / s.scenario.dispatch.converter_efficiency : kw;
}

void log_event(SimState& s, const std::string& kind, const std::string& detail, std::int64_t seq = -1) {
    s.step_events.push_back({s.t, kind, detail, seq});
}

void rebuild_partitions(SimState& s) {
    const auto& net = s.scenario.network;
    s.partitions = partition(net, std::min<int>(s.scenario.sim.partitions, static_cast<int>(net.buses.size())),
                             s.scenario.partition_hint, s.scenario.sim.r_t_ohm, s.scenario.sim.coupling_delay);
    s.part_networks.clear();
    if (s.partitions.size() <= 1) return;
    for (const auto& p : s.partitions) {
        grid::NetworkModel sub;
        sub.base_voltage_v = net.base_voltage_v;
        sub.base_power_kva = net.base_power_kva;
        std::set<std::string> members(p.buses.begin(), p.buses.end());
        for (const auto& b : net.buses) {
            if (members.count(b.id)) sub.buses.push_back(b);
        }
        for (const auto& br : net.branches) {
            if (members.count(br.from_bus) && members.count(br.to_bus)) sub.branches.push_back(br);
        }
        for (const auto& b : net.isolated_buses) {
            if (members.count(b)) sub.isolated_buses.insert(b);
        }
        for (const auto& b : net.open_branches) sub.open_branches.insert(b);
        s.part_networks.push_back(std::move(sub));
    }
}

std::vector<dispatch::GenUnit> live_fleet(const SimState& s) {
    auto fleet = s.scenario.fleet;
    for (std::size_t i = 0; i < fleet.size(); ++i) {
        fleet[i].available = fleet[i].available && s.units[i].connected && s.units[i].running;
    }
    return fleet;
}

/// Loads as the scheduler sees them at `horizon`, including queued load steps.
std::vector<loads::LoadUnit> forecast_loads(const SimState& s, double horizon) {
    auto rts = s.load_rt;
    for (const auto& e : s.queue) {
        if (e.kind != EventKind::LoadStep || e.at >= horizon - kEps) continue;
        for (const auto& [id, kw] : e.loads) {
            auto& rt = rts[load_index(s, id)];
            rt.base_kw = ramp_value(rt, e.at);
            rt.target_kw = kw;
            rt.ramp_start = e.at;
            rt.ramp_s = e.ramp_s;
        }
    }
    std::vector<loads::LoadUnit> out = s.scenario.loads;
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i].setpoint_kw = s.load_energized[i] ? load_setpoint(rts[i], horizon) : 0.0;
    }
    return out;
}

std::optional<storage::EssUnit> ess_snapshot(const SimState& s) {
    if (!s.scenario.ess) return std::nullopt;
    auto e = *s.scenario.ess;
    e.charging_latched = s.ess_op.charging_latched;
    if (e.charging_latched) {
        e.mode = s.ess_op.mode;
        e.p_ess_kw = std::min(0.0, s.ess_op.p_ess_kw);
    } else {
        e.mode = storage::EssMode::Discharge;
    }
    return e;
}

void solve_schedule(SimState& s, bool lookahead) {
    const double horizon = lookahead ? s.t + s.scenario.sim.schedule_period : s.t;
    const auto fleet = live_fleet(s);
    const auto ld = forecast_loads(s, horizon);
    auto sched = dispatch::solve_opf(s.scenario.network, fleet, ess_snapshot(s), ld, s.mission,
                                     s.scenario.dispatch, s.schedule_log.empty() ? nullptr : &s.active);
    sched.id = static_cast<std::uint64_t>(s.schedule_log.size() + 1);
    sched.solve_time = 0.0;
    s.active = sched;
    s.ess_target_kw = sched.p_ess_kw;
    s.schedule_log.push_back({s.t, sched});
    s.schedule_applied = true;
    log_event(s, "schedule", std::to_string(sched.id) + " " + dispatch::to_string(sched.mode));
    s.next_schedule_t = s.t + s.scenario.sim.schedule_period;
}

void apply_event(SimState& s, const ContingencyEvent& e) {
    auto& sc = s.scenario;
    std::string detail = e.target;
    bool reschedule = true;
    switch (e.kind) {
        case EventKind::LoadStep: {
            std::ostringstream d;
            for (const auto& [id, kw] : e.loads) {
                auto& rt = s.load_rt[load_index(s, id)];
                rt.base_kw = ramp_value(rt, s.t);
                rt.target_kw = kw;
                rt.ramp_start = s.t;
                rt.ramp_s = e.ramp_s;
                sc.loads[load_index(s, id)].setpoint_kw = kw;
                d << (d.tellp() > 0 ? " " : "") << id << "=" << fmt(kw);
            }
            if (e.ramp_s > 0) d << " ramp=" << fmt(e.ramp_s, 3);
            detail = d.str();
            reschedule = false;
            break;
        }
        case EventKind::BusIsolation: {
            sc.network.isolated_buses.insert(e.target);
            for (std::size_t i = 0; i < sc.fleet.size(); ++i) {
                if (sc.fleet[i].bus == e.target) s.units[i].connected = false;
            }
            if (sc.ess && sc.ess->bus == e.target) sc.ess->unavailable = true;
            for (std::size_t i = 0; i < sc.loads.size(); ++i) {
                if (sc.loads[i].bus == e.target) s.load_energized[i] = false;
            }
            rebuild_partitions(s);
            break;
        }
        case EventKind::EssUnavailable:
            sc.ess->unavailable = true;
            s.ess_set_kw = 0.0;
            break;
        case EventKind::GenTrip:
            for (std::size_t i = 0; i < sc.fleet.size(); ++i) {
                if (sc.fleet[i].id == e.target) {
                    s.units[i].connected = false;
                    sc.fleet[i].available = false;
                }
            }
            break;
        case EventKind::MissionChange:
            sc.mission = loads::mission_from_string(e.target);
            s.mission = loads::mission_profile(sc.mission);
            break;
        case EventKind::ShedApproval: {
            auto entries = e.shed;
            if (entries.empty() && s.active.shed) entries = s.active.shed->entries;
            std::ostringstream d;
            double total = 0.0;
            for (const auto& [id, kw] : entries) {
                auto& rt = s.load_rt[load_index(s, id)];
                const double room = std::max(0.0, ramp_value(rt, s.t) - rt.shed_kw);
                const double applied = std::min(kw, room);
                rt.shed_kw += applied;
                total += applied;
                d << (d.tellp() > 0 ? " " : "") << id << "=" << fmt(applied);
            }
            detail = entries.empty() ? "nothing to approve" : d.str() + " total=" + fmt(total);
            break;
        }
    }
    log_event(s, to_string(e.kind), detail, e.command_seq);
    if (reschedule) s.next_schedule_t = s.t;
}

struct Electrical {
    std::vector<double> v;
    std::vector<double> inj;   ///< kW per bus as solved, slack included
    double losses_kw = 0.0;    ///< internal branches and shunts
    double tie_out_kw = 0.0;   ///< power leaving partitions through couplings
    double cut_loss_kw = 0.0;  ///< true loss of cut branches
};

std::set<std::string> slack_buses(const SimState& s, std::vector<int>* island_of,
                                  std::vector<bool>* energized) {
    const auto& net = s.scenario.network;
    std::set<std::string> candidates;
    for (std::size_t i = 0; i < s.units.size(); ++i) {
        if (s.units[i].connected && s.units[i].running && !net.isolated_buses.count(s.scenario.fleet[i].bus)) {
            candidates.insert(s.scenario.fleet[i].bus);
        }
    }
    const auto& ess = s.scenario.ess;
    if (ess && !ess->unavailable && !net.isolated_buses.count(ess->bus)) candidates.insert(ess->bus);
    // An empty set would let every generator bus qualify.
    if (candidates.empty()) candidates.insert("");
    std::set<std::string> slack;
    const auto islands = grid::find_islands(net, candidates);
    if (island_of) island_of->assign(net.buses.size(), -1);
    if (energized) energized->assign(net.buses.size(), false);
    for (std::size_t k = 0; k < islands.size(); ++k) {
        const auto& isl = islands[k];
        if (isl.slack) slack.insert(net.buses[*isl.slack].id);
        for (auto b : isl.buses) {
            if (island_of) (*island_of)[b] = static_cast<int>(k);
            if (energized) (*energized)[b] = isl.slack.has_value();
        }
    }
    return slack;
}

Electrical solve_network(const SimState& s, const std::vector<double>& inj, const std::set<std::string>& sources) {
    const auto& net = s.scenario.network;
    Electrical out;
    out.v.assign(net.buses.size(), 0.0);
    out.inj = inj;
    grid::FlowOptions fo;
    fo.sources = sources;
    if (fo.sources.empty()) fo.sources.insert("");
    if (s.part_networks.empty()) {
        const auto sol = grid::dc_power_flow(net, inj, fo);
        out.v = sol.bus_voltages;
        out.inj = sol.bus_injections;
        out.losses_kw = sol.total_losses;
        return out;
    }

    const auto& delayed = s.v_history.front();
    const std::size_t np = s.partitions.size();
    std::vector<grid::FlowSolution> sols(np);
    std::vector<std::vector<grid::FlowOptions::Tie>> ties(np);
    std::vector<std::exception_ptr> errors(np);
    for (std::size_t p = 0; p < np; ++p) {
        for (const auto& l : s.partitions[p].links) {
            const auto ia = net.bus_index(l.bus_a);
            const auto ib = net.bus_index(l.bus_b);
            if (l.part_a == static_cast<int>(p)) ties[p].push_back({l.bus_a, l.r_ohm, delayed[ib], l.r_t_ohm});
            if (l.part_b == static_cast<int>(p)) ties[p].push_back({l.bus_b, l.r_ohm, delayed[ia], l.r_t_ohm});
        }
    }
    auto work = [&](std::size_t p) {
        try {
            const auto& sub = s.part_networks[p];
            std::vector<double> sub_inj(sub.buses.size(), 0.0);
            for (std::size_t i = 0; i < sub.buses.size(); ++i) sub_inj[i] = inj[net.bus_index(sub.buses[i].id)];
            grid::FlowOptions po;
            for (const auto& b : sub.buses) {
                if (sources.count(b.id)) po.sources.insert(b.id);
            }
            if (po.sources.empty()) po.sources.insert("");
            po.ties = ties[p];
            sols[p] = grid::dc_power_flow(sub, sub_inj, po);
        } catch (...) {
            errors[p] = std::current_exception();
        }
    };
    const int workers = std::max(1, std::min<int>(s.scenario.sim.workers, static_cast<int>(np)));
    if (workers <= 1) {
        for (std::size_t p = 0; p < np; ++p) work(p);
    } else {
        std::vector<std::thread> pool;
        for (int w = 1; w < workers; ++w) {
            pool.emplace_back([&, w]() {
                for (std::size_t p = static_cast<std::size_t>(w); p < np; p += static_cast<std::size_t>(workers)) work(p);
            });
        }
        for (std::size_t p = 0; p < np; p += static_cast<std::size_t>(workers)) work(p);
        for (auto& t : pool) t.join();
    }
    for (const auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
    const double vb = net.base_voltage_v;
    for (std::size_t p = 0; p < np; ++p) {
        const auto& sub = s.part_networks[p];
        for (std::size_t i = 0; i < sub.buses.size(); ++i) {
            const auto g = net.bus_index(sub.buses[i].id);
            out.v[g] = sols[p].bus_voltages[i];
            out.inj[g] = sols[p].bus_injections[i];
        }
        out.losses_kw += sols[p].total_losses;
        for (const auto& t : ties[p]) {
            const double v = sols[p].bus_voltages[sub.bus_index(t.bus)] * vb;
            out.tie_out_kw += v * (v - t.v_source_pu * vb) / t.r_ohm / 1e3;
        }
    }
    std::set<std::string> seen;
    for (const auto& part : s.partitions) {
        for (const auto& l : part.links) {
            if (!seen.insert(l.branch).second) continue;
            const double dv = (out.v[net.bus_index(l.bus_a)] - out.v[net.bus_index(l.bus_b)]) * vb;
            out.cut_loss_kw += dv * dv / l.r_ohm / 1e3;
        }
    }
    // Ties inject at PQ buses; fold their exchange into the reported injections.
    return out;
}

double unit_speed_ref(const SimState& s, std::size_t i, double p_kw) {
    const auto& opt = s.scenario.dispatch;
    if (p_kw <= 1e-6) return opt.zero_dispatch == dispatch::ZeroDispatch::Idle ? opt.idle_speed_rpm : 0.0;
    return s.scenario.fleet[i].sfoc->optimized_speed(p_kw);
}

double ess_energy_kj(const SimState& s) {
    return s.scenario.ess ? s.scenario.ess->battery.stored_kwh() * 3600.0 : 0.0;
}

double kinetic_kj(const SimState& s) {
    double e = 0.0;
    for (std::size_t i = 0; i < s.units.size(); ++i) {
        if (s.units[i].running) e += powertrain::kinetic_energy_kj(s.scenario.fleet[i].engine, s.units[i].engine.omega_rpm);
    }
    return e;
}

double capacitor_kj(const SimState& s) {
    double e = 0.0;
    for (const auto& u : s.units) e += powertrain::dc_link_energy_kj(u.converter);
    return e;
}

void refresh_audit_deltas(SimState& s) {
    s.audit.kinetic_delta_kj = kinetic_kj(s) - s.initial_kinetic_kj;
    s.audit.battery_delta_kj = ess_energy_kj(s) - s.initial_battery_kj;
    s.audit.capacitor_delta_kj = capacitor_kj(s) - s.initial_capacitor_kj;
}

/// Unit setpoints from the active schedule with the ESS ramp shared out.
void update_setpoints(SimState& s) {
    const auto& sched = s.active;
    double total = 0.0;
    for (std::size_t i = 0; i < s.units.size(); ++i) {
        if (s.units[i].connected && s.units[i].running && i < sched.gens.size()) total += sched.gens[i].p_kw;
    }
    const double extra = s.ess_set_kw - s.ess_target_kw;
    for (std::size_t i = 0; i < s.units.size(); ++i) {
        auto& u = s.units[i];
        if (!u.connected || !u.running || i >= sched.gens.size()) {
            u.p_set_kw = 0.0;
            u.omega_ref_rpm = 0.0;
            continue;
        }
        double p = sched.gens[i].p_kw;
        if (total > 0) p = std::max(0.0, p - extra * p / total);
        u.p_set_kw = p;
        u.omega_ref_rpm = sched.gens[i].available ? unit_speed_ref(s, i, p) : unit_speed_ref(s, i, 0.0);
    }
}

void update_ess(SimState& s, double v_bus_pu, bool is_slack, double slack_kw) {
    auto& sc = s.scenario;
    if (!sc.ess) return;
    auto& ess = *sc.ess;
    const double pv = storage::pv_power(ess.pv, irradiance_at(sc.irradiance, s.t));
    const double v_bus = std::max(1.0, v_bus_pu * sc.network.base_voltage_v);
    if (ess.unavailable || sc.network.isolated_buses.count(ess.bus)) {
        s.ess_op = storage::EssOperatingPoint{};
        s.ess_op.v_bus = v_bus;
        return;
    }
    const double request = is_slack ? slack_kw : s.ess_set_kw;
    auto select = [&](double req) {
        return storage::charge_mode_select(ess, ess.battery.soc, pv, ess.grid_charge_allowed, req, v_bus);
    };
    try {
        s.ess_op = select(request);
    } catch (const Error& e) {
        if (e.kind() != ErrorKind::Mode) throw;
        s.ess_op = select(std::min(0.0, request));
        if (s.ess_set_kw > 0) log_event(s, "soc-limit", "discharge refused, battery charging");
        s.ess_set_kw = std::min(0.0, s.ess_set_kw);
    }
    ess.charging_latched = s.ess_op.charging_latched;
    ess.mode = s.ess_op.mode;
    ess.p_ess_kw = s.ess_op.p_ess_kw;
}

}  // namespace

// =============================================================================
// Public API
// =============================================================================

SimState init_state(const Scenario& scenario, const RunOptions& options) {
    scenario.validate();
    SimState s;
    s.scenario = scenario;
    auto& sc = s.scenario;
    if (options.partitions) sc.sim.partitions = *options.partitions;
    if (options.workers) sc.sim.workers = *options.workers;
    if (options.duration) sc.sim.duration = *options.duration;
    if (options.trace_decimation) sc.sim.trace_decimation = *options.trace_decimation;
    if (sc.sim.partitions < 1 || sc.sim.partitions > static_cast<int>(sc.network.buses.size())) {
        throw Error(ErrorKind::Validation, "partitions must lie in [1, bus count]");
    }
    if (sc.sim.workers < 1) throw Error(ErrorKind::Validation, "workers must be at least 1");
    s.dt = sc.sim.dt;
    s.mission = loads::mission_profile(sc.mission);

    s.queue = sc.events;
    std::stable_sort(s.queue.begin(), s.queue.end(),
                     [](const ContingencyEvent& a, const ContingencyEvent& b) { return a.at < b.at; });

    s.load_rt.resize(sc.loads.size());
    s.load_energized.assign(sc.loads.size(), true);
    for (std::size_t i = 0; i < sc.loads.size(); ++i) {
        s.load_rt[i].base_kw = s.load_rt[i].target_kw = sc.loads[i].setpoint_kw;
        if (sc.network.isolated_buses.count(sc.loads[i].bus)) s.load_energized[i] = false;
    }

    s.units.resize(sc.fleet.size());
    for (std::size_t i = 0; i < sc.fleet.size(); ++i) {
        auto& u = s.units[i];
        const auto& g = sc.fleet[i];
        u.connected = g.available && !sc.network.isolated_buses.count(g.bus);
        u.running = u.connected;
        u.converter = g.converter;
        u.converter.v_dc = u.converter.v_nominal;
    }
    if (sc.ess) {
        const double pv = storage::pv_power(sc.ess->pv, irradiance_at(sc.irradiance, 0.0));
        s.ess_op = storage::charge_mode_select(*sc.ess, sc.ess->battery.soc, pv, sc.ess->grid_charge_allowed, 0.0);
        sc.ess->charging_latched = s.ess_op.charging_latched;
    }
    rebuild_partitions(s);

    solve_schedule(s, false);
    s.ess_set_kw = s.ess_target_kw;
    update_setpoints(s);
    for (auto& u : s.units) u.p_e_kw = u.p_set_kw;

    // Initial electrical solution, iterated so coupled partitions settle.
    std::vector<int> island_of;
    std::vector<bool> energized;
    const auto sources = slack_buses(s, &island_of, &energized);
    const auto& net = sc.network;
    s.bus_v.assign(net.buses.size(), 1.0);
    for (std::size_t b = 0; b < net.buses.size(); ++b) s.bus_v[b] = net.buses[b].v_setpoint;
    s.v_history.assign(static_cast<std::size_t>(sc.sim.coupling_delay), s.bus_v);

    update_ess(s, 1.0, false, 0.0);
    std::vector<double> inj(net.buses.size(), 0.0);
    for (std::size_t i = 0; i < sc.loads.size(); ++i) {
        if (!s.load_energized[i]) continue;
        const auto b = net.bus_index(sc.loads[i].bus);
        if (!energized[b]) continue;
        inj[b] -= load_draw(s, i, 0.0, true);
    }
    for (std::size_t i = 0; i < s.units.size(); ++i) {
        if (s.units[i].connected) inj[net.bus_index(sc.fleet[i].bus)] += s.units[i].p_e_kw;
    }
    if (sc.ess) inj[net.bus_index(sc.ess->bus)] += s.ess_op.p_ess_kw;
    Electrical el;
    for (int pass = 0; pass < (s.part_networks.empty() ? 1 : 200); ++pass) {
        el = solve_network(s, inj, sources);
        for (auto& h : s.v_history) h = el.v;
    }
    s.bus_v = el.v;
    for (const auto& slack : sources) {
        const auto b = net.bus_index(slack);
        std::vector<std::size_t> at;
        double weight = 0.0;
        for (std::size_t i = 0; i < s.units.size(); ++i) {
            if (s.units[i].connected && sc.fleet[i].bus == slack) {
                at.push_back(i);
                weight += s.units[i].p_set_kw;
            }
        }
        double slack_kw = el.inj[b];
        for (std::size_t i = 0; i < s.units.size(); ++i) {
            if (s.units[i].connected && sc.fleet[i].bus == slack) slack_kw -= 0.0;
        }
        for (auto i : at) {
            s.units[i].p_e_kw = weight > 0 ? slack_kw * s.units[i].p_set_kw / weight : slack_kw / static_cast<double>(at.size());
        }
    }

    for (std::size_t i = 0; i < s.units.size(); ++i) {
        auto& u = s.units[i];
        const auto& g = sc.fleet[i];
        if (!u.running) {
            u.engine.omega_rpm = 0.0;
            continue;
        }
        u.p_in_kw = u.p_e_kw;
        const double w = std::max(u.omega_ref_rpm, g.engine.omega_min_rpm);
        u.engine = powertrain::make_engine_state(g.engine, w, u.p_in_kw, s.dt);
        u.governor.integral = u.engine.u_f;
        u.governor.u_f = u.engine.u_f;
    }
    s.initial_kinetic_kj = kinetic_kj(s);
    s.initial_battery_kj = ess_energy_kj(s);
    s.initial_capacitor_kj = capacitor_kj(s);
    s.next_schedule_t = sc.sim.schedule_period;
    s.step_events.clear();
    s.schedule_applied = false;
    return s;
}

void inject(SimState& state, ContingencyEvent event) {
    if (event.at < state.t - kEps) throw Error(ErrorKind::Validation, "event time lies in the past");
    check_event(state.scenario, event);
    auto it = std::upper_bound(state.queue.begin(), state.queue.end(), event.at,
                               [](double t, const ContingencyEvent& e) { return t < e.at; });
    state.queue.insert(it, std::move(event));
}

TraceRecord step(SimState& s) {
    auto& sc = s.scenario;
    const auto& net = sc.network;
    const double dt = s.dt;
    s.t = static_cast<double>(s.step_index) * dt;
    s.step_events.clear();
    s.schedule_applied = false;

    while (!s.queue.empty() && s.queue.front().at <= s.t + 0.5 * dt) {
        const auto e = s.queue.front();
        s.queue.erase(s.queue.begin());
        apply_event(s, e);
    }
    if (s.t >= s.next_schedule_t - 0.5 * dt) solve_schedule(s, true);

    if (s.ess_target_kw < s.ess_set_kw) {
        s.ess_set_kw = std::max(s.ess_target_kw, s.ess_set_kw - sc.sim.ess_ramp_kw_s * dt);
    } else {
        s.ess_set_kw = s.ess_target_kw;
    }
    update_setpoints(s);

    std::vector<int> island_of;
    std::vector<bool> energized;
    const auto sources = slack_buses(s, &island_of, &energized);
    for (std::size_t i = 0; i < sc.loads.size(); ++i) {
        if (!s.load_energized[i]) continue;
        if (!energized[net.bus_index(sc.loads[i].bus)] && load_setpoint(s.load_rt[i], s.t) > 0) {
            s.load_energized[i] = false;
            log_event(s, "blackout", sc.loads[i].id + " de-energized");
        }
    }

    const bool ess_slack = sc.ess && sources.count(sc.ess->bus) > 0 &&
                           std::none_of(sc.fleet.begin(), sc.fleet.end(), [&](const dispatch::GenUnit& g) {
                               return g.bus == sc.ess->bus;
                           });
    const double v_ess = sc.ess ? s.bus_v[net.bus_index(sc.ess->bus)] : 1.0;
    if (!ess_slack) update_ess(s, v_ess, false, 0.0);

    // Non-slack converters track their setpoints.
    const double lag = sc.fleet.empty() ? 1.0 : -std::expm1(-dt / sc.fleet.front().converter.response_time);
    for (std::size_t i = 0; i < s.units.size(); ++i) {
        auto& u = s.units[i];
        if (!u.connected || !u.running) {
            u.p_e_kw = 0.0;
            continue;
        }
        if (!sources.count(sc.fleet[i].bus)) u.p_e_kw += (u.p_set_kw - u.p_e_kw) * lag;
    }

    std::vector<double> inj(net.buses.size(), 0.0);
    double load_kw = 0.0;
    for (std::size_t i = 0; i < sc.loads.size(); ++i) {
        if (!s.load_energized[i]) continue;
        const double d = load_draw(s, i, s.t);
        inj[net.bus_index(sc.loads[i].bus)] -= d;
        load_kw += d;
    }
    for (std::size_t i = 0; i < s.units.size(); ++i) {
        if (s.units[i].connected && s.units[i].running) inj[net.bus_index(sc.fleet[i].bus)] += s.units[i].p_e_kw;
    }
    if (sc.ess && !ess_slack) inj[net.bus_index(sc.ess->bus)] += s.ess_op.p_ess_kw;

    Electrical el = solve_network(s, inj, sources);
    for (const auto& slack : sources) {
        const auto b = net.bus_index(slack);
        double slack_kw = el.inj[b];
        std::vector<std::size_t> at;
        double weight = 0.0;
        for (std::size_t i = 0; i < s.units.size(); ++i) {
            if (s.units[i].connected && s.units[i].running && sc.fleet[i].bus == slack) {
                at.push_back(i);
                weight += s.units[i].p_set_kw;
            }
        }
        if (at.empty()) {
            if (ess_slack && sc.ess->bus == slack) update_ess(s, el.v[b], true, slack_kw);
            continue;
        }
        if (sc.ess && sc.ess->bus == slack) slack_kw -= s.ess_op.p_ess_kw;
        for (auto i : at) {
            s.units[i].p_e_kw = weight > 0 ? slack_kw * s.units[i].p_set_kw / weight
                                           : slack_kw / static_cast<double>(at.size());
        }
    }
    s.bus_v = el.v;
    s.v_history.erase(s.v_history.begin());
    s.v_history.push_back(el.v);
    s.losses_kw = el.losses_kw + el.cut_loss_kw;
    s.load_kw = load_kw;

    // Unit dynamics.
    auto& audit = s.audit;
    for (std::size_t i = 0; i < s.units.size(); ++i) {
        auto& u = s.units[i];
        const auto& g = sc.fleet[i];
        if (!u.running) continue;
        const double p_out = u.connected ? u.p_e_kw : 0.0;
        const double e_nom = 0.5 * u.converter.c_dc * u.converter.v_nominal * u.converter.v_nominal;
        const double e_now = 0.5 * u.converter.c_dc * u.converter.v_dc * u.converter.v_dc;
        const double target_in = p_out + (e_nom - e_now) / kDcLinkRegulation / 1e3;
        u.p_in_kw += (target_in - u.p_in_kw) * -std::expm1(-dt / u.converter.response_time);
        u.converter = powertrain::dc_link_step(u.converter, u.p_in_kw, p_out * 1e3 / u.converter.v_dc, dt);

        double u_f = 0.0;
        if (u.connected) {
            auto [cmd, gov] = powertrain::governor_step(u.governor, g.governor, u.omega_ref_rpm, u.engine.omega_rpm, dt);
            u.governor = gov;
            u_f = cmd;
        }
        const double w = powertrain::rpm_to_rad(u.engine.omega_rpm);
        try {
            const auto next = powertrain::de_step(u.engine, g.engine, u_f, u.p_in_kw, dt);
            const double w_next = powertrain::rpm_to_rad(next.omega_rpm);
            audit.mech_in_kj += next.p_mech_kw * dt;
            audit.rotational_loss_kj += dt * g.engine.k_loss * w * w_next / 1e3;
            u.engine = next;
        } catch (const Error& e) {
            if (e.kind() != ErrorKind::Stall) throw;
            audit.rotational_loss_kj += 0.5 * g.engine.J * w * w / 1e3 - u.p_in_kw * dt;
            u.engine.omega_rpm = 0.0;
            u.running = false;
            log_event(s, u.connected ? "stall" : "stopped", g.id);
            u.connected = false;
            s.next_schedule_t = s.t + dt;
        }
    }

    // Battery.
    if (sc.ess) {
        auto& b = sc.ess->battery;
        const double p_batt = s.ess_op.p_batt_kw;
        audit.pv_in_kj += s.ess_op.p_pv_kw * dt;
        if (p_batt < 0) audit.charge_loss_kj += (1.0 - b.charge_efficiency) * -p_batt * dt;
        b = storage::soc_step(b, p_batt, dt);
        if (b.limit_event) log_event(s, "soc-limit", "state of charge clipped");
    }

    audit.load_kj += load_kw * dt;
    audit.network_loss_kj += (el.losses_kw + el.cut_loss_kw) * dt;
    audit.coupling_kj += (el.tie_out_kw - el.cut_loss_kw) * dt;
    refresh_audit_deltas(s);

    bool any_source = false;
    for (const auto& u : s.units) any_source = any_source || (u.connected && u.running);
    if (!any_source && !s.halted) {
        s.halted = true;
        s.halt_reason = "no generating unit left";
        log_event(s, "halt", s.halt_reason);
    }

    // Record.
    TraceRecord r;
    s.step_index += 1;
    s.t = static_cast<double>(s.step_index) * dt;
    r.t = s.t;
    r.schedule_id = s.active.id;
    r.mode = dispatch::to_string(s.active.mode);
    r.mission = loads::to_string(sc.mission);
    double fuel = 0.0;
    double fuel_fixed = 0.0;
    double power = 0.0;
    for (std::size_t i = 0; i < s.units.size(); ++i) {
        const auto& u = s.units[i];
        const auto& map = *sc.fleet[i].sfoc;
        GenSample gs;
        gs.p_kw = u.connected ? u.p_e_kw : 0.0;
        gs.p_set_kw = u.p_set_kw;
        gs.omega_rpm = u.running ? u.engine.omega_rpm : 0.0;
        gs.omega_ref_rpm = u.omega_ref_rpm;
        gs.running = u.running && u.connected;
        if (gs.running && gs.p_kw > 1.0) {
            gs.sfoc = map.sfoc(gs.p_kw, gs.omega_rpm);
            gs.sfoc_fixed = map.sfoc(gs.p_kw, map.options().omega_max_rpm);
            gs.fuel_kg_h = gs.sfoc * gs.p_kw / 1e3;
            fuel += gs.fuel_kg_h;
            fuel_fixed += gs.sfoc_fixed * gs.p_kw / 1e3;
            power += gs.p_kw;
        }
        r.gens.push_back(gs);
    }
    r.sfoc_fleet = power > 0 ? fuel * 1e3 / power : 0.0;
    r.sfoc_fixed_fleet = power > 0 ? fuel_fixed * 1e3 / power : 0.0;
    if (sc.ess) {
        r.ess_p_kw = s.ess_op.p_ess_kw;
        r.ess_p_set_kw = s.ess_set_kw;
        r.soc = sc.ess->battery.soc;
        r.ess_mode = storage::to_string(s.ess_op.mode);
    }
    r.load_kw = load_kw;
    r.losses_kw = s.losses_kw;
    r.bus_v = s.bus_v;
    r.events = s.step_events;
    r.advisory = s.active.advisory;
    return r;
}

SimResult run_scenario(const Scenario& scenario, const RunOptions& options) {
    SimResult result;
    SimState s = init_state(scenario, options);
    const auto& sc = s.scenario;
    for (const auto& g : sc.fleet) result.trace.gen_ids.push_back(g.id);
    for (const auto& b : sc.network.buses) result.trace.bus_ids.push_back(b.id);
    const auto steps = static_cast<std::int64_t>(std::llround(sc.sim.duration / sc.sim.dt));
    const int decimation = std::max(1, sc.sim.trace_decimation);
    const auto wall0 = std::chrono::steady_clock::now();
    for (std::int64_t k = 0; k < steps && !s.halted; ++k) {
        auto rec = step(s);
        const bool keep = (k % decimation == 0) || !rec.events.empty() || s.schedule_applied;
        if (keep && options.on_record && !options.on_record(s, rec)) break;
        if (keep && options.keep_trace) result.trace.records.push_back(std::move(rec));
        if (sc.sim.realtime_factor > 0) {
            const auto due = wall0 + std::chrono::duration<double>(s.t / sc.sim.realtime_factor);
            std::this_thread::sleep_until(due);
        }
    }
    result.schedules = s.schedule_log;
    result.audit = s.audit;
    result.final_state = std::move(s);
    return result;
}

double fixed_speed_penalty(const TraceRecord& record) {
    if (!(record.sfoc_fixed_fleet > 0)) return 0.0;
    return (record.sfoc_fixed_fleet - record.sfoc_fleet) / record.sfoc_fixed_fleet;
}

}  // namespace psv::simcore
