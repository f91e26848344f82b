#include "psv/trace.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <sstream>

namespace psv::gateway {

namespace {

/// Fixed decimal resolution keeps trace files compact and diff-friendly.
/// Round-tripping through text gives the shortest double for that decimal.
double q(double v, double step) {
    const int digits = static_cast<int>(std::lround(-std::log10(step)));
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
    const double r = std::strtod(buf, nullptr);
    return r == 0.0 ? 0.0 : r;
}

std::string num(double v, int precision) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", precision, v);
    return buf;
}

}  // namespace

std::uint64_t fnv1a(const std::string& bytes, std::uint64_t seed) {
    std::uint64_t h = seed;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

ordered_json trace_header(const simcore::SimTrace& trace, const std::string& scenario_name) {
    ordered_json h;
    h["schema"] = "psv-trace";
    h["version"] = kTraceVersion;
    h["scenario"] = scenario_name;
    h["gen_ids"] = trace.gen_ids;
    h["bus_ids"] = trace.bus_ids;
    return h;
}

ordered_json record_json(const simcore::TraceRecord& r, const std::vector<std::string>& gen_ids) {
    ordered_json j;
    j["t"] = q(r.t, 1e-6);
    j["schedule_id"] = r.schedule_id;
    j["mode"] = r.mode;
    j["mission"] = r.mission;
    ordered_json gens = ordered_json::array();
    for (std::size_t i = 0; i < r.gens.size(); ++i) {
        const auto& g = r.gens[i];
        ordered_json o;
        o["id"] = i < gen_ids.size() ? gen_ids[i] : std::to_string(i);
        o["p_kw"] = q(g.p_kw, 1e-3);
        o["p_set_kw"] = q(g.p_set_kw, 1e-3);
        o["omega_rpm"] = q(g.omega_rpm, 1e-3);
        o["omega_ref_rpm"] = q(g.omega_ref_rpm, 1e-3);
        o["sfoc"] = q(g.sfoc, 1e-3);
        o["sfoc_fixed"] = q(g.sfoc_fixed, 1e-3);
        o["fuel_kg_h"] = q(g.fuel_kg_h, 1e-4);
        o["running"] = g.running;
        gens.push_back(o);
    }
    j["gens"] = gens;
    ordered_json ess;
    ess["p_kw"] = q(r.ess_p_kw, 1e-3);
    ess["p_set_kw"] = q(r.ess_p_set_kw, 1e-3);
    ess["soc"] = q(r.soc, 1e-7);
    ess["mode"] = r.ess_mode;
    j["ess"] = ess;
    j["load_kw"] = q(r.load_kw, 1e-3);
    j["losses_kw"] = q(r.losses_kw, 1e-4);
    ordered_json v = ordered_json::array();
    for (double x : r.bus_v) v.push_back(q(x, 1e-7));
    j["bus_v"] = v;
    j["sfoc_fleet"] = q(r.sfoc_fleet, 1e-3);
    j["sfoc_fixed_fleet"] = q(r.sfoc_fixed_fleet, 1e-3);
    ordered_json ev = ordered_json::array();
    for (const auto& e : r.events) {
        ordered_json o;
        o["t"] = q(e.t, 1e-6);
        o["kind"] = e.kind;
        o["detail"] = e.detail;
        if (e.command_seq >= 0) o["command_seq"] = e.command_seq;
        ev.push_back(o);
    }
    j["events"] = ev;
    if (!r.advisory.empty()) j["advisory"] = r.advisory;
    return j;
}

void write_trace(std::ostream& out, const simcore::SimTrace& trace, const std::string& scenario_name) {
    TraceWriter w(out, trace.gen_ids, trace.bus_ids, scenario_name);
    for (const auto& r : trace.records) w.write(r);
}

TraceWriter::TraceWriter(std::ostream& out, const std::vector<std::string>& gen_ids,
                         const std::vector<std::string>& bus_ids, const std::string& scenario_name)
    : out_(out), gen_ids_(gen_ids) {
    simcore::SimTrace t;
    t.gen_ids = gen_ids;
    t.bus_ids = bus_ids;
    emit(trace_header(t, scenario_name).dump());
}

void TraceWriter::write(const simcore::TraceRecord& record) { emit(record_json(record, gen_ids_).dump()); }

void TraceWriter::emit(const std::string& line) {
    out_ << line << '\n';
    hash_ = fnv1a(line + "\n", hash_);
}

// =============================================================================
// Summaries
// =============================================================================

double schedule_sfoc(const dispatch::Schedule& s, const std::vector<dispatch::GenUnit>& fleet, double fixed_rpm) {
    double fuel = 0.0;
    double power = 0.0;
    for (std::size_t i = 0; i < s.gens.size() && i < fleet.size(); ++i) {
        const auto& g = s.gens[i];
        if (g.p_kw <= 1e-6 || !fleet[i].sfoc) continue;
        const double w = fixed_rpm > 0 ? fixed_rpm : g.omega_ref_rpm;
        fuel += fleet[i].sfoc->sfoc(g.p_kw, w) * g.p_kw;
        power += g.p_kw;
    }
    return power > 0 ? fuel / power : 0.0;
}

std::vector<std::string> summary_columns(const std::vector<std::string>& gen_ids, const SummaryOptions& o) {
    std::vector<std::string> cols{"t_s", "id"};
    for (const auto& g : gen_ids) {
        cols.push_back("P_" + g);
        cols.push_back("w_" + g);
    }
    cols.insert(cols.end(), {"P_ESS", "total_kW", "mode", "SFOC"});
    if (o.compare_fixed_speed) {
        cols.push_back("SFOC_" + num(o.fixed_speed_rpm, 0));
        cols.push_back("CS/OS");
    }
    return cols;
}

std::vector<std::string> summary_row(double t, const dispatch::Schedule& s, const std::vector<dispatch::GenUnit>& fleet,
                                     const SummaryOptions& o) {
    std::vector<std::string> row{num(t, 3), std::to_string(s.id)};
    for (const auto& g : s.gens) {
        row.push_back(num(g.p_kw, 2));
        row.push_back(g.p_kw > 1e-6 ? num(g.omega_ref_rpm, 0) : "0");
    }
    row.push_back(num(s.p_ess_kw, 2));
    row.push_back(num(s.total_generation_kw(), 2));
    row.push_back(dispatch::to_string(s.mode));
    const double os = schedule_sfoc(s, fleet);
    row.push_back(num(os, 1));
    if (o.compare_fixed_speed) {
        const double cs = schedule_sfoc(s, fleet, o.fixed_speed_rpm);
        row.push_back(num(cs, 1));
        row.push_back(num(cs, 0) + "/" + num(os, 0));
    }
    return row;
}

std::string format_table(const std::vector<std::string>& columns, const std::vector<std::vector<std::string>>& rows) {
    std::vector<std::size_t> width(columns.size(), 0);
    for (std::size_t c = 0; c < columns.size(); ++c) width[c] = columns[c].size();
    for (const auto& r : rows) {
        for (std::size_t c = 0; c < r.size() && c < width.size(); ++c) width[c] = std::max(width[c], r[c].size());
    }
    std::ostringstream out;
    auto line = [&](const std::vector<std::string>& cells) {
        for (std::size_t c = 0; c < cells.size() && c < width.size(); ++c) {
            if (c) out << "  ";
            out << std::string(width[c] - cells[c].size(), ' ') << cells[c];
        }
        out << '\n';
    };
    line(columns);
    for (const auto& r : rows) line(r);
    return out.str();
}

ordered_json schedule_json(const dispatch::Schedule& s, const std::vector<dispatch::GenUnit>& fleet) {
    ordered_json j;
    j["id"] = s.id;
    j["mode"] = dispatch::to_string(s.mode);
    ordered_json gens = ordered_json::array();
    for (const auto& g : s.gens) {
        ordered_json o;
        o["id"] = g.id;
        o["bus"] = g.bus;
        o["p_kw"] = g.p_kw;
        o["omega_ref_rpm"] = g.omega_ref_rpm;
        o["available"] = g.available;
        gens.push_back(o);
    }
    j["gens"] = gens;
    j["p_ess_kw"] = s.p_ess_kw;
    j["total_generation_kw"] = s.total_generation_kw();
    j["demand_kw"] = s.demand_kw;
    j["losses_kw"] = s.losses_kw;
    j["deficit_kw"] = s.deficit_kw;
    j["objective_kg_h"] = s.objective;
    j["fuel_kg_h"] = s.fuel_kg_h;
    j["sfoc"] = schedule_sfoc(s, fleet);
    j["sfoc_fixed_1800"] = schedule_sfoc(s, fleet, 1800.0);
    auto report = [](const grid::ViolationReport& r) {
        ordered_json v = ordered_json::array();
        for (const auto& x : r.items) {
            ordered_json o;
            o["kind"] = grid::to_string(x.kind);
            o["element"] = x.element;
            o["value"] = x.value;
            o["limit"] = x.limit;
            v.push_back(o);
        }
        return v;
    };
    j["violations"] = report(s.violations);
    j["warnings"] = report(s.warnings);
    if (s.shed) {
        ordered_json sh;
        ordered_json entries = ordered_json::object();
        for (const auto& [id, kw] : s.shed->entries) entries[id] = kw;
        sh["entries"] = entries;
        sh["total_kw"] = s.shed->total_shed;
        sh["insufficient"] = s.shed->insufficient;
        sh["residual_kw"] = s.shed->residual_kw;
        j["shed"] = sh;
    }
    j["advisory"] = s.advisory;
    j["outer_iterations"] = s.outer_iterations;
    j["iteration_cap"] = s.iteration_cap;
    return j;
}

// =============================================================================
// Telemetry
// =============================================================================

ordered_json telemetry_frame(const simcore::SimState& s, const simcore::TraceRecord& r, std::uint64_t seq) {
    ordered_json f;
    f["type"] = "telemetry";
    f["version"] = kTelemetryVersion;
    f["seq"] = seq;
    f["t"] = q(r.t, 1e-6);
    f["mission"] = r.mission;
    f["schedule_id"] = r.schedule_id;
    f["mode"] = r.mode;
    ordered_json gens = ordered_json::array();
    for (std::size_t i = 0; i < r.gens.size(); ++i) {
        const auto& g = r.gens[i];
        ordered_json o;
        o["id"] = s.scenario.fleet[i].id;
        o["p_kw"] = q(g.p_kw, 1e-2);
        o["omega_rpm"] = q(g.omega_rpm, 1e-2);
        o["omega_ref_rpm"] = q(g.omega_ref_rpm, 1e-2);
        o["sfoc"] = q(g.sfoc, 1e-2);
        o["sfoc_fixed"] = q(g.sfoc_fixed, 1e-2);
        o["running"] = g.running;
        gens.push_back(o);
    }
    f["gens"] = gens;
    ordered_json ess;
    ess["p_kw"] = q(r.ess_p_kw, 1e-2);
    ess["soc"] = q(r.soc, 1e-5);
    ess["mode"] = r.ess_mode;
    f["ess"] = ess;
    double vmin = 0.0;
    double vmax = 0.0;
    bool first = true;
    for (double v : r.bus_v) {
        if (v <= 0) continue;
        vmin = first ? v : std::min(vmin, v);
        vmax = first ? v : std::max(vmax, v);
        first = false;
    }
    f["bus_v_min"] = q(vmin, 1e-5);
    f["bus_v_max"] = q(vmax, 1e-5);
    f["load_kw"] = q(r.load_kw, 1e-2);
    f["losses_kw"] = q(r.losses_kw, 1e-3);
    f["sfoc_fleet"] = q(r.sfoc_fleet, 1e-2);
    f["sfoc_fixed_fleet"] = q(r.sfoc_fixed_fleet, 1e-2);
    ordered_json loads = ordered_json::object();
    for (std::size_t i = 0; i < s.scenario.loads.size(); ++i) {
        const auto& rt = s.load_rt[i];
        double kw = s.load_energized[i] ? std::max(0.0, rt.target_kw - rt.shed_kw) : 0.0;
        loads[s.scenario.loads[i].id] = q(kw, 1e-2);
    }
    f["loads"] = loads;
    ordered_json adv = ordered_json::array();
    if (!s.active.advisory.empty()) {
        ordered_json a;
        a["schedule_id"] = s.active.id;
        a["text"] = s.active.advisory;
        if (s.active.shed) {
            ordered_json entries = ordered_json::object();
            for (const auto& [id, kw] : s.active.shed->entries) entries[id] = q(kw, 1e-2);
            a["shed"] = entries;
            a["insufficient"] = s.active.shed->insufficient;
        }
        adv.push_back(a);
    }
    f["advisories"] = adv;
    ordered_json ev = ordered_json::array();
    for (const auto& e : r.events) {
        ordered_json o;
        o["t"] = q(e.t, 1e-6);
        o["kind"] = e.kind;
        o["detail"] = e.detail;
        if (e.command_seq >= 0) o["command_seq"] = e.command_seq;
        ev.push_back(o);
    }
    f["events"] = ev;
    return f;
}

}  // namespace psv::gateway
