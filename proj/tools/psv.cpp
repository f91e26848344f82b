#include "psv/scenario.hpp"
#include "psv/server.hpp"
#include "psv/session.hpp"
#include "psv/simcore.hpp"
#include "psv/trace.hpp"

#include <CLI11.hpp>

#include <atomic>
#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <thread>

namespace {

using namespace psv;
using namespace psv::gateway;

constexpr int kExitValidation = 64;

enum class Level { Error = 0, Warn = 1, Info = 2, Debug = 3 };

Level log_level() {
    const char* env = std::getenv("PSV_LOG");
    if (!env) return Level::Warn;
    const std::string v(env);
    if (v == "error") return Level::Error;
    if (v == "info") return Level::Info;
    if (v == "debug" || v == "trace") return Level::Debug;
    return Level::Warn;
}

void log(Level level, const std::string& msg) {
    static const Level threshold = log_level();
    if (level > threshold) return;
    static const char* names[] = {"error", "warn", "info", "debug"};
    std::cerr << "psv " << names[static_cast<int>(level)] << ": " << msg << "\n";
}

std::atomic<bool> g_stop{false};

void on_signal(int) { g_stop = true; }

int report_validation(const ScenarioError& e) {
    for (const auto& d : e.diagnostics) std::cerr << d.str() << "\n";
    return kExitValidation;
}

int cmd_validate(const std::string& path) {
    try {
        const auto s = load_scenario(path);
        std::cout << "ok: " << s.name << " (" << s.network.buses.size() << " buses, " << s.fleet.size() << " units, "
                  << s.loads.size() << " loads, " << s.events.size() << " events)\n";
        return 0;
    } catch (const ScenarioError& e) {
        return report_validation(e);
    }
}

struct RunFlags {
    std::string scenario;
    std::string trace_path;
    bool no_trace = false;
    std::optional<double> duration;
    std::optional<int> partitions;
    std::optional<int> workers;
    std::optional<int> decimation;
    bool compare_fixed = false;
    bool audit = false;
};

void dump_state(const simcore::SimState& s) {
    std::cerr << "state at t=" << s.t << " step=" << s.step_index << "\n";
    for (std::size_t i = 0; i < s.units.size(); ++i) {
        const auto& u = s.units[i];
        std::cerr << "  " << s.scenario.fleet[i].id << " p_e=" << u.p_e_kw << " p_set=" << u.p_set_kw
                  << " w=" << u.engine.omega_rpm << " ref=" << u.omega_ref_rpm << " running=" << u.running << "\n";
    }
    for (std::size_t b = 0; b < s.bus_v.size(); ++b) {
        std::cerr << "  " << s.scenario.network.buses[b].id << " v=" << s.bus_v[b] << "\n";
    }
}

int cmd_run(const RunFlags& f) {
    simcore::Scenario scenario;
    try {
        scenario = load_scenario(f.scenario);
    } catch (const ScenarioError& e) {
        return report_validation(e);
    }
    simcore::RunOptions opts;
    opts.partitions = f.partitions;
    opts.workers = f.workers;
    opts.duration = f.duration;
    opts.trace_decimation = f.decimation;
    opts.keep_trace = false;
    const double duration = f.duration.value_or(scenario.sim.duration);
    if (duration <= 0) {
        try {
            (void)simcore::init_state(scenario, opts);
        } catch (const Error& e) {
            std::cerr << f.scenario << ": " << e.what() << "\n";
            return e.kind() == ErrorKind::Validation ? kExitValidation : 1;
        }
        std::cout << "ok: " << scenario.name << " validated, duration 0, no trace written\n";
        return 0;
    }

    std::ofstream trace_file;
    std::unique_ptr<TraceWriter> writer;
    std::vector<std::string> gen_ids;
    std::vector<std::string> bus_ids;
    for (const auto& g : scenario.fleet) gen_ids.push_back(g.id);
    for (const auto& b : scenario.network.buses) bus_ids.push_back(b.id);
    std::string trace_path = f.trace_path;
    if (trace_path.empty() && !f.no_trace) trace_path = scenario.name + ".trace.jsonl";
    if (!trace_path.empty()) {
        trace_file.open(trace_path, std::ios::binary);
        if (!trace_file) {
            std::cerr << "cannot write trace file " << trace_path << "\n";
            return 1;
        }
    }
    static std::ostream null_out(nullptr);
    writer = std::make_unique<TraceWriter>(trace_path.empty() ? null_out : trace_file, gen_ids, bus_ids,
                                           scenario.name);
    opts.on_record = [&](const simcore::SimState&, const simcore::TraceRecord& r) {
        writer->write(r);
        for (const auto& e : r.events) log(Level::Info, "t=" + std::to_string(e.t) + " " + e.kind + " " + e.detail);
        return !g_stop.load();
    };

    simcore::SimResult result;
    try {
        result = simcore::run_scenario(scenario, opts);
    } catch (const Error& e) {
        std::cerr << "simulation halted: " << to_string(e.kind()) << ": " << e.what() << "\n";
        return e.kind() == ErrorKind::Validation ? kExitValidation : 1;
    }

    SummaryOptions so;
    so.compare_fixed_speed = f.compare_fixed;
    std::vector<std::vector<std::string>> rows;
    for (const auto& row : result.schedules) {
        rows.push_back(summary_row(row.t, row.schedule, result.final_state.scenario.fleet, so));
    }
    std::cout << format_table(summary_columns(gen_ids, so), rows);
    if (result.final_state.halted) std::cout << "halted: " << result.final_state.halt_reason << "\n";
    const auto& a = result.audit;
    std::cout << "energy audit: in " << a.input_kj() << " kJ, out " << a.output_kj() << " kJ, relative error "
              << a.relative_error() << "\n";
    if (!trace_path.empty()) std::cout << "trace: " << trace_path << "\n";
    std::cout << "trace digest: " << hex64(writer->digest()) << "\n";
    if (f.audit && a.relative_error() > 0.005) {
        std::cerr << "energy audit outside 0.5%\n";
        dump_state(result.final_state);
        return 1;
    }
    return 0;
}

int cmd_solve(const std::string& path, bool as_json, bool compare_fixed) {
    simcore::Scenario scenario;
    try {
        scenario = load_scenario(path);
    } catch (const ScenarioError& e) {
        return report_validation(e);
    }
    std::vector<CaseRow> rows;
    try {
        rows = solve_case(scenario);
    } catch (const Error& e) {
        std::cerr << path << ": " << to_string(e.kind()) << ": " << e.what() << "\n";
        return e.kind() == ErrorKind::Validation ? kExitValidation : 3;
    }
    int code = 0;
    for (const auto& r : rows) code = std::max(code, exit_code(r.schedule.mode));
    if (as_json) {
        ordered_json j;
        j["case"] = scenario.name;
        ordered_json arr = ordered_json::array();
        for (const auto& r : rows) {
            auto s = schedule_json(r.schedule, scenario.fleet);
            ordered_json o;
            o["row"] = r.label;
            ordered_json loads = ordered_json::object();
            for (std::size_t i = 0; i < r.loads.size(); ++i) loads[r.loads[i]] = r.load_kw[i];
            o["loads"] = loads;
            o["schedule"] = s;
            arr.push_back(o);
        }
        j["rows"] = arr;
        j["exit_code"] = code;
        std::cout << j.dump(2) << "\n";
        return code;
    }
    SummaryOptions so;
    so.compare_fixed_speed = compare_fixed;
    std::vector<std::string> gen_ids;
    for (const auto& g : scenario.fleet) gen_ids.push_back(g.id);
    auto cols = summary_columns(gen_ids, so);
    cols[0] = "row";
    std::vector<std::vector<std::string>> table;
    for (const auto& r : rows) {
        auto line = summary_row(0.0, r.schedule, scenario.fleet, so);
        line[0] = r.label;
        table.push_back(line);
    }
    std::cout << scenario.name << "\n" << format_table(cols, table);
    for (const auto& r : rows) {
        if (!r.schedule.advisory.empty()) std::cout << r.label << " advisory: " << r.schedule.advisory << "\n";
        for (const auto& v : r.schedule.violations.items) {
            std::cout << r.label << " violation: " << grid::to_string(v.kind) << " " << v.element << " " << v.value
                      << " vs " << v.limit << "\n";
        }
        for (const auto& v : r.schedule.warnings.items) {
            std::cout << r.label << " warning: " << grid::to_string(v.kind) << " " << v.element << " " << v.value
                      << " > " << v.limit << "\n";
        }
    }
    return code;
}

struct ServeFlags {
    std::string scenario;
    std::string host = "127.0.0.1";
    int port = 8080;
    std::optional<double> realtime;
    std::optional<double> duration;
    std::string trace_path;
    bool exit_when_done = false;
};

int cmd_serve(const ServeFlags& f) {
    simcore::Scenario scenario;
    try {
        scenario = load_scenario(f.scenario);
    } catch (const ScenarioError& e) {
        return report_validation(e);
    }
    scenario.sim.realtime_factor = f.realtime.value_or(scenario.sim.realtime_factor > 0 ? scenario.sim.realtime_factor : 1.0);
    simcore::RunOptions ro;
    ro.duration = f.duration;
    std::ofstream trace_file;
    SessionOptions so;
    if (!f.trace_path.empty()) {
        trace_file.open(f.trace_path, std::ios::binary);
        so.trace_out = &trace_file;
    }
    std::unique_ptr<Session> session;
    try {
        session = std::make_unique<Session>(scenario, ro, so);
    } catch (const Error& e) {
        std::cerr << e.what() << "\n";
        return e.kind() == ErrorKind::Validation ? kExitValidation : 1;
    }
    Server server(*session, ServeOptions{f.host, static_cast<unsigned short>(f.port)});
    unsigned short port = 0;
    try {
        port = server.start();
    } catch (const std::exception& e) {
        std::cerr << "cannot listen on " << f.host << ":" << f.port << ": " << e.what() << "\n";
        return 1;
    }
    std::cout << "serving " << scenario.name << " on http://" << f.host << ":" << port << "/" << std::endl;
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    session->run(g_stop);
    if (!f.exit_when_done) {
        while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(50));
    }
    server.stop();
    std::cout << "session ended at t=" << session->time() << " s, trace digest " << hex64(session->trace_digest())
              << std::endl;
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"DC platform supply vessel power-system simulator"};
    app.require_subcommand(1);

    RunFlags rf;
    auto* run = app.add_subcommand("run", "Run a scenario and write its trace");
    run->add_option("scenario", rf.scenario, "Scenario file")->required();
    run->add_option("--trace", rf.trace_path, "Trace output (default <name>.trace.jsonl)");
    run->add_flag("--no-trace", rf.no_trace, "Do not write a trace file");
    run->add_option("--duration", rf.duration, "Override the run duration [s]; 0 validates only");
    run->add_option("--partitions", rf.partitions, "Network partitions")->check(CLI::PositiveNumber);
    run->add_option("--workers", rf.workers, "Worker threads")->check(CLI::PositiveNumber);
    run->add_option("--decimation", rf.decimation, "Record every n-th step")->check(CLI::PositiveNumber);
    run->add_flag("--compare-fixed-speed", rf.compare_fixed, "Add 1800 rpm SFOC columns");
    run->add_flag("--audit", rf.audit, "Fail when the energy audit exceeds 0.5%");

    std::string solve_path;
    bool solve_json = false;
    bool solve_fixed = false;
    auto* solve = app.add_subcommand("solve", "One-shot dispatch of a case file");
    solve->add_option("case", solve_path, "Case or scenario file")->required();
    solve->add_flag("--json", solve_json, "Machine-readable output");
    solve->add_flag("--compare-fixed-speed", solve_fixed, "Add 1800 rpm SFOC columns");

    ServeFlags sf;
    auto* serve = app.add_subcommand("serve", "Live session with the operator console");
    serve->add_option("scenario", sf.scenario, "Scenario file")->required();
    serve->add_option("--host", sf.host, "Bind address");
    serve->add_option("--port", sf.port, "TCP port, 0 picks one");
    serve->add_option("--realtime", sf.realtime, "Wall-clock factor, 0 = unpaced");
    serve->add_option("--duration", sf.duration, "Override the run duration [s]");
    serve->add_option("--trace", sf.trace_path, "Full-rate trace output");
    serve->add_flag("--exit-when-done", sf.exit_when_done, "Stop serving when the run ends");

    std::string validate_path;
    auto* validate = app.add_subcommand("validate", "Check a scenario file");
    validate->add_option("scenario", validate_path, "Scenario file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : kExitValidation;
    }

    try {
        if (*run) return cmd_run(rf);
        if (*solve) return cmd_solve(solve_path, solve_json, solve_fixed);
        if (*serve) return cmd_serve(sf);
        if (*validate) return cmd_validate(validate_path);
    } catch (const ScenarioError& e) {
        return report_validation(e);
    } catch (const std::exception& e) {
        std::cerr << "psv: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
