#include "support.hpp"

#include "psv/errors.hpp"
#include "psv/scenario.hpp"
#include "psv/server.hpp"
#include "psv/session.hpp"
#include "psv/trace.hpp"

#include <doctest.h>

#include <boost/asio/connect.hpp>
#include <boost/asio/ip/tcp.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>

#include <atomic>
#include <chrono>
#include <fstream>
#include <sstream>
#include <thread>

using namespace psv;
using namespace psv::gateway;
using json = nlohmann::json;

namespace {

std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

int line_of(const std::string& text, const std::string& needle) {
    const auto pos = text.find(needle);
    if (pos == std::string::npos) return 0;
    return 1 + static_cast<int>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(pos), '\n'));
}

std::vector<Diagnostic> diagnostics_of(const std::string& text) {
    try {
        parse_scenario(text, test::source_dir() / "scenarios", "bad.json");
    } catch (const ScenarioError& e) {
        return e.diagnostics;
    }
    return {};
}

simcore::Scenario short_case(double duration) {
    auto sc = test::scenario("case1a");
    sc.sim.duration = duration;
    return sc;
}

Command command(CommandKind kind, std::int64_t seq, json payload = json::object(), std::string client = "ops") {
    Command c;
    c.kind = kind;
    c.seq = seq;
    c.payload = std::move(payload);
    c.client = std::move(client);
    return c;
}

std::vector<json> lines(const std::string& text) {
    std::vector<json> out;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) out.push_back(json::parse(line));
    return out;
}

}  // namespace

TEST_CASE("scenario errors point at the offending line and field") {
    auto text = read_file(test::scenario_path("case1a"));
    const std::string needle = "\"bus\": \"B2\"";
    const auto at = text.find(needle);
    REQUIRE(at != std::string::npos);
    text.replace(at, needle.size(), "\"bus\": \"B99\"");
    const auto d = diagnostics_of(text);
    REQUIRE_FALSE(d.empty());
    CHECK(d[0].line == line_of(text, "\"B99\""));
    CHECK(d[0].field.find("/fleet/") == 0);
    CHECK(d[0].message.find("B99") != std::string::npos);
    CHECK(d[0].str().find("bad.json:") == 0);
}

TEST_CASE("scenario syntax errors carry a position") {
    const auto d = diagnostics_of("{\n  \"name\": \"x\",\n  \"fleet\": [\n}\n");
    REQUIRE(d.size() == 1);
    CHECK(d[0].line == 4);
    CHECK(d[0].field.empty());
}

TEST_CASE("scenario validation collects several problems") {
    auto text = read_file(test::scenario_path("case1a"));
    auto j = json::parse(text);
    j["sim"]["dt"] = -1.0;
    j["loads"][0]["class"] = "teleporter";
    const auto d = diagnostics_of(j.dump(2));
    CHECK(d.size() >= 2);
    for (const auto& x : d) CHECK(x.line > 0);
}

TEST_CASE("command parsing") {
    const auto ok = parse_command(R"({"kind":"set_mission","seq":3,"client":"a","payload":{"mission":"at-port"}})");
    REQUIRE(std::holds_alternative<Command>(ok));
    const auto& c = std::get<Command>(ok);
    CHECK(c.kind == CommandKind::SetMission);
    CHECK(c.seq == 3);
    CHECK(c.client == "a");
    CHECK(c.payload.at("mission") == "at-port");

    auto reason = [](const std::string& text) {
        const auto r = parse_command(text);
        return std::holds_alternative<std::string>(r) ? std::get<std::string>(r) : std::string();
    };
    CHECK(reason("{").find("malformed") != std::string::npos);
    CHECK(reason("[1]").find("object") != std::string::npos);
    CHECK(reason(R"({"seq":1})").find("kind") != std::string::npos);
    CHECK(reason(R"({"kind":"warp","seq":1})").find("unknown") != std::string::npos);
    CHECK(reason(R"({"kind":"pause"})").find("seq") != std::string::npos);
    CHECK(reason(R"({"kind":"pause","seq":1.5})").find("seq") != std::string::npos);
    CHECK(reason(R"({"kind":"pause","seq":1,"payload":3})").find("payload") != std::string::npos);
    for (auto k : {CommandKind::SetMission, CommandKind::InjectEvent, CommandKind::ApproveShed, CommandKind::SetLoad,
                   CommandKind::Pause, CommandKind::Resume, CommandKind::Snapshot}) {
        CHECK(command_kind_from_string(to_string(k)) == k);
    }
}

TEST_CASE("frame queue drops the oldest frame when full") {
    FrameQueue q(3);
    for (int i = 0; i < 5; ++i) q.push(std::to_string(i));
    CHECK(q.dropped() == 2);
    CHECK(q.pop(0) == "2");
    CHECK(q.pop(0) == "3");
    CHECK(q.pop(0) == "4");
    CHECK_FALSE(q.pop(0).has_value());
    q.close();
    q.push("x");
    CHECK_FALSE(q.pop(0).has_value());
}

TEST_CASE("session acknowledges commands at the next step boundary") {
    Session s(short_case(0.2));
    const auto first = s.submit(command(CommandKind::SetLoad, 1, {{"loads", {{"TT1", 500.0}}}}));
    CHECK(first.ok);
    CHECK(s.acks().empty());
    REQUIRE(s.tick());
    auto acks = s.acks();
    REQUIRE(acks.size() == 1);
    CHECK(acks[0].ok);
    CHECK(acks[0].seq == 1);
    CHECK(acks[0].applied_t == doctest::Approx(0.0));
    CHECK(acks[0].to_json().at("type") == "ack");

    // Replayed or stale sequence numbers are refused at once.
    const auto again = s.submit(command(CommandKind::Pause, 1));
    CHECK_FALSE(again.ok);
    CHECK(again.reason.find("sequence") != std::string::npos);
    CHECK_FALSE(s.submit(command(CommandKind::Pause, 0)).ok);
    CHECK(s.acks().back().to_json().at("type") == "nack");
    // Sequences are per client.
    CHECK(s.submit(command(CommandKind::Snapshot, 1, json::object(), "other")).ok);

    // Unknown targets fail when applied.
    CHECK(s.submit(command(CommandKind::SetLoad, 2, {{"loads", {{"NOPE", 1.0}}}})).ok);
    REQUIRE(s.tick());
    acks = s.acks();
    bool snapshot_seen = false;
    bool nope_refused = false;
    for (const auto& a : acks) {
        if (a.kind == "snapshot" && a.ok) snapshot_seen = a.data.contains("t") && a.data.contains("schedule");
        if (a.seq == 2 && a.client == "ops") nope_refused = !a.ok && a.reason.find("NOPE") != std::string::npos;
    }
    CHECK(snapshot_seen);
    CHECK(nope_refused);
}

TEST_CASE("pause holds simulated time until resume") {
    Session s(short_case(0.2));
    REQUIRE(s.tick());
    s.submit(command(CommandKind::Pause, 1));
    s.tick();
    CHECK(s.paused());
    const double t = s.time();
    for (int i = 0; i < 5; ++i) s.tick();
    CHECK(s.time() == t);
    s.submit(command(CommandKind::Resume, 2));
    s.tick();
    CHECK_FALSE(s.paused());
    CHECK(s.time() > t);
}

TEST_CASE("each applied command is noted once in the trace") {
    std::ostringstream trace;
    SessionOptions o;
    o.trace_out = &trace;
    Session s(short_case(0.1), {}, o);
    s.submit(command(CommandKind::SetMission, 1, {{"mission", "at-port"}}));
    s.submit(command(CommandKind::InjectEvent, 2, {{"type", "bus-isolation"}, {"bus", "B2"}}));
    s.submit(command(CommandKind::Snapshot, 3));
    while (s.tick()) {
    }
    std::map<std::int64_t, int> notes;
    for (const auto& rec : lines(trace.str())) {
        if (!rec.contains("events")) continue;
        for (const auto& e : rec.at("events")) {
            if (e.contains("command_seq")) ++notes[e.at("command_seq").get<std::int64_t>()];
        }
    }
    CHECK(notes == std::map<std::int64_t, int>{{1, 1}, {2, 1}, {3, 1}});
    CHECK(s.command_events().size() == 1);  // snapshot; the others surface as their events
    CHECK(fnv1a(trace.str()) == s.trace_digest());
}

TEST_CASE("an undisturbed session records the batch trace") {
    std::ostringstream live;
    SessionOptions o;
    o.trace_out = &live;
    const auto sc = short_case(0.3);
    Session s(sc, {}, o);
    while (s.tick()) {
    }
    simcore::RunOptions r;
    r.trace_decimation = 1;
    std::ostringstream batch;
    write_trace(batch, simcore::run_scenario(sc, r).trace, sc.name);
    CHECK(live.str() == batch.str());
}

TEST_CASE("trace header and record layout") {
    const auto sc = short_case(0.05);
    const auto run = simcore::run_scenario(sc);
    std::ostringstream out;
    write_trace(out, run.trace, sc.name);
    const auto rows = lines(out.str());
    REQUIRE(rows.size() == run.trace.records.size() + 1);
    CHECK(rows[0].at("schema") == "psv-trace");
    CHECK(rows[0].at("version") == kTraceVersion);
    CHECK(rows[0].at("gen_ids").size() == 4);
    CHECK(rows[0].at("bus_ids").size() == 20);
    const auto& r = rows[1];
    const auto first_line = out.str().substr(out.str().find('\n') + 1);
    CHECK(first_line.find("{\"t\":") == 0);
    CHECK(first_line.find("\"schedule_id\"") < first_line.find("\"gens\""));
    CHECK(r.at("gens").size() == 4);
    CHECK(r.at("bus_v").size() == 20);

    CHECK(fnv1a("") == 14695981039346656037ull);
    CHECK(fnv1a("a") == 0xaf63dc4c8601ec8cull);
    CHECK(hex64(0xabcull) == "0000000000000abc");
}

TEST_CASE("telemetry frames carry the schema version") {
    Session s(short_case(0.2));
    while (s.latest_frame().empty() && s.tick()) {
    }
    const auto f = json::parse(s.latest_frame());
    CHECK(f.at("type") == "telemetry");
    CHECK(f.at("version") == kTelemetryVersion);
    CHECK(f.at("gens").size() == 4);
    for (const char* k : {"seq", "t", "mission", "mode", "ess", "bus_v_min", "bus_v_max", "sfoc_fleet", "events"}) {
        CHECK(f.contains(k));
    }
}

TEST_CASE("server answers HTTP and round-trips commands over WebSocket") {
    namespace beast = boost::beast;
    namespace http = beast::http;
    namespace websocket = beast::websocket;
    namespace net = boost::asio;
    using tcp = net::ip::tcp;

    Session session(short_case(30.0));
    while (session.latest_frame().empty()) session.tick();
    Server server(session, {"127.0.0.1", 0});
    const auto port = server.start();
    REQUIRE(port != 0);

    std::atomic<bool> stop{false};
    std::thread sim([&] {
        while (!stop && session.tick()) std::this_thread::sleep_for(std::chrono::microseconds(200));
    });

    net::io_context ioc;
    auto get = [&](const std::string& target) {
        tcp::socket sock(ioc);
        sock.connect({net::ip::make_address("127.0.0.1"), port});
        http::request<http::empty_body> req{http::verb::get, target, 11};
        req.set(http::field::host, "127.0.0.1");
        http::write(sock, req);
        beast::flat_buffer buf;
        http::response<http::string_body> res;
        http::read(sock, buf, res);
        return res;
    };
    const auto snap = get("/snapshot");
    CHECK(snap.result() == http::status::ok);
    CHECK(json::parse(snap.body()).at("type") == "telemetry");
    CHECK(get("/").body().find("<title>") != std::string::npos);
    CHECK(get("/missing").result() == http::status::not_found);

    websocket::stream<tcp::socket> ws(ioc);
    ws.next_layer().connect({net::ip::make_address("127.0.0.1"), port});
    ws.handshake("127.0.0.1", "/ws?client=tester");
    auto next = [&]() {
        beast::flat_buffer buf;
        ws.read(buf);
        return json::parse(beast::buffers_to_string(buf.data()));
    };
    CHECK(next().at("type") == "telemetry");

    auto await = [&](const std::string& type, std::int64_t seq) {
        for (int i = 0; i < 2000; ++i) {
            const auto m = next();
            if (m.at("type") == type && m.at("seq") == seq) return m;
        }
        return json();
    };
    ws.write(net::buffer(std::string(R"({"kind":"set_load","seq":1,"payload":{"loads":{"TT1":500}}})")));
    const auto ack = await("ack", 1);
    REQUIRE_FALSE(ack.is_null());
    CHECK(ack.at("client") == "tester");
    CHECK(ack.at("applied_t").get<double>() >= 0.0);

    ws.write(net::buffer(std::string(R"({"kind":"pause","seq":1})")));
    const auto nack = await("nack", 1);
    REQUIRE_FALSE(nack.is_null());
    CHECK(nack.at("reason").get<std::string>().find("sequence") != std::string::npos);

    ws.write(net::buffer(std::string("{")));
    const auto bad = await("nack", -1);
    REQUIRE_FALSE(bad.is_null());
    CHECK(bad.at("reason").get<std::string>().find("malformed") != std::string::npos);

    beast::error_code ec;
    ws.close(websocket::close_code::normal, ec);
    stop = true;
    sim.join();
    server.stop();
}
