#include "support.hpp"

#include "psv/errors.hpp"
#include "psv/simcore.hpp"
#include "psv/trace.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

using namespace psv;
using namespace psv::simcore;

namespace {

std::string trace_text(const SimResult& r, const std::string& name) {
    std::ostringstream out;
    gateway::write_trace(out, r.trace, name);
    return out.str();
}

grid::Bus bus(const std::string& id, grid::BusKind kind) {
    grid::Bus b;
    b.id = id;
    b.kind = kind;
    b.v_min = 0.90;
    b.v_max = 1.10;
    return b;
}

grid::Branch branch(const std::string& id, const std::string& a, const std::string& b) {
    grid::Branch br;
    br.id = id;
    br.from_bus = a;
    br.to_bus = b;
    br.r_mohm = 1.0;
    br.rating_kva = 4096;
    return br;
}

std::size_t gen_index(const SimTrace& t, const std::string& id) {
    return static_cast<std::size_t>(std::find(t.gen_ids.begin(), t.gen_ids.end(), id) - t.gen_ids.begin());
}

}  // namespace

TEST_CASE("a single partition holds every bus and no couplings") {
    const auto n = gateway::load_network(test::source_dir() / "scenarios" / "network.json");
    const auto parts = partition(n, 1);
    REQUIRE(parts.size() == 1);
    CHECK(parts[0].buses.size() == 20);
    CHECK(parts[0].links.empty());
}

TEST_CASE("three partitions cover the network once and couple every cut branch") {
    const auto n = gateway::load_network(test::source_dir() / "scenarios" / "network.json");
    const auto parts = partition(n, 3);
    REQUIRE(parts.size() == 3);
    std::set<std::string> seen;
    std::map<std::string, int> owner;
    for (const auto& p : parts) {
        CHECK_FALSE(p.buses.empty());
        for (const auto& b : p.buses) {
            CHECK(seen.insert(b).second);
            owner[b] = p.id;
        }
    }
    CHECK(seen.size() == 20);
    std::set<std::string> linked;
    for (const auto& p : parts) {
        for (const auto& l : p.links) {
            CHECK(owner[l.bus_a] == l.part_a);
            CHECK(owner[l.bus_b] == l.part_b);
            CHECK(l.part_a != l.part_b);
            CHECK(l.r_ohm > 0.0);
            linked.insert(l.branch);
        }
    }
    for (const auto& br : n.branches) {
        CHECK((owner[br.from_bus] != owner[br.to_bus]) == (linked.count(br.id) == 1));
    }
}

TEST_CASE("a dumbbell splits at its bridge") {
    grid::NetworkModel n;
    n.buses = {bus("A1", grid::BusKind::Generator), bus("A2", grid::BusKind::Load), bus("A3", grid::BusKind::Load),
               bus("B1", grid::BusKind::Generator), bus("B2", grid::BusKind::Load), bus("B3", grid::BusKind::Load)};
    n.branches = {branch("a12", "A1", "A2"), branch("a23", "A2", "A3"), branch("a31", "A3", "A1"),
                  branch("b12", "B1", "B2"), branch("b23", "B2", "B3"), branch("b31", "B3", "B1"),
                  branch("bridge", "A3", "B2")};
    const auto parts = partition(n, 2);
    REQUIRE(parts.size() == 2);
    std::set<std::string> cut;
    for (const auto& p : parts) {
        CHECK(p.buses.size() == 3);
        for (const auto& l : p.links) cut.insert(l.branch);
    }
    CHECK(cut == std::set<std::string>{"bridge"});
}

TEST_CASE("partition hints group buses explicitly") {
    const auto n = gateway::load_network(test::source_dir() / "scenarios" / "network.json");
    const std::vector<std::vector<std::string>> hint = {
        {"B1", "B4", "B3", "B5", "B9", "B8", "B10"}, {"B2", "B6", "B7", "B11"}, {"B13", "B14", "B17"}};
    const auto parts = partition(n, 3, hint);
    REQUIRE(parts.size() == 3);
    auto holder = [&](const std::string& b) {
        for (const auto& p : parts) {
            if (std::find(p.buses.begin(), p.buses.end(), b) != p.buses.end()) return p.id;
        }
        return -1;
    };
    for (const auto& b : hint[0]) CHECK(holder(b) == holder("B1"));
    for (const auto& b : hint[1]) CHECK(holder(b) == holder("B2"));
    for (const auto& b : hint[2]) CHECK(holder(b) == holder("B14"));
    CHECK(holder("B1") != holder("B2"));
    CHECK(holder("B1") != holder("B14"));
}

TEST_CASE("runs are deterministic") {
    const auto sc = test::scenario("case2a");
    RunOptions o;
    o.duration = 2.0;
    const auto a = run_scenario(sc, o);
    const auto b = run_scenario(sc, o);
    CHECK(trace_text(a, sc.name) == trace_text(b, sc.name));
}

TEST_CASE("worker count does not change a partitioned trace") {
    const auto sc = test::scenario("case1a");
    RunOptions o;
    o.duration = 2.0;
    o.partitions = 3;
    o.workers = 1;
    const auto one = trace_text(run_scenario(sc, o), sc.name);
    o.workers = 3;
    const auto three = trace_text(run_scenario(sc, o), sc.name);
    CHECK(one == three);
    CHECK(gateway::fnv1a(one) == gateway::fnv1a(three));
}

TEST_CASE("partitioned and monolithic runs agree on bus voltages") {
    const auto sc = test::scenario("case1a");
    RunOptions o;
    o.duration = 5.0;
    const auto mono = run_scenario(sc, o);
    o.partitions = 3;
    const auto split = run_scenario(sc, o);
    REQUIRE(mono.trace.records.size() == split.trace.records.size());
    double worst = 0.0;
    for (std::size_t i = 0; i < mono.trace.records.size(); ++i) {
        const auto& a = mono.trace.records[i].bus_v;
        const auto& b = split.trace.records[i].bus_v;
        REQUIRE(a.size() == b.size());
        for (std::size_t k = 0; k < a.size(); ++k) worst = std::max(worst, std::abs(a[k] - b[k]));
    }
    CHECK(worst <= 1e-3);
}

TEST_CASE("events at the same instant apply in queue order at a step boundary") {
    auto sc = test::scenario("case1a");
    sc.events.clear();
    auto st = init_state(sc);
    ContingencyEvent first;
    first.at = 0.0105;
    first.target = "TT1";
    first.loads = {{"TT1", 500.0}};
    ContingencyEvent second = first;
    second.loads = {{"TT1", 600.0}};
    inject(st, first);
    inject(st, second);

    std::vector<TraceEvent> seen;
    double first_t = -1.0;
    for (int i = 0; i < 20; ++i) {
        const auto rec = step(st);
        for (const auto& e : rec.events) {
            if (e.kind != "load-step") continue;
            if (first_t < 0) first_t = rec.t;
            seen.push_back(e);
        }
    }
    REQUIRE(seen.size() == 2);
    CHECK(seen[0].t == seen[1].t);
    CHECK(first_t >= 0.0105);
    CHECK(first_t < 0.0105 + st.dt + 1e-12);
    CHECK(seen[0].detail.find("500") != std::string::npos);
    CHECK(seen[1].detail.find("600") != std::string::npos);
    for (std::size_t i = 0; i < st.scenario.loads.size(); ++i) {
        if (st.scenario.loads[i].id == "TT1") CHECK(st.load_rt[i].target_kw == doctest::Approx(600));
    }

    ContingencyEvent bad;
    bad.kind = EventKind::GenTrip;
    bad.target = "G9";
    CHECK_THROWS_AS(inject(st, bad), Error);
}

TEST_CASE("isolating bus 2 stops its units in the trace") {
    const auto sc = test::scenario("case9");
    const auto r = run_scenario(sc);
    const auto& t = r.trace;
    const auto g2 = gen_index(t, "G2");
    const auto g4 = gen_index(t, "G4");
    const auto g1 = gen_index(t, "G1");
    bool marked = false;
    for (const auto& rec : t.records) {
        for (const auto& e : rec.events) marked = marked || e.kind == "bus-isolation";
        if (rec.t < 1.6) continue;
        CHECK(rec.gens[g2].p_kw == doctest::Approx(0.0));
        CHECK(rec.gens[g4].p_kw == doctest::Approx(0.0));
        CHECK(rec.gens[g1].p_kw > 0.0);
    }
    CHECK(marked);
}

TEST_CASE("energy audit closes for every bundled scenario") {
    for (const auto& entry : std::filesystem::directory_iterator(test::source_dir() / "scenarios")) {
        const auto name = entry.path().stem().string();
        if (name == "network") continue;
        CAPTURE(name);
        RunOptions o;
        o.keep_trace = false;
        const auto r = run_scenario(gateway::load_scenario(entry.path()), o);
        CHECK(r.audit.input_kj() > 0.0);
        CHECK(r.audit.relative_error() <= 0.005);
    }
}

TEST_CASE("case 8A withdraws the ESS along a falling SFOC path") {
    const auto r = run_scenario(test::scenario("case8a"));
    bool passed_point = false;
    double t_point = -1.0;
    for (const auto& rec : r.trace.records) {
        if (std::fmod(rec.t, 1.0) < 0.02) continue;  // pulse windows
        if (!passed_point && rec.t > 2.0 && std::abs(rec.ess_p_kw - 400) <= 50 && std::abs(rec.sfoc_fleet - 200) <= 3) {
            passed_point = true;
            t_point = rec.t;
        }
    }
    CHECK(passed_point);
    const auto& last = r.trace.records.back();
    CHECK(last.t > t_point);
    CHECK(std::abs(last.ess_p_kw) <= 5.0);
    CHECK(last.sfoc_fleet == doctest::Approx(197).epsilon(3.0 / 197));
    for (const auto& g : last.gens) CHECK(g.p_kw == doctest::Approx(1224.86).epsilon(0.05));
}

TEST_CASE("fixed-speed penalty in low-load dynamic positioning") {
    const auto r = run_scenario(test::scenario("dp-low"));
    const auto& last = r.trace.records.back();
    CHECK(fixed_speed_penalty(last) == doctest::Approx(0.19).epsilon(0.04 / 0.19));
}
