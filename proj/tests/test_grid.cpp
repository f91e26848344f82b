#include "support.hpp"

#include "psv/errors.hpp"
#include "psv/grid.hpp"
#include "psv/scenario.hpp"

#include <doctest.h>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

using namespace psv;
using namespace psv::grid;

namespace {

Bus bus(const std::string& id, BusKind kind, double v_set = 1.0) {
    Bus b;
    b.id = id;
    b.kind = kind;
    b.v_setpoint = v_set;
    b.v_min = 0.90;
    b.v_max = 1.10;
    if (kind == BusKind::Generator) b.p_max_kw = 4096;
    if (kind == BusKind::Load) b.p_max_kw = -3000;
    return b;
}

Branch branch(const std::string& id, const std::string& a, const std::string& b, double r, double rating = 4096) {
    Branch br;
    br.id = id;
    br.from_bus = a;
    br.to_bus = b;
    br.r_mohm = r;
    br.rating_kva = rating;
    return br;
}

NetworkModel two_bus(double r_mohm) {
    NetworkModel n;
    n.buses = {bus("B1", BusKind::Generator), bus("B2", BusKind::Load)};
    n.branches = {branch("L1", "B1", "B2", r_mohm)};
    return n;
}

NetworkModel psv_network() { return gateway::load_network(test::source_dir() / "scenarios" / "network.json"); }

int rank(const Eigen::MatrixXd& m) { return static_cast<int>(Eigen::FullPivLU<Eigen::MatrixXd>(m).rank()); }

}  // namespace

TEST_CASE("incidence of a single branch") {
    const auto a = build_incidence(two_bus(1.0));
    REQUIRE(a.a.rows() == 1);
    REQUIRE(a.a.cols() == 2);
    CHECK(a.a(0, 0) == 1.0);
    CHECK(a.a(0, 1) == -1.0);
}

TEST_CASE("incidence of the vessel network") {
    const auto n = psv_network();
    const auto a = build_incidence(n);
    CHECK(a.a.rows() == 21);
    CHECK(a.a.cols() == 20);
    for (Eigen::Index r = 0; r < a.a.rows(); ++r) CHECK(a.a.row(r).sum() == 0.0);
    CHECK(rank(a.a) == 20 - 1);
}

TEST_CASE("incidence rank counts independent cycles") {
    NetworkModel n;
    n.buses = {bus("B1", BusKind::Generator), bus("B2", BusKind::Load), bus("B3", BusKind::Load)};
    n.branches = {branch("L1", "B1", "B2", 1), branch("L2", "B2", "B3", 1), branch("L3", "B3", "B1", 1)};
    CHECK(rank(build_incidence(n).a) == 2);
}

TEST_CASE("dangling branch endpoints are model errors") {
    auto n = two_bus(1.0);
    n.branches.push_back(branch("L2", "B2", "B9", 1.0));
    CHECK_THROWS_AS(build_incidence(n), Error);
    CHECK_THROWS_AS(n.validate(), Error);
}

TEST_CASE("isolating bus 2 splits the network and the incidence rank") {
    auto n = psv_network();
    n.isolated_buses.insert("B2");
    const auto islands = find_islands(n);
    int live = 0;
    for (const auto& i : islands) {
        if (i.buses.size() == 1 && n.buses[i.buses[0]].id == "B2") continue;
        ++live;
        REQUIRE(i.slack.has_value());
        CHECK(n.buses[*i.slack].id == "B1");
    }
    CHECK(live == 1);
    CHECK(rank(build_incidence(n).a) == 20 - static_cast<int>(islands.size()));

    // Cut the ring between the two generator sections.
    auto m = psv_network();
    m.open_branches = {"L5", "L10", "L15"};
    const auto parts = find_islands(m);
    CHECK(parts.size() == 2);
    CHECK(rank(build_incidence(m).a) == 20 - 2);
}

TEST_CASE("Z-bus of a single slack bus and of a two-bus line") {
    NetworkModel one;
    one.buses = {bus("B1", BusKind::Generator)};
    const auto z1 = build_zbus(one, 1.0);
    REQUIRE(z1.islands.size() == 1);
    CHECK(z1.islands[0].z_mohm.rows() == 1);
    CHECK(z1.islands[0].z_mohm(0, 0) == doctest::Approx(1.0));

    const auto z2 = build_zbus(two_bus(0.48), 1.0);
    const auto& z = z2.islands[0].z_mohm;
    CHECK(z(0, 1) == doctest::Approx(1.0));
    CHECK(z(1, 0) == doctest::Approx(1.0));
    CHECK(z(1, 1) == doctest::Approx(1.48));
    CHECK(z.isApprox(z.transpose()));
}

TEST_CASE("Z-bus keeps one block per island after a bus fault") {
    auto n = psv_network();
    n.open_branches = {"L5", "L10", "L15"};
    const auto z = build_zbus(n);
    REQUIRE(z.islands.size() == 2);
    std::size_t total = 0;
    for (const auto& b : z.islands) {
        total += b.buses.size();
        CHECK(b.z_mohm.isApprox(b.z_mohm.transpose()));
        CHECK(Eigen::LLT<Eigen::MatrixXd>(b.z_mohm).info() == Eigen::Success);
    }
    CHECK(total == 20);

    NetworkModel floating;
    floating.buses = {bus("B1", BusKind::Load), bus("B2", BusKind::Load)};
    floating.branches = {branch("L1", "B1", "B2", 1.0)};
    CHECK_THROWS_AS(build_zbus(floating), Error);
}

TEST_CASE("zero injections give a flat profile") {
    const auto n = psv_network();
    const auto f = dc_power_flow(n, std::vector<double>(20, 0.0));
    CHECK(f.converged);
    CHECK(f.total_losses == doctest::Approx(0.0));
    for (double q : f.branch_flows) CHECK(q == doctest::Approx(0.0));
    for (double v : f.bus_voltages) CHECK(v == doctest::Approx(1.05));
}

TEST_CASE("two-bus flow matches the closed-form divider") {
    const double r = 1.5e-3;  // ohm
    const double v1 = 1500.0;
    const double p = 1000e3;
    const double v2 = (v1 + std::sqrt(v1 * v1 - 4.0 * r * p)) / 2.0;
    const double loss = (v1 - v2) * (v1 - v2) / r;

    const auto f = dc_power_flow(two_bus(1.5), {0.0, -1000.0}, FlowOptions{.tolerance_kw = 1e-6});
    CHECK(f.converged);
    CHECK(f.bus_voltages[1] * 1500.0 == doctest::Approx(v2).epsilon(1e-9));
    CHECK(f.total_losses == doctest::Approx(loss / 1e3).epsilon(1e-6));
    CHECK(f.bus_injections[0] == doctest::Approx(1000.0 + loss / 1e3).epsilon(1e-9));
    CHECK(std::abs(balance_residual_kw(f)) < 1e-6);
}

TEST_CASE("contingency-table injections keep buses inside their bands") {
    const auto sc = test::scenario("case1a");
    const auto& n = sc.network;
    std::vector<double> inj(n.buses.size(), 0.0);
    for (const auto& l : sc.loads) inj[n.bus_index(l.bus)] -= loads::dc_draw_kw(l);
    inj[n.bus_index("B2")] += 2 * 949.0;  // B1 is the slack and carries G1 and G3
    const auto f = dc_power_flow(n, inj);
    CHECK(f.converged);
    for (std::size_t i = 0; i < n.buses.size(); ++i) {
        CAPTURE(n.buses[i].id);
        CHECK(f.bus_voltages[i] >= n.buses[i].v_min);
        CHECK(f.bus_voltages[i] <= n.buses[i].v_max);
    }
    CHECK(f.bus_injections[n.bus_index("B1")] == doctest::Approx(2 * 949.0).epsilon(0.02));
    CHECK(std::abs(balance_residual_kw(f)) < 0.1);
}

TEST_CASE("power flow is invariant under bus reordering") {
    const auto n = psv_network();
    std::vector<double> inj(20, 0.0);
    inj[n.bus_index("B3")] = -900;
    inj[n.bus_index("B16")] = -400;
    inj[n.bus_index("B2")] = 700;
    inj[n.bus_index("B14")] = 150;
    const auto f = dc_power_flow(n, inj);

    auto r = n;
    std::reverse(r.buses.begin(), r.buses.end());
    std::vector<double> rinj(20, 0.0);
    for (std::size_t i = 0; i < 20; ++i) rinj[r.bus_index(n.buses[i].id)] = inj[i];
    const auto g = dc_power_flow(r, rinj, FlowOptions{.sources = {"B1"}});
    for (std::size_t i = 0; i < 20; ++i) {
        CHECK(g.bus_voltages[r.bus_index(n.buses[i].id)] == doctest::Approx(f.bus_voltages[i]).epsilon(1e-9));
    }
    CHECK(g.total_losses == doctest::Approx(f.total_losses));
}

TEST_CASE("loaded island without a source is an islanding error") {
    auto n = two_bus(1.0);
    n.isolated_buses.insert("B1");
    try {
        dc_power_flow(n, {0.0, -100.0});
        FAIL("expected an islanding error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::Islanding);
    }
}

TEST_CASE("overloaded line fails to converge and reports its best residual") {
    // 1500^2 / (4 * 10 mohm) = 56 MW is the transfer limit.
    try {
        dc_power_flow(two_bus(10.0), {0.0, -80000.0});
        FAIL("expected a numeric error");
    } catch (const NumericError& e) {
        CHECK(e.kind() == ErrorKind::Numeric);
        CHECK(e.residual_kw > 0.0);
    }
}

TEST_CASE("limit check reports generator and branch overloads with margins") {
    auto n = two_bus(1.0);
    n.branches[0].rating_kva = 2048;
    FlowSolution f;
    f.bus_voltages = {1.0, 0.99};
    f.branch_flows = {2600.0};
    f.islands = find_islands(n);

    OperatingPoint op;
    UnitPoint g;
    g.id = "G1";
    g.bus = "B1";
    g.p_kw = 2650;
    g.p_max_kw = 2048;
    op.gens.push_back(g);
    const auto r = check_limits(n, f, op);
    REQUIRE(r.items.size() == 2);
    CHECK(r.items[0].kind == ViolationKind::GenOverload);
    CHECK(r.items[0].margin == doctest::Approx(602.0));
    CHECK(r.items[1].kind == ViolationKind::BranchOverload);
    CHECK(r.items[1].margin == doctest::Approx(40.0));
}

TEST_CASE("limit check is empty inside every bound") {
    auto n = two_bus(1.0);
    FlowSolution f = dc_power_flow(n, {0.0, -500.0});
    OperatingPoint op;
    UnitPoint g;
    g.id = "G1";
    g.bus = "B1";
    g.p_kw = 500;
    g.p_max_kw = 2048;
    g.rating_kw = 2048;
    op.gens.push_back(g);
    op.sheds.push_back({"HH4", 100, 400});
    op.converters.push_back({"B2", 400, 300, 800});
    CHECK(check_limits(n, f, op).empty());

    op.sheds.push_back({"HH6", 500, 400});
    op.gens[0].p_kw = -5;
    const auto r = check_limits(n, f, op);
    CHECK(r.has(ViolationKind::ShedBounds));
    CHECK(r.has(ViolationKind::GenUnderload));
}

TEST_CASE("DC voltage and converter limits") {
    auto n = two_bus(1.0);
    FlowSolution f;
    f.bus_voltages = {1.0, 0.85};
    f.branch_flows = {0.0};
    f.islands = find_islands(n);
    OperatingPoint op;
    op.converters.push_back({"B2", 640, 480, 800});
    const auto r = check_limits(n, f, op);
    CHECK(r.has(ViolationKind::DcVoltage));
    CHECK(r.has(ViolationKind::ConverterAcVoltage));
    CHECK(r.has(ViolationKind::FilterVoltage));
}
