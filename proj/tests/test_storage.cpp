#include "properties.hpp"

#include "psv/errors.hpp"
#include "psv/storage.hpp"

#include <doctest.h>

using namespace psv;
using namespace psv::storage;

TEST_CASE("PV array output is linear in irradiance up to its rating") {
    const PvArray pv;
    CHECK_NOTHROW(pv.validate());
    CHECK(pv.rating_kw() == doctest::Approx(109.8));
    CHECK(pv_power(pv, 1000) == doctest::Approx(109.8));
    CHECK(pv_power(pv, 0) == 0.0);
    CHECK(pv_power(pv, 500) == doctest::Approx(54.9));
    CHECK(pv_power(pv, 1300) == doctest::Approx(109.8));
    double last = 0.0;
    for (double g = 0; g <= 1500; g += 25) {
        CHECK(pv_power(pv, g) >= last);
        last = pv_power(pv, g);
    }
    CHECK_THROWS_AS(pv_power(pv, -1), Error);
    PvArray bad;
    bad.n_s = 5;
    CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("battery pack energy and SOC bookkeeping") {
    BatteryPack b;
    CHECK(b.energy_kwh() == doctest::Approx(780));
    b.soc = 0.8;
    CHECK(soc_step(b, 0.0, 10).soc == 0.8);
    CHECK(soc_step(b, 390, 3600).soc == doctest::Approx(0.3));
    b.soc = 0.5;
    CHECK(soc_step(b, -100, 3600).soc == doctest::Approx(0.5 + 95.0 / 780.0));
    CHECK(95.0 / 780.0 == doctest::Approx(0.1218).epsilon(1e-3));

    b.soc = 0.05;
    const auto low = soc_step(b, 800, 3600);
    CHECK(low.soc == 0.0);
    CHECK(low.limit_event);
    b.soc = 0.99;
    const auto high = soc_step(b, -800, 3600);
    CHECK(high.soc == 1.0);
    CHECK(high.limit_event);
    CHECK_THROWS_AS(soc_step(b, 1, 0), Error);
}

TEST_CASE("ESS rating follows the fleet") {
    CHECK(ess_rating_for_fleet(4 * 2048) == 820);
    CHECK(ess_rating_for_fleet(3 * 2048) == 610);
}

TEST_CASE("full battery discharges with the supply sign conventions") {
    EssUnit ess;
    const auto op = charge_mode_select(ess, 1.0, 30.0, false, 400.0);
    CHECK(op.mode == EssMode::Discharge);
    CHECK(op.p_ess_kw == doctest::Approx(400));
    CHECK(op.p_batt_kw + op.p_pv_kw == doctest::Approx(op.p_ess_kw));
    CHECK(discharge_predicate_failures(op).empty());
}

TEST_CASE("depleted battery charges from PV and, when allowed, from the bus") {
    EssUnit ess;
    const auto fast = charge_mode_select(ess, 0.15, 50.0, true);
    CHECK(fast.mode == EssMode::FastCharge);
    CHECK(fast.p_batt_kw == doctest::Approx(-(std::abs(fast.p_ess_kw) + 50.0)));
    CHECK(fast.p_batt_kw == doctest::Approx(-600.0 * 650.0 / 1e3));
    CHECK(charge_predicate_failures(fast).empty());

    const auto slow = charge_mode_select(ess, 0.15, 50.0, false);
    CHECK(slow.mode == EssMode::PvCharge);
    CHECK(slow.p_batt_kw == doctest::Approx(-50.0));
    CHECK(slow.p_ess_kw == 0.0);
    CHECK(pv_charge_predicate_failures(slow).empty());

    CHECK(charge_mode_select(ess, 0.15, 0.0, false).mode == EssMode::Idle);
}

TEST_CASE("discharge below the SOC floor is a mode error") {
    EssUnit ess;
    try {
        charge_mode_select(ess, 0.15, 0.0, false, 100.0);
        FAIL("expected a mode error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::Mode);
    }
    CHECK_THROWS_AS(charge_mode_select(ess, 1.2, 0.0, false), Error);
}

TEST_CASE("charging latch holds until the SOC clears the band") {
    EssUnit ess;
    auto op = charge_mode_select(ess, 0.19, 20.0, false);
    CHECK(op.charging_latched);
    ess.charging_latched = true;
    CHECK(charge_mode_select(ess, 0.30, 20.0, false).charging_latched);
    CHECK_THROWS_AS(charge_mode_select(ess, 0.30, 20.0, false, 50.0), Error);
    CHECK_FALSE(charge_mode_select(ess, 0.46, 20.0, false).charging_latched);
}

TEST_CASE("ESS dispatch limits") {
    EssUnit ess;
    ess.battery.soc = 0.20;
    CHECK(ess_dispatch_limits(ess).p_max_kw == 0.0);
    ess.battery.soc = 1.0;
    ess.horizon_s = 900;
    CHECK(ess_dispatch_limits(ess).p_max_kw == doctest::Approx(820));
    ess.horizon_s = 900;
    ess.battery.soc = 0.25;
    CHECK(ess_dispatch_limits(ess).p_max_kw == doctest::Approx(156));
    CHECK(ess_dispatch_limits(ess).p_min_kw == 0.0);  // bus charging not allowed
    ess.grid_charge_allowed = true;
    CHECK(ess_dispatch_limits(ess).p_min_kw < 0.0);
    ess.battery.soc = 1.0;
    CHECK(ess_dispatch_limits(ess).p_min_kw == 0.0);
    ess.unavailable = true;
    CHECK(ess_dispatch_limits(ess).p_max_kw == 0.0);
}

TEST_CASE("randomized charge/discharge walk keeps every sign predicate") {
    const auto w = property::ess_walk(10000, 42);
    for (const auto& v : w.violations) INFO(v);
    CHECK(w.violations.empty());
    CHECK(w.soc_lo >= 0.0);
    CHECK(w.soc_hi <= 1.0);
    CHECK(w.discharge_steps > 100);
    CHECK(w.charge_steps > 100);
    CHECK(w.pv_charge_steps > 100);
}
