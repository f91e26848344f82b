#!/usr/bin/env python3
"""Writes scenarios/network.json and the bundled case corpus.

Usage: gen_scenarios.py [--psv build/psv] [--out scenarios] [--no-calibrate]

The hotel-high level is the one free knob: it is bisected so that the Case 1A
pre-event dispatch (including network losses) totals 3800 kW, then reused
for every case. Case 2A additionally steps hotel load up by the amount its
post-event row total implies.
"""

import argparse
import json
import pathlib
import subprocess
import sys

BRANCHES = [
    # id, from, to, r_mohm, x_mohm, rating_kva
    ("L1", "B1", "B4", 0.48, None, 4096),
    ("L2", "B2", "B6", 0.48, None, 4096),
    ("L3", "B3", "B12", 0.092, None, 3500),
    ("L4", "B3", "B4", 0.092, None, 3500),
    ("L5", "B4", "B5", 1.5, None, 3000),
    ("L6", "B5", "B6", 1.2, None, 3000),
    ("L7", "B6", "B7", 0.64, 0.75, 1600),
    ("L8", "B7", "B16", 0.64, 0.75, 1600),
    ("L9", "B4", "B9", 3.2, None, 1100),
    ("L10", "B6", "B11", 3.2, None, 1100),
    ("L11", "B8", "B9", 2.56, None, 450),
    ("L12", "B9", "B10", 2.56, None, 450),
    ("L13", "B10", "B11", 2.56, 2.31, 400),
    ("L14", "B12", "B13", 2.56, 2.31, 400),
    ("L15", "B13", "B14", 3.2, None, 1100),
    ("L16", "B14", "B15", 0.03, None, 4096),
    ("L17", "B15", "B16", 0.03, None, 4096),
    ("L18", "B13", "B17", 0.03, None, 4096),
    ("L19", "B17", "B18", 0.03, None, 4096),
    ("L20", "B18", "B19", 0.03, None, 4096),
    ("L21", "B19", "B20", 0.03, None, 4096),
]

BUSES = [
    # id, kind, p_max_kw, q_kvar, v_setpoint
    ("B1", "generator", 4096, None, 1.05),
    ("B2", "generator", 4096, None, 1.05),
    ("B3", "load", -3000, None, 1.0),
    ("B4", "boundary-node", -640, -480, 1.0),
    ("B5", "load", -1100, None, 1.0),
    ("B6", "boundary-node", -640, -480, 1.0),
    ("B7", "load", -3000, None, 1.0),
    ("B8", "boundary-node", -240, -180, 1.0),
    ("B9", "boundary-node", -400, -300, 1.0),
    ("B10", "boundary-node", -400, -300, 1.0),
    ("B11", "boundary-node", -240, -180, 1.0),
    ("B12", "load", -1100, None, 0.95),
    ("B13", "load", -450, None, 0.95),
    ("B14", "ess", 820, None, 1.0),
    ("B15", "load", -450, None, 0.95),
    ("B16", "load", -1100, None, 0.95),
    ("B17", "boundary-node", -80, -60, 1.0),
    ("B18", "boundary-node", -80, -60, 1.0),
    ("B19", "boundary-node", -80, -60, 1.0),
    ("B20", "boundary-node", -80, -60, 1.0),
]

PARTITION_HINT = [
    ["B1", "B2"],
    ["B3", "B4", "B5", "B8", "B9", "B10", "B12", "B13", "B17", "B18", "B19", "B20"],
    ["B6", "B7", "B11", "B14", "B15", "B16"],
]

HOTEL_HIGH = [("HH4", "B4", 800), ("HH6", "B6", 800), ("HH8", "B8", 300),
              ("HH9", "B9", 500), ("HH10", "B10", 500), ("HH11", "B11", 300)]
HOTEL_LOW = [("HL17", "B17"), ("HL18", "B18"), ("HL19", "B19"), ("HL20", "B20")]
HOTEL_LOW_KVA = 270.0
PF = 0.8


def network():
    buses = []
    for bid, kind, pmax, q, v in BUSES:
        b = {"id": bid, "kind": kind, "p_max_kw": pmax, "p_min_kw": 0}
        if q is not None:
            b["q_rating_kvar"] = q
        if v < 1.0:
            # DP-side buses carry 0.95 pu as their lower bound.
            b["v_setpoint"] = 1.0
            b["v_min"] = v
        else:
            b["v_setpoint"] = v
        if kind == "generator":
            # Regulated sources share the converter band.
            b["v_min"] = 0.90
            b["v_max"] = 1.10
        buses.append(b)
    branches = []
    for lid, f, t, r, x, kva in BRANCHES:
        br = {"id": lid, "from": f, "to": t, "r_mohm": r, "rating_kva": kva}
        if x is not None:
            br["x_mohm"] = x
        branches.append(br)
    return {
        "description": "Reduced bus-branch model of the DC platform supply vessel, 1500 V",
        "base_voltage_v": 1500,
        "base_power_kva": 10000,
        "buses": buses,
        "branches": branches,
        "partition_hint": PARTITION_HINT,
    }


def roster(hotel_fraction, tt=0.0, mp=0.0):
    loads = [
        {"id": "MP1", "bus": "B3", "class": "cruise", "rated": 3000, "setpoint_kw": mp},
        {"id": "MP2", "bus": "B7", "class": "cruise", "rated": 3000, "setpoint_kw": mp},
        {"id": "TT1", "bus": "B12", "class": "dp-thruster", "rated": 1100, "setpoint_kw": tt},
        {"id": "TT2", "bus": "B16", "class": "dp-thruster", "rated": 1100, "setpoint_kw": tt},
        {"id": "RT", "bus": "B5", "class": "dp-thruster", "rated": 1100, "setpoint_kw": tt},
    ]
    for lid, bus, kva in HOTEL_HIGH:
        loads.append({"id": lid, "bus": bus, "class": "hotel-high", "rated": kva, "power_factor": PF,
                      "setpoint_kw": round(kva * PF * hotel_fraction, 4)})
    for lid, bus in HOTEL_LOW:
        loads.append({"id": lid, "bus": bus, "class": "hotel-low", "rated": 100, "power_factor": PF,
                      "setpoint_kw": round(HOTEL_LOW_KVA / 4 * PF, 4)})
    loads.append({"id": "PL", "bus": "B13", "class": "pulsed", "rated": 450, "setpoint_kw": 9,
                  "pulse": {"amplitude_kw": 450, "width_s": 0.02, "period_s": 1.0}})
    loads.append({"id": "RADAR", "bus": "B15", "class": "radar", "rated": 450, "setpoint_kw": 450})
    return loads


def fleet():
    return [
        {"id": "G1", "bus": "B1", "rated_kw": 2048},
        {"id": "G2", "bus": "B2", "rated_kw": 2048},
        {"id": "G3", "bus": "B1", "rated_kw": 2048},
        {"id": "G4", "bus": "B2", "rated_kw": 2048},
    ]


def ess(soc=1.0):
    return {"id": "ESS", "bus": "B14", "p_rating_kw": 820, "soc": soc, "soc_min": 0.2,
            "grid_charge_allowed": False}


def thrusters(kw):
    return {"TT1": kw, "TT2": kw, "RT": kw}


def cruise(kw):
    return {"MP1": kw, "MP2": kw}


# name, description, mission, (tt, mp), soc, events
CASES = [
    ("case1a", "Sudden gain of DP load", "dynamic-positioning", (300, 0), 1.0,
     [{"t": 1.0, "type": "load-step", "loads": thrusters(800)}]),
    ("case1b", "Sudden gain of DP load with inadequate SOC", "dynamic-positioning", (300, 0), 0.15,
     [{"t": 1.0, "type": "load-step", "loads": thrusters(800)}]),
    ("case2a", "Sudden loss of DP load", "dynamic-positioning", (800, 0), 1.0,
     [{"t": 1.0, "type": "load-step", "loads": thrusters(200)}]),
    ("case2b", "Sudden loss of DP load with inadequate SOC", "dynamic-positioning", (800, 0), 0.15,
     [{"t": 1.0, "type": "load-step", "loads": thrusters(200)}]),
    ("case3a", "Bus-2 isolated at low DP load", "dynamic-positioning", (300, 0), 1.0,
     [{"t": 1.0, "type": "bus-isolation", "bus": "B2"}]),
    ("case3b", "Bus-2 isolated at low DP load with inadequate SOC", "dynamic-positioning", (300, 0), 0.15,
     [{"t": 1.0, "type": "bus-isolation", "bus": "B2"}]),
    ("case4", "Inadequate SOC at low DP load", "dynamic-positioning", (300, 0), 1.0,
     [{"t": 1.0, "type": "ess-unavailable"}]),
    ("case5a", "Bus-2 isolated at high DP load", "dynamic-positioning", (800, 0), 1.0,
     [{"t": 1.0, "type": "bus-isolation", "bus": "B2"}]),
    ("case5b", "Bus-2 isolated at high DP load with inadequate SOC", "dynamic-positioning", (800, 0), 0.15,
     [{"t": 1.0, "type": "bus-isolation", "bus": "B2"}]),
    ("case6", "Inadequate SOC at high DP load", "dynamic-positioning", (800, 0), 1.0,
     [{"t": 1.0, "type": "ess-unavailable"}]),
    ("case7a", "Sudden gain in cruising load", "cruising", (0, 1000), 1.0,
     [{"t": 1.0, "type": "load-step", "loads": cruise(2500)}]),
    ("case7b", "Sudden gain in cruising load with inadequate SOC", "cruising", (0, 1000), 0.15,
     [{"t": 1.0, "type": "load-step", "loads": cruise(2500)}]),
    ("case8a", "Sudden loss in cruising load", "cruising", (0, 2500), 1.0,
     [{"t": 2.0, "type": "load-step", "loads": cruise(1000), "ramp_s": 1.0}]),
    ("case8b", "Sudden loss in cruising load with inadequate SOC", "cruising", (0, 2500), 0.15,
     [{"t": 1.0, "type": "load-step", "loads": cruise(1000)}]),
    ("case9", "Bus-2 isolated at low cruising load", "cruising", (0, 1000), 1.0,
     [{"t": 1.0, "type": "bus-isolation", "bus": "B2"}]),
    ("case10a", "Bus-2 isolated at high cruising load", "cruising", (0, 2500), 1.0,
     [{"t": 1.0, "type": "bus-isolation", "bus": "B2"}]),
    ("case10b", "Bus-2 isolated at high cruising load, partial load shedding", "cruising", (0, 2500), 1.0,
     [{"t": 1.0, "type": "bus-isolation", "bus": "B2"},
      {"t": 1.0, "type": "shed-approval", "shed": {"HH4": 400, "HH6": 400}}]),
    ("case10c", "Bus-2 isolated at high cruising load, maximum load shedding", "cruising", (0, 2500), 1.0,
     [{"t": 1.0, "type": "bus-isolation", "bus": "B2"},
      {"t": 1.0, "type": "shed-approval", "shed": "MAX"}]),
]


def scenario(name, desc, mission, tt, mp, soc, events, hotel_fraction, duration=6.0):
    loads = roster(hotel_fraction, tt, mp)
    evs = []
    for e in events:
        e = dict(e)
        if e.get("shed") == "MAX":
            e["shed"] = {l["id"]: l["setpoint_kw"] for l in loads if l["class"] in ("hotel-high", "pulsed", "radar")}
        evs.append(e)
    return {
        "name": name,
        "description": desc,
        "network": "network.json",
        "sfoc_map": "../data/sfoc_anchors.txt",
        "mission": mission,
        "fleet": fleet(),
        "ess": ess(soc),
        "loads": loads,
        "irradiance": [{"t": 0, "w_m2": 0}],
        "sim": {"dt": 0.001, "schedule_period": 0.5, "duration": duration, "partitions": 1, "workers": 1,
                "trace_decimation": 10},
        "events": evs,
    }


def write(path, obj):
    path.write_text(json.dumps(obj, indent=2) + "\n")


def generation_total(psv, path, row=0):
    out = subprocess.run([psv, "solve", "--json", str(path)], capture_output=True, text=True)
    if out.returncode not in (0, 2, 3):
        sys.exit(f"psv solve failed on {path}: {out.stderr}")
    s = json.loads(out.stdout)["rows"][row]["schedule"]
    return sum(g["p_kw"] for g in s["gens"]) + s["p_ess_kw"]


def bisect(build, psv, probe, target, lo, hi, row=0):
    for _ in range(40):
        mid = 0.5 * (lo + hi)
        write(probe, build(mid))
        if generation_total(psv, probe, row) > target:
            hi = mid
        else:
            lo = mid
        if hi - lo < 1e-6:
            break
    return round(0.5 * (lo + hi), 6)


def hotel_step(frac, extra_kw):
    """Hotel-high setpoints on B4/B6 raised by extra_kw in total."""
    return {"HH4": round(800 * PF * frac + extra_kw / 2, 4), "HH6": round(800 * PF * frac + extra_kw / 2, 4)}


def with_hotel_step(case, frac, extra_kw):
    name, desc, mission, load, soc, events = case
    events = [dict(e, loads={**e["loads"], **hotel_step(frac, extra_kw)}) for e in events]
    return (name, desc, mission, load, soc, events)


def calibrate(psv, out_dir):
    """Hotel-high fraction from the Case 1A pre row (3800 kW), then the extra
    non-thruster load implied by the Case 2A post row (4 x 899.37 + 2.5 kW)."""
    probe = out_dir / "_calibrate.json"
    name, desc, mission, (tt, mp), soc, _ = CASES[0]
    frac = bisect(lambda f: scenario(name, desc, mission, tt, mp, soc, [], f), psv, probe, 3800.0, 0.6, 1.0)
    case2a = next(c for c in CASES if c[0] == "case2a")

    def build(extra):
        n, d, m, (t2, m2), s2, ev = with_hotel_step(case2a, frac, extra)
        return scenario(n, d, m, t2, m2, s2, ev, frac)

    extra = bisect(build, psv, probe, 4 * 899.37 + 2.5, 0.0, 300.0, row=1)
    probe.unlink()
    return frac, extra


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--psv", default="build/psv")
    ap.add_argument("--out", default="scenarios")
    ap.add_argument("--no-calibrate", action="store_true")
    ap.add_argument("--hotel-fraction", type=float, default=0.85)
    args = ap.parse_args()
    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write(out / "network.json", network())
    frac, extra = (args.hotel_fraction, 100.0) if args.no_calibrate else calibrate(args.psv, out)
    print(f"hotel-high fraction {frac}, case 2A hotel step {extra} kW")
    for case in CASES:
        if case[0] == "case2a":
            case = with_hotel_step(case, frac, extra)
        name, desc, mission, (tt, mp), soc, events = case
        # Case 8A runs long enough for the ESS ramp to settle.
        duration = 14.0 if name == "case8a" else 6.0
        write(out / f"{name}.json", scenario(name, desc, mission, tt, mp, soc, events, frac, duration))
    dp_low = scenario("dp-low", "Steady low-load dynamic positioning", "dynamic-positioning", 300, 0, 1.0, [],
                      frac, duration=4.0)
    write(out / "dp-low.json", dp_low)


if __name__ == "__main__":
    main()
