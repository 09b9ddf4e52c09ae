#!/usr/bin/env python3
"""Generates ieee33_3ph.json, the bundled unbalanced three-phase 33-bus case.

Topology and positive-sequence branch data follow the Baran & Wu 33-bus
feeder. Each branch becomes a 3x3 phase impedance built from sequence
impedances Z1 = z and Z0 = Z0_RATIO * z, scaled by Z_SCALE. Bus loads are
distributed over phases with PHASE_WEIGHTS so that phase c carries the most
load; bus 25 is a two-phase (a, b) lateral end.

Every loaded bus-phase hosts one prosumer whose quadratic utility is
calibrated so that its demand at the 30 $/MWh root price equals the nominal
load. Six DG groups (one unit per phase) sit at buses 3, 6, 12, 18, 22, 33.

Run: python3 make_ieee33.py > ieee33_3ph.json
"""
import json
import math

ROOT_PRICE = 30.0
Z_SCALE = 1.0
Z0_RATIO = 2.0
LOAD_SCALE = 1.0
PHASE_WEIGHTS = (0.5, 0.95, 1.55)
TWO_PHASE_BUSES = {25: "ab"}

# (from, to, r_ohm, x_ohm)
BRANCHES = [
    (1, 2, 0.0922, 0.0470), (2, 3, 0.4930, 0.2511), (3, 4, 0.3660, 0.1864),
    (4, 5, 0.3811, 0.1941), (5, 6, 0.8190, 0.7070), (6, 7, 0.1872, 0.6188),
    (7, 8, 0.7114, 0.2351), (8, 9, 1.0300, 0.7400), (9, 10, 1.0440, 0.7400),
    (10, 11, 0.1966, 0.0650), (11, 12, 0.3744, 0.1238), (12, 13, 1.4680, 1.1550),
    (13, 14, 0.5416, 0.7129), (14, 15, 0.5910, 0.5260), (15, 16, 0.7463, 0.5450),
    (16, 17, 1.2890, 1.7210), (17, 18, 0.7320, 0.5740), (2, 19, 0.1640, 0.1565),
    (19, 20, 1.5042, 1.3554), (20, 21, 0.4095, 0.4784), (21, 22, 0.7089, 0.9373),
    (3, 23, 0.4512, 0.3083), (23, 24, 0.8980, 0.7091), (24, 25, 0.8960, 0.7011),
    (6, 26, 0.2030, 0.1034), (26, 27, 0.2842, 0.1447), (27, 28, 1.0590, 0.9337),
    (28, 29, 0.8042, 0.7006), (29, 30, 0.5075, 0.2585), (30, 31, 0.9744, 0.9630),
    (31, 32, 0.3105, 0.3619), (32, 33, 0.3410, 0.5302),
]

# bus: (kW, kVAr)
LOADS = {
    2: (100, 60), 3: (90, 40), 4: (120, 80), 5: (60, 30), 6: (60, 20),
    7: (200, 100), 8: (200, 100), 9: (60, 20), 10: (60, 20), 11: (45, 30),
    12: (60, 35), 13: (60, 35), 14: (120, 80), 15: (60, 10), 16: (60, 20),
    17: (60, 20), 18: (90, 40), 19: (90, 40), 20: (90, 40), 21: (90, 40),
    22: (90, 40), 23: (90, 50), 24: (420, 200), 25: (420, 200), 26: (60, 25),
    27: (60, 25), 28: (60, 20), 29: (120, 70), 30: (200, 600), 31: (150, 70),
    32: (210, 100), 33: (60, 40),
}

DG_BUSES = [3, 6, 12, 18, 22, 33]
# Cost coefficients (c4 $/MW^2, c5 $/MW, c6 $) per DG group.
DG_COST = {1: (0.04, 0.2, 0.0), 2: (0.04, 0.2, 0.0), 3: (0.04, 0.2, 0.0),
           4: (31.0, 31.0, 0.0), 5: (31.0, 31.0, 0.0), 6: (31.0, 31.0, 0.0)}


def phase_matrix(z):
    zs = (Z0_RATIO + 2.0) / 3.0 * z
    zm = (Z0_RATIO - 1.0) / 3.0 * z
    return [[zs if i == j else zm for j in range(3)] for i in range(3)]


def rnd(x):
    return round(x, 9)


def main():
    buses = [{"id": 1, "phases": "abc"}]
    prosumers = []
    for bus in range(2, 34):
        phases = TWO_PHASE_BUSES.get(bus, "abc")
        kw, kvar = LOADS[bus]
        idx = ["abc".index(p) for p in phases]
        wsum = sum(PHASE_WEIGHTS[i] for i in idx)
        load_mw, load_mvar = [0.0] * 3, [0.0] * 3
        for i in idx:
            share = PHASE_WEIGHTS[i] / wsum * LOAD_SCALE
            load_mw[i] = rnd(kw / 1000.0 * share)
            load_mvar[i] = rnd(kvar / 1000.0 * share)
        buses.append({"id": bus, "phases": phases,
                      "load_mw": load_mw, "load_mvar": load_mvar})
        for i in idx:
            p_nom = load_mw[i]
            # Willingness-to-pay slope varies over nodes and phases.
            k = 10.0 * (1.0 + 0.3 * math.sin(1.7 * bus + 2.1 * i))
            c1 = -k / p_nom
            c2 = ROOT_PRICE + 2.0 * k
            prosumers.append({
                "bus": bus, "phase": "abc"[i],
                "c1": rnd(c1), "c2": rnd(c2), "c3": 0.0,
                "p_d_min_mw": 0.0, "p_d_max_mw": rnd(1.5 * p_nom),
                "q_d_mvar": load_mvar[i],
            })

    branches = []
    for f, t, r, x in BRANCHES:
        branches.append({
            "from": f, "to": t,
            "r_ohm": [[rnd(v) for v in row] for row in phase_matrix(r * Z_SCALE)],
            "x_ohm": [[rnd(v) for v in row] for row in phase_matrix(x * Z_SCALE)],
        })

    dgs = []
    for g, bus in enumerate(DG_BUSES, start=1):
        c4, c5, c6 = DG_COST[g]
        for ph in "abc":
            dgs.append({
                "name": f"DG{g}", "bus": bus, "phase": ph,
                "c4": c4, "c5": c5, "c6": c6,
                "p_g_min_mw": 0.0, "p_g_max_mw": 0.1,
                "q_g_min_mvar": 0.0, "q_g_max_mvar": 0.0,
            })

    case = {
        "name": "ieee33-3ph",
        "s_base_mva": 1.0,
        "v_base_kv": 12.66,
        "root_bus": 1,
        "u_ref": [1.0, 1.0, 1.0],
        "buses": buses,
        "branches": branches,
        "prosumers": prosumers,
        "dgs": dgs,
    }
    print(json.dumps(case, indent=1))


if __name__ == "__main__":
    main()
