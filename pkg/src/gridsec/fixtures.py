"""Study fixtures: transcribed tables and response values from the 14-bus
security study, plus builders that assemble them into records, measurement
sets and display segments.

Values quoted in the study are frozen verbatim; table entries the study
never states are filled from the solved standard case and marked so in
comments. Everything here is deterministic.
"""

from __future__ import annotations

from dataclasses import replace
from functools import lru_cache
from pathlib import Path

import numpy as np

from .attacks import (
    StateDelta,
    build_scenario_1a,
    build_scenario_1b,
    corrupt_topology_record,
    manipulate_state_vector,
)
from .estimation import MeasurementSet, measurements_from_state, wls_estimate_ac
from .network import BreakerState, NetworkModel, build_ieee14
from .powerflow import solve
from .records import BranchRow, BusRow, GridRecord
from .som import SegmentDescriptor, parse_segments

__all__ = [
    "TABLE4_ORIGINAL_V",
    "TABLE4_RANGES",
    "TABLE3_BUS2_POINTS",
    "SWEEP_SIGMA_VM",
    "SWEEP_SIGMA_POWER",
    "sweep_baseline_state",
    "sweep_baseline_measurements",
    "scenario_1a_records",
    "scenario_1b_records",
    "post_se_baseline_record",
    "scenario_2a_record",
    "scenario_2b_record",
    "scenario_2c_record",
    "scenario_2d_record",
    "som_reference_segments",
    "som_reference_arrangement_cells",
    "som_scenario_3b_segments",
    "som_scenario_3c_segments",
    "write_fixture_tree",
]

# ---------------------------------------------------------------------------
# Stealth-range study (attack point 1)
# ---------------------------------------------------------------------------

# Baseline bus voltages of the stealth-range study ("original voltage"
# column), bus 1 through 14.
TABLE4_ORIGINAL_V: tuple[float, ...] = (
    1.061987,
    1.044446943,
    1.012590754,
    1.023762973,
    1.018577246,
    1.069063452,
    1.067836384,
    1.093069739,
    1.054053823,
    1.053154865,
    1.055052848,
    1.053325644,
    1.051349563,
    1.027876825,
)

# Reported stealth ranges per bus: (start, end, width) or None where the
# study reports no admissible range.
TABLE4_RANGES: dict[int, tuple[float, float, float] | None] = {
    1: None,
    2: (1.034569138, 1.044388778, 0.009819639),
    3: (1.002705411, 1.01252505, 0.009819639),
    4: (1.013927856, 1.023747495, 0.009819639),
    5: (1.008717435, 1.018537074, 0.009819639),
    6: None,
    7: None,
    8: None,
    9: (1.044188377, 1.05, 0.005811623),
    10: (1.043186373, 1.05, 0.006813627),
    11: (1.045190381, 1.05, 0.004809619),
    12: (1.043386774, 1.05, 0.006613226),
    13: (1.041382766, 1.05, 0.008617234),
    14: (1.017935872, 1.027955912, 0.01002004),
}

# Sample of the published bus-2 sweep log: (attack_vm, detected).
TABLE3_BUS2_POINTS: tuple[tuple[float, bool], ...] = (
    (1.033277592, True),
    (1.033779264, True),
    (1.034280936, True),
    (1.034782609, False),
    (1.035284281, False),
    (1.035785953, False),
    (1.036287625, False),
    (1.036789298, False),
    (1.03729097, False),
    (1.037792642, False),
    (1.038294314, False),
    (1.038795987, False),
    (1.039297659, False),
    (1.039799331, False),
    (1.040301003, False),
    (1.040802676, False),
    (1.041304348, False),
    (1.04180602, False),
    (1.042307692, False),
    (1.042809365, False),
    (1.043311037, False),
    (1.043812709, False),
    (1.044314381, False),
    (1.044816054, True),
    (1.045317726, True),
    (1.045819398, True),
)

# Sweep measurement noise, calibrated so the chi-square evasion boundary
# sits near +/-0.0053 p.u. on the fixture state, which reproduces the
# published range structure (interior widths ~0.0098-0.0100 p.u., high
# buses clipped at the 1.05 band edge) on the default 300-point grid.
SWEEP_SIGMA_VM = 5.47e-4
SWEEP_SIGMA_POWER = 1.0e-4


@lru_cache(maxsize=1)
def _canonical_solution():
    model = build_ieee14()
    return model, solve(model)


def sweep_baseline_state(model: NetworkModel | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Fixture operating state: the study's baseline voltages with angles
    from the solved case (the standard one unless a variant is passed)."""
    if model is None or model == _canonical_solution()[0]:
        sol = _canonical_solution()[1]
    else:
        if model.n_bus != len(TABLE4_ORIGINAL_V):
            raise ValueError("the sweep fixture is defined for the 14-bus case")
        sol = solve(model)
    return np.array(TABLE4_ORIGINAL_V), sol.theta.copy()


def sweep_baseline_measurements(model: NetworkModel | None = None) -> MeasurementSet:
    """Self-consistent measurement snapshot of the fixture state with the
    calibrated sweep noise model."""
    if model is None:
        model = _canonical_solution()[0]
    v0, th0 = sweep_baseline_state(model)
    return measurements_from_state(
        model, v0, th0, sigma_vm=SWEEP_SIGMA_VM, sigma_power=SWEEP_SIGMA_POWER
    )


# ---------------------------------------------------------------------------
# Coordinated measurement attacks (scenarios 1A / 1B)
# ---------------------------------------------------------------------------

# Baseline P in p.u. (consumption positive). Attacked channels carry the
# study's quoted baselines; the rest follow the standard case loads, with
# bus 1 showing the slack output.
_P1_BASE_COMMON = {
    1: -2.324, 2: 0.2163, 5: 0.076, 6: 0.112, 7: 0.0, 8: 0.0,
    10: 0.090, 11: 0.035, 12: 0.061, 14: 0.149,
}
_Q1_BASE = (-0.169, 0.127, 0.19, -0.039, 0.016, 0.075, 0.0, 0.0,
            0.166, 0.058, 0.018, 0.016, 0.058, 0.05)

_S1A_P_OVERRIDES = {3: 0.9399, 4: 0.478, 9: 0.2937, 13: 0.135}
_S1A_V_OVERRIDES = {3: 1.0100, 6: 1.0711, 11: 1.0552}
_S1B_P_OVERRIDES = {3: 0.942, 4: 0.4809, 9: 0.2960, 13: 0.1316}
_S1B_V_OVERRIDES = {2: 1.0466, 4: 1.0176, 6: 1.0719, 11: 1.0594}

# Chi-square values the study reports for the attacked snapshots; the
# noise realization behind them is unstated, so they ride along as fixture
# constants rather than reproduction targets.
SCENARIO_1A_CHI2 = 42.8
SCENARIO_1B_CHI2 = 67.3


def _measurement_snapshot(
    v_over: dict[int, float], p_over: dict[int, float], source: str
) -> GridRecord:
    v = list(TABLE4_ORIGINAL_V)
    p = [0.0] * 14
    for b, val in _P1_BASE_COMMON.items():
        p[b - 1] = val
    for b, val in p_over.items():
        p[b - 1] = val
    for b, val in v_over.items():
        v[b - 1] = val
    buses = [
        BusRow(bus=b, v_pu=v[b - 1], theta_deg=0.0, p_mw=p[b - 1] * 100.0,
               q_mvar=_Q1_BASE[b - 1] * 100.0)
        for b in range(1, 15)
    ]
    return GridRecord(buses=buses, source=source, extras={"stage": "measurement"})


def scenario_1a_records(with_recomputed_chi2: bool = False) -> tuple[GridRecord, GridRecord]:
    """(baseline, attacked) snapshots for the 5-point distributed attack.

    The quoted chi-square rides along as ``bdd_chi2``; set
    ``with_recomputed_chi2`` to also store our own value under the default
    noise model next to it."""
    baseline = _measurement_snapshot(_S1A_V_OVERRIDES, _S1A_P_OVERRIDES, "scenario1a-baseline")
    attacked = build_scenario_1a().apply_to_record(baseline)
    attacked.source = "scenario1a"
    attacked.extras["bdd_chi2"] = SCENARIO_1A_CHI2
    if with_recomputed_chi2:
        attacked.extras["recomputed_chi2"] = round(recompute_snapshot_chi2(attacked), 6)
    return baseline, attacked


def scenario_1b_records(
    seed: int = 3, with_recomputed_chi2: bool = False
) -> tuple[GridRecord, GridRecord]:
    """(baseline, attacked) snapshots for the 8-point coordinated attack,
    with the seeded concealment noise included."""
    baseline = _measurement_snapshot(_S1B_V_OVERRIDES, _S1B_P_OVERRIDES, "scenario1b-baseline")
    attacked = build_scenario_1b(noise=True, seed=seed).apply_to_record(baseline)
    attacked.source = "scenario1b"
    attacked.extras["bdd_chi2"] = SCENARIO_1B_CHI2
    if with_recomputed_chi2:
        attacked.extras["recomputed_chi2"] = round(recompute_snapshot_chi2(attacked), 6)
    return baseline, attacked


def recompute_snapshot_chi2(record: GridRecord, model: NetworkModel | None = None) -> float:
    """Our own chi-square for a snapshot treated as a measurement set with
    the default noise model; stored alongside the quoted fixture value."""
    if model is None:
        model = _canonical_solution()[0]
    v, _, p, q = record.arrays()
    ms = measurements_from_state(model, np.ones(14), np.zeros(14))
    entries = list(ms.entries)
    values = np.concatenate([v, -p / 100.0, -q / 100.0])
    entries = [replace(m, value=float(val)) for m, val in zip(entries, values)]
    return wls_estimate_ac(model, MeasurementSet(entries), delta=1e-8).j_value


# ---------------------------------------------------------------------------
# Post-estimation database scenarios (attack point 2)
# ---------------------------------------------------------------------------

# Validated post-estimation baseline. Quoted rows are verbatim; the others
# come from the solved standard case (their case dispatches 212.1 MW at
# the slack and serves 237.3 MW of load with 14.84 MW of losses).
_POST_SE_BUSES = (
    # (bus, v_pu, theta_deg, p_mw, q_mvar)  consumption positive
    (1, 1.0600, 0.00, -212.1, 16.6),
    (2, 1.0450, -4.98, -40.0, -27.4),
    (3, 1.0100, -14.00, 94.2, -46.9),
    (4, 0.9906, -10.93, 47.8, -3.9),
    (5, 0.9898, -8.77, 7.6, 1.6),
    (6, 1.0700, -14.22, 11.2, -4.7),
    (7, 1.0116, -14.22, 0.0, 0.0),
    (8, 1.0900, -13.36, 0.0, -17.4),
    (9, 1.0071, -15.96, 29.5, -2.7),
    (10, 1.0510, -15.10, 9.0, 5.8),
    (11, 1.0569, -14.79, 3.5, 1.8),
    (12, 1.0552, -15.08, 6.1, 1.6),
    (13, 0.9996, -16.18, 13.5, 5.8),
    (14, 1.0355, -17.16, 14.9, 5.0),
)

# Branch table: flows from the solved standard case; the 2-4 row carries
# the study's quoted values and the loss column is rescaled so the total
# matches the study's 14.84 MW.
_POST_SE_BRANCHES = (
    # (from, to, p_mw, q_mvar, loss_mw)
    (1, 2, 156.883, -20.404, 4.8270),
    (1, 5, 75.510, 3.855, 3.1032),
    (2, 3, 73.238, 3.560, 2.6095),
    (2, 4, 56.1, -15.8, 1.68),
    (2, 5, 41.516, 1.171, 1.0151),
    (3, 4, -23.286, 4.473, 0.4195),
    (4, 5, -61.158, 15.824, 0.5778),
    (4, 7, 28.074, -9.681, 0.0),
    (4, 9, 16.080, -0.428, 0.0),
    (5, 6, 44.087, 12.471, 0.0),
    (6, 11, 7.353, 3.560, 0.0622),
    (6, 12, 7.786, 2.503, 0.0807),
    (6, 13, 17.748, 7.217, 0.2382),
    (7, 8, 0.0, -17.163, 0.0),
    (7, 9, 28.074, 5.779, 0.0),
    (9, 10, 5.228, 4.219, 0.0145),
    (9, 14, 9.426, 3.610, 0.1305),
    (10, 11, -3.785, -1.615, 0.0141),
    (12, 13, 1.614, 0.754, 0.0071),
    (13, 14, 5.644, 1.747, 0.0607),
)

POST_SE_BASELINE_LOSS_MW = 14.84
SCENARIO_2B_LOSS_MW = 28.78


def post_se_baseline_record() -> GridRecord:
    buses = [BusRow(*row) for row in _POST_SE_BUSES]
    branches = [
        BranchRow(f, t, BreakerState.CLOSED, BreakerState.CLOSED, p, q, loss)
        for f, t, p, q, loss in _POST_SE_BRANCHES
    ]
    return GridRecord(
        buses=buses,
        branches=branches,
        source="post-se-baseline",
        extras={"stage": "post-se", "bdd_chi2": 0.0},
    )


def scenario_2a_record() -> GridRecord:
    """State-vector manipulation: buses 4, 9 and 13 flipped from load to
    generation with the quoted voltage/angle/reactive adjustments."""
    delta = StateDelta.from_changes(
        14,
        dv={4: 0.0073, 7: 0.0102, 9: 0.0107, 13: 0.0157},
        dtheta_deg={4: 1.89, 7: 1.88, 9: -1.70, 13: 2.19},
        dp_mw={4: -95.6, 9: -59.0, 13: -27.0},
        dq_mvar={4: 7.8, 9: -13.9, 13: -11.6},
    )
    record = manipulate_state_vector(post_se_baseline_record(), delta)
    record.source = "scenario2a"
    record.extras = {"stage": "post-se", "bdd_chi2": 0.0}
    return record


def scenario_2b_record() -> GridRecord:
    """Topology corruption aftermath: same loads, 13.9 MW more dispatch,
    losses nearly doubled, degraded voltage/angle profile."""
    base = post_se_baseline_record()
    bus_over = {
        1: dict(p_mw=-226.0),
        2: dict(q_mvar=-38.7),
        3: dict(theta_deg=-27.20, q_mvar=-75.5),
        4: dict(v_pu=0.9765),
        5: dict(v_pu=0.9792),
        14: dict(theta_deg=-21.90),
    }
    buses = [
        replace(r, **bus_over.get(r.bus, {})) for r in base.buses
    ]
    scale = SCENARIO_2B_LOSS_MW / POST_SE_BASELINE_LOSS_MW
    branches = [replace(br, loss_mw=br.loss_mw * scale) for br in base.branches]
    return GridRecord(
        buses=buses,
        branches=branches,
        source="scenario2b",
        extras={"stage": "post-se", "bdd_chi2": 0.0},
    )


def scenario_2c_record() -> GridRecord:
    """Complete islanding: every breaker open, all flows zero, every
    single-bus island perfectly balanced."""
    base = post_se_baseline_record()
    buses = [replace(r, theta_deg=0.0, p_mw=0.0, q_mvar=0.0) for r in base.buses]
    branches = [
        replace(br, status_from=BreakerState.OPEN, status_to=BreakerState.OPEN,
                p_mw=0.0, q_mvar=0.0, loss_mw=0.0)
        for br in base.branches
    ]
    return GridRecord(
        buses=buses,
        branches=branches,
        source="scenario2c",
        extras={"stage": "post-se", "bdd_chi2": 0.0},
    )


def scenario_2d_record() -> GridRecord:
    """Breaker-status falsification: the 2-4 row reads Opened while its
    56.1 MW / -15.8 Mvar flow stays in place."""
    record = corrupt_topology_record(post_se_baseline_record(), [(2, 4)])
    record.source = "scenario2d"
    record.extras = {"stage": "post-se", "bdd_chi2": 0.0}
    return record


# ---------------------------------------------------------------------------
# Display segments (attack point 3)
# ---------------------------------------------------------------------------

_SOM_REFERENCE = (
    ("seg1", ["CB4_3:R", "CB7_8:R", "L4_3_S", "CP3_4_B:south", "L7_8_N", "Ld_4"],
     {"4": 1.02, "7": 1.06}),
    ("seg2", ["CB6_13:R", "CB6_12:R", "L6_13_N", "CP6_12_C:west", "L5_1_W",
              "Ld_5", "Ld_10"],
     {"5": 1.02, "6": 1.07, "10": 1.05}),
    ("seg3", ["CB8_7:R", "L8_7_S", "Ld_9", "Ld_14"],
     {"8": 1.09, "9": 1.06, "14": 1.04}),
    ("seg4", ["CP2_3_B:west", "CP2_3_C:east"], {}),
    ("seg5", ["CB2_1:R", "CB2_3:R", "L2_1_N", "CP1_2_B:north", "L2_3_E",
              "CP2_3_A:east", "Ld_2"],
     {"2": 1.04}),
    ("seg6", ["CB13_12:R", "CB13_6:R", "CP13_12_A:west", "L13_6_S", "Ld_11",
              "Ld_13"],
     {"11": 1.06, "13": 1.04}),
    ("seg7", ["CB12_6:R", "Ld_12", "L12_6_S", "CP6_12_B:south", "L12_13_E",
              "CP13_12_B:east"],
     {"12": 1.06}),
    ("seg8", ["CB1_2:R", "L1_2_S", "CP1_2_A:south", "L6_12_N", "CP6_12_A:north",
              "CP6_12_D:east", "L1_5_E"],
     {"1": 1.06}),
    ("seg9", ["CB3_2:R", "CB3_4:R", "L3_2_W", "CP2_3_D:west", "L3_4_N",
              "CP3_4_A:north", "Ld_3"],
     {"3": 1.01}),
)

SOM_REFERENCE_CELLS = (
    ("seg7", "seg6", "seg3"),
    ("seg8", "seg2", "seg1"),
    ("seg5", "seg4", "seg9"),
)


def _segments_from_table(table) -> list[SegmentDescriptor]:
    return parse_segments(
        [{"id": sid, "markers": markers, "bus_display": display}
         for sid, markers, display in table]
    )


def som_reference_segments() -> list[SegmentDescriptor]:
    return _segments_from_table(_SOM_REFERENCE)


def som_reference_arrangement_cells() -> tuple[tuple[str, ...], ...]:
    return SOM_REFERENCE_CELLS


def _with_marker_swap(table, seg_id: str, old: str, new: str):
    out = []
    for sid, markers, display in table:
        if sid == seg_id:
            markers = [new if m == old else m for m in markers]
        out.append((sid, list(markers), dict(display)))
    return tuple(out)


def som_scenario_3b_segments() -> list[SegmentDescriptor]:
    """Breaker malfunction display: CB6_13 rendered open (green) while its
    far terminal stays closed."""
    table = _with_marker_swap(_SOM_REFERENCE, "seg2", "CB6_13:R", "CB6_13:G")
    return _segments_from_table(table)


def som_scenario_3c_segments() -> list[SegmentDescriptor]:
    """Display value injection: bus 2 shown at 1.02 p.u. instead of 1.04."""
    out = []
    for sid, markers, display in _SOM_REFERENCE:
        display = dict(display)
        if sid == "seg5":
            display["2"] = 1.02
        out.append((sid, list(markers), display))
    return _segments_from_table(tuple(out))


# ---------------------------------------------------------------------------
# Materialization
# ---------------------------------------------------------------------------

def write_fixture_tree(root: str | Path) -> list[Path]:
    """Write every fixture as CSV/JSON files under ``root`` (the layout the
    CLI consumes); returns the created paths."""
    import csv as _csv
    import io as _io
    import json as _json

    root = Path(root)
    created: list[Path] = []

    def put(relative: str, text: str) -> None:
        path = root / relative
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
        created.append(path)

    buf = _io.StringIO()
    w = _csv.writer(buf, lineterminator="\n")
    w.writerow(["Bus", "Attack_Vm", "Original_Vm", "Detected", "Anomaly Detection"])
    for vm, detected in TABLE3_BUS2_POINTS:
        w.writerow([2, "%.9g" % vm, "%.9g" % TABLE4_ORIGINAL_V[1],
                    "TRUE" if detected else "FALSE",
                    "Bad data detected" if detected else "Stealth attack"])
    put("table3_bus2_points.csv", buf.getvalue())

    buf = _io.StringIO()
    w = _csv.writer(buf, lineterminator="\n")
    w.writerow(["Bus No.", "Bus type", "Stealth attack_start point",
                "Stealth attack_end point", "Stealth attack_width", "Original voltage"])
    kinds = ["Slack", "Generator", "Generator", "Load", "Load", "Generator",
             "Load", "Generator", "Load", "Load", "Load", "Load", "Load", "Load"]
    for bus in range(1, 15):
        rng = TABLE4_RANGES[bus]
        if rng is None:
            w.writerow([bus, kinds[bus - 1], "N/A", "N/A", "N/A",
                        "%.9g" % TABLE4_ORIGINAL_V[bus - 1]])
        else:
            w.writerow([bus, kinds[bus - 1], "%.9g" % rng[0], "%.9g" % rng[1],
                        "%.9g" % rng[2], "%.9g" % TABLE4_ORIGINAL_V[bus - 1]])
    put("table4_stealth_ranges.csv", buf.getvalue())

    for name, builder in (
        ("scenario1a_baseline", lambda: scenario_1a_records()[0]),
        ("scenario1a_attacked", lambda: scenario_1a_records(with_recomputed_chi2=True)[1]),
        ("scenario1b_baseline", lambda: scenario_1b_records()[0]),
        ("scenario1b_attacked", lambda: scenario_1b_records(with_recomputed_chi2=True)[1]),
        ("post_se_baseline", post_se_baseline_record),
        ("scenario2a", scenario_2a_record),
        ("scenario2b", scenario_2b_record),
        ("scenario2c", scenario_2c_record),
        ("scenario2d", scenario_2d_record),
    ):
        put(f"{name}.csv", builder().to_csv())

    for group, segments in (
        ("reference", som_reference_segments()),
        ("scenario3b", som_scenario_3b_segments()),
        ("scenario3c", som_scenario_3c_segments()),
    ):
        for seg in segments:
            put(f"som/{group}/{seg.id}.json", seg.to_json() + "\n")
    put(
        "som/reference/arrangement.json",
        _json.dumps({"n": 3, "cells": [list(r) for r in SOM_REFERENCE_CELLS]}, indent=2)
        + "\n",
    )
    return created
