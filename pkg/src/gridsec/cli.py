"""Command-line interface.

Exit codes: 0 success / nothing flagged, 1 an attack class or display
violation was detected, 2 usage error (argparse default).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path

import numpy as np

from . import fixtures
from .attacks import (
    StateDelta,
    build_scenario_1a,
    build_scenario_1b,
    corrupt_topology_record,
    manipulate_state_vector,
    stealth_from_state_delta,
    sweep_stealth_range,
)
from .detection import (
    RuleConfig,
    baseline_from_json,
    baseline_to_json,
    fit_baseline,
)
from .estimation import (
    bdd_classify,
    build_dc_jacobian,
    measurements_from_csv,
    wls_estimate_ac,
)
from .network import (
    build_ieee14,
    build_topology,
    apply_topology_corruption,
    model_from_json,
    model_to_json,
)
from .pipeline import run_pipeline
from .powerflow import solve
from .records import GridRecord
from .scenarios import TABLE5_SCENARIOS, generate_all, generate_scenario
from .som import (
    GridArrangement,
    diff_against_reference,
    generate_constraints,
    parse_segments,
    solve_arrangement,
    verify_arrangement,
)
from .stats import PAPER_CHI2_THRESHOLD, chi_square_threshold

ATTACK_CLASSES = {"BadData", "StealthAttack", "FdiPostSe"}


def _load_model(arg: str):
    if arg == "ieee14":
        return build_ieee14()
    return model_from_json(Path(arg).read_text())


def _parse_pair(text: str) -> tuple[int, int]:
    f, _, t = text.replace("-", ",").partition(",")
    return int(f), int(t)


def _write_out(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--case", default="ieee14", help="network case: 'ieee14' or a JSON case file")
    p.add_argument("--open", action="append", default=[], metavar="F,T",
                   help="open the breaker pair on branch F-T (repeatable)")


def _topology_for(args, model):
    topo = build_topology(model)
    flips = [_parse_pair(s) for s in args.open]
    if flips:
        topo = apply_topology_corruption(topo, flips)
    return topo


def cmd_solve(args) -> int:
    model = _load_model(args.case)
    topo = _topology_for(args, model)
    sol = solve(model, topo)
    record = GridRecord.from_solution(model, sol, topo)
    _write_out(record.to_csv(), args.out)
    if not sol.converged:
        notes = "; ".join(r.note for r in sol.islands if r.note)
        print(f"warning: {notes or 'did not converge'}", file=sys.stderr)
    return 0


def cmd_estimate(args) -> int:
    model = _load_model(args.case)
    topo = _topology_for(args, model)
    ms = measurements_from_csv(Path(args.measurements).read_text())
    result = wls_estimate_ac(model, ms, delta=args.delta, topology=topo)
    df = len(ms) - (2 * model.n_bus - 1)
    tau = PAPER_CHI2_THRESHOLD if args.paper_compat else chi_square_threshold(max(df, 1), args.alpha)
    verdict = bdd_classify(result, tau)
    doc = {
        "converged": result.converged,
        "iterations": result.iterations,
        "chi2": result.j_value,
        "threshold": tau,
        "flagged": verdict.flagged,
        "suspect": verdict.suspect,
        "v_pu": [round(float(x), 9) for x in result.x_hat.v],
        "theta_deg": [round(float(np.degrees(x)), 9) for x in result.x_hat.theta],
        "residuals": [round(float(r), 9) for r in result.residuals],
    }
    _write_out(json.dumps(doc, indent=2, sort_keys=True) + "\n", args.out)
    return 1 if verdict.flagged else 0


def cmd_attack(args) -> int:
    model = _load_model(args.case)
    if args.kind == "1a":
        _write_out(build_scenario_1a().to_json() + "\n", args.out)
        return 0
    if args.kind == "1b":
        _write_out(build_scenario_1b(noise=args.noise, seed=args.seed).to_json() + "\n", args.out)
        return 0
    if args.kind == "stealth":
        topo = _topology_for(args, model)
        h, labels = build_dc_jacobian(model, topo)
        rng = np.random.default_rng(args.seed)
        c = rng.normal(0.0, args.magnitude, h.shape[1])
        vector = stealth_from_state_delta(h, c, channels=labels)
        _write_out(vector.to_json() + "\n", args.out)
        return 0
    if args.kind == "post-se":
        record = GridRecord.load(args.record) if args.record else fixtures.post_se_baseline_record()
        delta = StateDelta.from_changes(
            record.n_bus,
            dv=dict(_parse_kv(args.dv)),
            dtheta_deg=dict(_parse_kv(args.dtheta)),
            dp_mw=dict(_parse_kv(args.dp)),
            dq_mvar=dict(_parse_kv(args.dq)),
        )
        corrupted = manipulate_state_vector(record, delta)
        _write_out(corrupted.to_csv(), args.out)
        return 0
    if args.kind == "topology":
        record = GridRecord.load(args.record) if args.record else fixtures.post_se_baseline_record()
        corrupted = corrupt_topology_record(record, [_parse_pair(s) for s in args.flip])
        _write_out(corrupted.to_csv(), args.out)
        return 0
    raise AssertionError(args.kind)


def _parse_kv(items) -> list[tuple[int, float]]:
    out = []
    for item in items or []:
        key, _, val = item.partition("=")
        out.append((int(key), float(val)))
    return out


def _sweep_one(payload):
    """Worker: sweep one bus; everything passed in is immutable."""
    model_json, bus, points, window, nerc, threshold = payload
    model = model_from_json(model_json)
    baseline = fixtures.sweep_baseline_measurements(model)
    rng, pts = sweep_stealth_range(
        model, baseline, bus, n_points=points, window=window, nerc=nerc,
        threshold=threshold,
    )
    return bus, rng, pts


def cmd_sweep(args) -> int:
    model = _load_model(args.case)
    baseline = fixtures.sweep_baseline_measurements(model)
    buses = list(range(1, model.n_bus + 1)) if args.all_buses else [args.bus]
    if buses == [None]:
        print("error: provide --bus N or --all-buses", file=sys.stderr)
        return 2
    window = tuple(float(x) for x in args.window.split(","))
    nerc = tuple(float(x) for x in args.nerc.split(","))

    results = {}
    if args.jobs > 1 and len(buses) > 1:
        from concurrent.futures import ProcessPoolExecutor

        payloads = [
            (model_to_json(model), bus, args.points, window, nerc, args.threshold)
            for bus in buses
        ]
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            for bus, rng, pts in pool.map(_sweep_one, payloads):
                results[bus] = (rng, pts)
    else:
        for bus in buses:
            results[bus] = sweep_stealth_range(
                model, baseline, bus,
                n_points=args.points, window=window, nerc=nerc,
                threshold=args.threshold,
            )

    log_buf = io.StringIO()
    log = csv.writer(log_buf, lineterminator="\n")
    log.writerow(["Bus", "Attack_Vm", "Original_Vm", "Detected", "Anomaly Detection"])
    sum_buf = io.StringIO()
    summary = csv.writer(sum_buf, lineterminator="\n")
    summary.writerow(["Bus No.", "Bus type", "Stealth attack_start point",
                      "Stealth attack_end point", "Stealth attack_width",
                      "Original voltage"])
    for bus in sorted(results):
        rng, points = results[bus]
        for pt in points:
            log.writerow([pt.bus, "%.9f" % pt.attack_vm, "%.9f" % pt.original_vm,
                          "TRUE" if pt.detected else "FALSE", pt.label])
        kind = model.buses[bus - 1].kind.value
        if rng.empty:
            summary.writerow([bus, kind, "N/A", "N/A", "N/A", "%.9f" % rng.original_v])
        else:
            summary.writerow([bus, kind, "%.9f" % rng.start, "%.9f" % rng.end,
                              "%.9f" % rng.width, "%.9f" % rng.original_v])
    _write_out(log_buf.getvalue(), args.out)
    if args.ranges_out:
        Path(args.ranges_out).write_text(sum_buf.getvalue())
    else:
        sys.stdout.write(sum_buf.getvalue())
    return 0


def cmd_baseline_fit(args) -> int:
    model = _load_model(args.case)
    outcomes = generate_all(model)
    snapshots, sources = [], []
    skipped = []
    for oc in outcomes:
        if oc.record is not None:
            snapshots.append(oc.record.snapshot(model.base_mva))
            sources.append(oc.spec.id)
        else:
            skipped.append(f"{oc.spec.id}: {oc.error}")
    stats = fit_baseline(snapshots, sources)
    Path(args.out).write_text(baseline_to_json(stats))
    print(f"fitted baseline from {len(snapshots)} scenario records -> {args.out}")
    for line in skipped:
        print(f"skipped {line}", file=sys.stderr)
    return 0


def cmd_detect(args) -> int:
    model = _load_model(args.case)
    baseline = GridRecord.load(args.baseline)
    snapshot = GridRecord.load(args.snapshot)
    stats = baseline_from_json(Path(args.stats).read_text()) if args.stats else None
    config = RuleConfig.from_file(args.config) if args.config else None
    report = run_pipeline(
        baseline, snapshot, model,
        baseline_stats=stats, config=config, paper_compat=args.paper_compat,
    )
    if args.json:
        Path(args.json).write_text(report.to_json() + "\n")
    sys.stdout.write(report.text)
    return 1 if report.verdict.klass.value in ATTACK_CLASSES else 0


def _scenario_one(payload):
    model_json, spec_id = payload
    model = model_from_json(model_json)
    spec = next(s for s in TABLE5_SCENARIOS if s.id == spec_id)
    return generate_scenario(model, spec)


def cmd_scenario(args) -> int:
    model = _load_model(args.case)
    if args.action == "list":
        for spec in TABLE5_SCENARIOS:
            print(f"{spec.id}  {spec.description}")
        return 0
    if args.all:
        if args.jobs > 1:
            from concurrent.futures import ProcessPoolExecutor

            payloads = [(model_to_json(model), s.id) for s in TABLE5_SCENARIOS]
            with ProcessPoolExecutor(max_workers=args.jobs) as pool:
                outcomes = sorted(pool.map(_scenario_one, payloads),
                                  key=lambda oc: oc.spec.id)
        else:
            outcomes = generate_all(model)
    else:
        spec = next((s for s in TABLE5_SCENARIOS if s.id == args.id), None)
        if spec is None:
            print(f"error: unknown scenario id '{args.id}'", file=sys.stderr)
            return 2
        outcomes = [generate_scenario(model, spec)]
    out_dir = Path(args.out_dir) if args.out_dir else None
    failures = 0
    for oc in outcomes:
        if oc.record is None:
            failures += 1
            print(f"{oc.spec.id}: FLAGGED ({oc.error})")
            continue
        line = f"{oc.spec.id}: solved, losses {oc.solution.losses_mw:.3f} MW"
        print(line)
        if out_dir:
            out_dir.mkdir(parents=True, exist_ok=True)
            oc.record.save(out_dir / f"{oc.spec.id}.csv")
    return 0


def cmd_som(args) -> int:
    if args.action == "arrange":
        segments = parse_segments(sorted(Path(args.dir).glob("seg*.json")))
        constraints = generate_constraints(segments)
        solutions = solve_arrangement(segments, constraints, args.n,
                                      max_solutions=args.max_solutions)
        doc = {
            "n": args.n,
            "solutions": [[list(row) for row in s.cells] for s in solutions],
            "count": len(solutions),
            "unique": len(solutions) == 1,
        }
        _write_out(json.dumps(doc, indent=2) + "\n", args.out)
        return 0
    if args.action == "verify":
        segments = parse_segments(sorted(Path(args.dir).glob("seg*.json")))
        constraints = generate_constraints(segments)
        doc = json.loads(Path(args.arrangement).read_text())
        cells = doc["cells"] if isinstance(doc, dict) else doc
        arrangement = GridArrangement(tuple(tuple(row) for row in cells))
        ok, violated = verify_arrangement(arrangement, segments, constraints)
        print("PASS" if ok else "FAIL")
        for c in violated:
            print(f"  violated: {c.kind.value} {c.detail}")
        return 0 if ok else 1
    if args.action == "diff":
        reference = parse_segments(sorted(Path(args.reference).glob("seg*.json")))
        candidate = parse_segments(sorted(Path(args.dir).glob("seg*.json")))
        findings = diff_against_reference(reference, candidate, volt_tol=args.volt_tol)
        doc = [
            {"rule": f.rule.value, "severity": f.severity.value,
             "message": f.message, "data": f.data}
            for f in findings
        ]
        _write_out(json.dumps(doc, indent=2, sort_keys=True) + "\n", args.out)
        violations = [f for f in findings if f.severity.value == "Violation"]
        return 1 if violations else 0
    raise AssertionError(args.action)


def cmd_chi2(args) -> int:
    tau = PAPER_CHI2_THRESHOLD if args.paper_compat else chi_square_threshold(args.df, args.alpha)
    print(f"{tau:.6f}")
    return 0


def cmd_fixtures(args) -> int:
    created = fixtures.write_fixture_tree(args.out)
    print(f"wrote {len(created)} fixture files under {args.out}")
    return 0


def cmd_case(args) -> int:
    _write_out(model_to_json(build_ieee14()) + "\n", args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gridsec",
        description="Power-grid EMS security workbench (14-bus study)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="AC power flow to a record CSV")
    _add_common(p)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_solve)

    p = sub.add_parser("estimate", help="WLS estimation + residual test on a measurement CSV")
    _add_common(p)
    p.add_argument("--measurements", required=True)
    p.add_argument("--delta", type=float, default=1e-6)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--paper-compat", action="store_true")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_estimate)

    p = sub.add_parser("attack", help="construct attack vectors and corrupted records")
    p.add_argument("kind", choices=["stealth", "1a", "1b", "post-se", "topology"])
    _add_common(p)
    p.add_argument("--seed", type=int, default=3)
    p.add_argument("--noise", action="store_true", help="1b: add seeded concealment noise")
    p.add_argument("--magnitude", type=float, default=0.01, help="stealth: std-dev of the state delta")
    p.add_argument("--record", help="post-se/topology: record CSV to corrupt (default: shipped baseline)")
    p.add_argument("--flip", action="append", default=[], metavar="F,T")
    p.add_argument("--dv", action="append", metavar="BUS=VAL")
    p.add_argument("--dtheta", action="append", metavar="BUS=VAL")
    p.add_argument("--dp", action="append", metavar="BUS=VAL")
    p.add_argument("--dq", action="append", metavar="BUS=VAL")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_attack)

    p = sub.add_parser("sweep", help="per-bus stealth-range sweep")
    _add_common(p)
    p.add_argument("--bus", type=int)
    p.add_argument("--all-buses", action="store_true")
    p.add_argument("--points", type=int, default=300)
    p.add_argument("--window", default="0.95,1.10")
    p.add_argument("--nerc", default="0.95,1.05")
    p.add_argument("--threshold", type=float, default=PAPER_CHI2_THRESHOLD)
    p.add_argument("--jobs", type=int, default=1, help="worker processes for --all-buses")
    p.add_argument("--out", help="per-point log CSV")
    p.add_argument("--ranges-out", help="range summary CSV")
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("baseline-fit", help="fit the detector baseline from the scenario catalog")
    _add_common(p)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_baseline_fit)

    p = sub.add_parser("detect", help="run the detection pipeline on a record pair")
    _add_common(p)
    p.add_argument("--baseline", required=True)
    p.add_argument("--snapshot", required=True)
    p.add_argument("--stats", help="baseline statistics artifact (JSON)")
    p.add_argument("--config", help="rule-constant config file (key = value lines)")
    p.add_argument("--paper-compat", action="store_true")
    p.add_argument("--json", help="write the JSON report here")
    p.set_defaults(fn=cmd_detect)

    p = sub.add_parser("scenario", help="contingency catalog")
    p.add_argument("action", choices=["list", "run"])
    _add_common(p)
    p.add_argument("--id")
    p.add_argument("--all", action="store_true")
    p.add_argument("--jobs", type=int, default=1, help="worker processes for --all")
    p.add_argument("--out-dir")
    p.set_defaults(fn=cmd_scenario)

    p = sub.add_parser("som", help="display-segment arrangement tools")
    p.add_argument("action", choices=["arrange", "verify", "diff"])
    p.add_argument("--dir", required=True, help="segment JSON directory")
    p.add_argument("--n", type=int, default=3)
    p.add_argument("--max-solutions", type=int, default=100)
    p.add_argument("--arrangement", help="verify: arrangement JSON file")
    p.add_argument("--reference", help="diff: reference segment directory")
    p.add_argument("--volt-tol", type=float, default=0.005)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_som)

    p = sub.add_parser("chi2", help="chi-square detection threshold")
    p.add_argument("--df", type=int, required=True)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--paper-compat", action="store_true")
    p.set_defaults(fn=cmd_chi2)

    p = sub.add_parser("fixtures", help="materialize the shipped fixtures to a directory")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_fixtures)

    p = sub.add_parser("case", help="print the 14-bus case as JSON")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_case)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
