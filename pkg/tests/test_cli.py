import csv
import json

import pytest

from gridsec import fixtures as fx
from gridsec.cli import main
from gridsec.records import GridRecord


@pytest.fixture()
def fixture_dir(tmp_path):
    fx.write_fixture_tree(tmp_path / "fx")
    return tmp_path / "fx"


def run(args):
    return main(args)


def test_solve_writes_record(tmp_path):
    out = tmp_path / "sol.csv"
    assert run(["solve", "--out", str(out)]) == 0
    rec = GridRecord.load(out)
    assert rec.n_bus == 14
    assert len(rec.branches) == 20


def test_solve_with_open_breaker(tmp_path):
    out = tmp_path / "sol.csv"
    assert run(["solve", "--open", "9,10", "--out", str(out)]) == 0
    rec = GridRecord.load(out)
    row = rec.branch_row(9, 10)
    assert not row.in_service and row.p_mw == 0.0


def test_case_json(tmp_path):
    out = tmp_path / "case.json"
    assert run(["case", "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert len(doc["buses"]) == 14


def test_estimate_flags_bad_measurement(tmp_path):
    from gridsec.estimation import measurements_from_state, measurements_to_csv
    from gridsec.network import build_ieee14
    from gridsec.powerflow import solve as pf_solve

    model = build_ieee14()
    sol = pf_solve(model)
    ms = measurements_from_state(model, sol.v, sol.theta)
    clean = tmp_path / "clean.csv"
    clean.write_text(measurements_to_csv(ms))
    assert run(["estimate", "--measurements", str(clean)]) == 0

    bad = ms.replaced(3, ms.entries[3].value + 0.4)
    bad_file = tmp_path / "bad.csv"
    bad_file.write_text(measurements_to_csv(bad))
    out = tmp_path / "report.json"
    assert run(["estimate", "--measurements", str(bad_file), "--out", str(out)]) == 1
    doc = json.loads(out.read_text())
    assert doc["flagged"] is True
    assert doc["suspect"] == 3


def test_attack_vector_commands(tmp_path, capsys):
    assert run(["attack", "1a"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["deltas"]["V3"] == 0.08
    assert run(["attack", "1b", "--noise", "--seed", "3"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["metadata"]["seed"] == 3
    assert run(["attack", "stealth", "--seed", "1"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["provenance"] == "StealthFromC"


def test_attack_topology_and_post_se(tmp_path):
    out = tmp_path / "corrupt.csv"
    assert run(["attack", "topology", "--flip", "2,4", "--out", str(out)]) == 0
    rec = GridRecord.load(out)
    assert not rec.branch_row(2, 4).in_service
    assert rec.branch_row(2, 4).p_mw == pytest.approx(56.1)

    out2 = tmp_path / "postse.csv"
    assert run(["attack", "post-se", "--dp", "4=-95.6", "--out", str(out2)]) == 0
    rec2 = GridRecord.load(out2)
    assert rec2.bus_row(4).p_mw == pytest.approx(-47.8)


def test_sweep_cli_log_format(tmp_path):
    log = tmp_path / "log.csv"
    ranges = tmp_path / "ranges.csv"
    assert run([
        "sweep", "--bus", "2", "--points", "60",
        "--out", str(log), "--ranges-out", str(ranges),
    ]) == 0
    rows = list(csv.reader(log.read_text().splitlines()))
    assert rows[0] == ["Bus", "Attack_Vm", "Original_Vm", "Detected", "Anomaly Detection"]
    assert len(rows) == 61
    assert {r[3] for r in rows[1:]} <= {"TRUE", "FALSE"}
    srows = list(csv.reader(ranges.read_text().splitlines()))
    assert srows[0][0] == "Bus No."
    assert srows[1][1] == "Generator"


def test_detect_exit_codes(tmp_path, fixture_dir):
    base = fixture_dir / "post_se_baseline.csv"
    assert run([
        "detect", "--baseline", str(base), "--snapshot", str(base), "--paper-compat",
    ]) == 0
    attacked = fixture_dir / "scenario2a.csv"
    out = tmp_path / "verdict.json"
    code = run([
        "detect", "--baseline", str(base), "--snapshot", str(attacked),
        "--paper-compat", "--json", str(out),
    ])
    assert code == 1
    doc = json.loads(out.read_text())
    assert doc["class"] == "FdiPostSe"
    stressed = fixture_dir / "scenario2b.csv"
    assert run([
        "detect", "--baseline", str(base), "--snapshot", str(stressed), "--paper-compat",
    ]) == 0  # stress is not an attack class


def test_baseline_fit_and_detect_with_stats(tmp_path, fixture_dir):
    stats = tmp_path / "baseline.json"
    assert run(["baseline-fit", "--out", str(stats)]) == 0
    base = fixture_dir / "scenario1a_baseline.csv"
    snap = fixture_dir / "scenario1a_attacked.csv"
    out = tmp_path / "verdict.json"
    code = run([
        "detect", "--baseline", str(base), "--snapshot", str(snap),
        "--stats", str(stats), "--paper-compat", "--json", str(out),
    ])
    assert code == 1
    doc = json.loads(out.read_text())
    assert doc["class"] == "StealthAttack"
    assert doc["bdd"]["chi2"] == 42.8
    assert doc["feature"]["chi2"] > doc["feature"]["threshold"]


def test_scenario_list_and_run(tmp_path, capsys):
    assert run(["scenario", "list"]) == 0
    out = capsys.readouterr().out
    assert out.count("table5-") == 30
    out_dir = tmp_path / "records"
    assert run(["scenario", "run", "--id", "table5-08", "--out-dir", str(out_dir)]) == 0
    assert (out_dir / "table5-08.csv").exists()
    assert run(["scenario", "run", "--id", "table5-17"]) == 0
    assert "FLAGGED" in capsys.readouterr().out


def test_som_arrange_verify_diff(tmp_path, fixture_dir, capsys):
    ref_dir = fixture_dir / "som" / "reference"
    out = tmp_path / "arrangement.json"
    assert run(["som", "arrange", "--dir", str(ref_dir), "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert doc["unique"] is True
    assert doc["solutions"][0][0][0] == "seg7"

    assert run([
        "som", "verify", "--dir", str(ref_dir),
        "--arrangement", str(ref_dir / "arrangement.json"),
    ]) == 0

    code = run([
        "som", "diff", "--dir", str(fixture_dir / "som" / "scenario3b"),
        "--reference", str(ref_dir), "--out", str(tmp_path / "diff.json"),
    ])
    assert code == 1
    findings = json.loads((tmp_path / "diff.json").read_text())
    assert len(findings) == 1
    assert findings[0]["data"]["breaker"] == "CB6_13"

    code = run([
        "som", "diff", "--dir", str(ref_dir), "--reference", str(ref_dir),
    ])
    assert code == 0


def test_chi2_command(capsys):
    assert run(["chi2", "--df", "71"]) == 0
    assert capsys.readouterr().out.strip().startswith("91.67")
    assert run(["chi2", "--df", "71", "--paper-compat"]) == 0
    assert capsys.readouterr().out.strip() == "89.500000"


def test_config_file_flows_into_detect(tmp_path, fixture_dir):
    cfg = tmp_path / "rules.conf"
    cfg.write_text("loss_ratio_max = 5.0\n")  # surge rule effectively off
    base = fixture_dir / "post_se_baseline.csv"
    snap = fixture_dir / "scenario2b.csv"
    out = tmp_path / "v.json"
    run(["detect", "--baseline", str(base), "--snapshot", str(snap),
         "--paper-compat", "--config", str(cfg), "--json", str(out)])
    doc = json.loads(out.read_text())
    assert all(f["rule"] != "LossSurge" for f in doc["findings"])


def test_usage_error_exit_code():
    with pytest.raises(SystemExit) as err:
        main(["estimate"])  # missing required --measurements
    assert err.value.code == 2
