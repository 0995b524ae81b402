import json
import os
import subprocess
import sys
from pathlib import Path

import pytest

from sobdub import cli

GOLDEN_DIR = Path(__file__).parent / "golden"
# set SOBDUB_REGEN_GOLDEN=1 to rewrite the reference outputs
REGEN = os.environ.get("SOBDUB_REGEN_GOLDEN") == "1"

GOLDEN = {
    "constants.json": ["constants", "--p", "2", "--sigma", "2", "--cs", "1"],
    "constants_subelliptic.json": ["constants", "--p", "2", "--sigma", "2", "--s", "8"],
    "doubling_exp.json": ["doubling", "--space", "exp:rate=1", "--center", "0", "--radius", "1"],
    "chain_power.json": ["chain", "--space", "power:alpha=1", "--center", "0", "--radius", "1", "--p", "2", "--sigma", "2"],
    "chain_gauss_2d.json": ["chain", "--space", "gauss:s=1", "--dim", "2", "--center", "0.2,-0.1", "--radius", "0.8", "--grid", "121"],
    "chain_rows.csv": ["chain", "--space", "lebesgue", "--center", "0", "--radius", "1", "--format", "csv"],
    "sweep_exp.csv": ["sweep", "--space", "exp:rate=1", "--center", "0", "--radii", "1:20:8", "--format", "csv"],
    "sweep_lebesgue.json": ["sweep", "--space", "lebesgue", "--center", "0.5", "--center", "-0.5", "--radii", "0.5,1"],
    "estimate.json": ["estimate", "--space", "lebesgue", "--center", "0", "--radius", "1", "--p", "1", "--sigma", "2", "--grid", "401", "--seed", "3", "--restarts", "2"],
    "cutoff_2d.json": ["cutoff-check", "--space", "lebesgue", "--dim", "2", "--center", "0,0", "--radius", "1", "--grid", "101"],
    "grushin.csv": ["grushin", "--grid", "201", "--stencil", "3", "--format", "csv"],
    "subelliptic_identity.json": ["subelliptic", "--q", "identity", "--grid", "101", "--domain=-1:1,-1:1", "--stencil", "1", "--radius", "0.12"],
}


def run(argv, tmp_path, name="out"):
    out = tmp_path / name
    code = cli.main([*argv, "--out", str(out)])
    return code, out.read_bytes() if out.exists() else None


@pytest.mark.parametrize("name", sorted(GOLDEN))
def test_golden_outputs(name, tmp_path):
    code, data = run(GOLDEN[name], tmp_path, name)
    assert code == 0
    path = GOLDEN_DIR / name
    if REGEN:
        path.write_bytes(data)
    assert data == path.read_bytes()


def test_repeat_runs_are_byte_identical(tmp_path):
    argv = GOLDEN["estimate.json"]
    assert run(argv, tmp_path, "a")[1] == run(argv, tmp_path, "b")[1]


def test_threads_do_not_change_sweep(tmp_path, monkeypatch):
    argv = GOLDEN["sweep_lebesgue.json"]
    monkeypatch.setenv("SOBDUB_THREADS", "4")
    assert run(argv, tmp_path)[1] == (GOLDEN_DIR / "sweep_lebesgue.json").read_bytes()


def test_constants_values(tmp_path):
    _, data = run(GOLDEN["constants.json"], tmp_path)
    payload = json.loads(data)
    assert payload["K1"] == 16777216
    assert payload["S"] == 6.0
    assert payload["exponent_psigma_over_sigma_minus1"] == 4.0


def test_sweep_lower_bound_increases(tmp_path):
    _, data = run(GOLDEN["sweep_exp.csv"], tmp_path)
    lines = data.decode().splitlines()
    assert lines[0] == "center,R,J,c_min,doubling,theorem_bound,lower_bound,pass"
    lower = [float(line.split(",")[6]) for line in lines[1:]]
    assert all(a < b for a, b in zip(lower, lower[1:]))
    assert all(line.endswith(",true") for line in lines[1:])


def test_sweep_rows_sorted_by_center_then_radius(tmp_path):
    payload = json.loads(run(GOLDEN["sweep_lebesgue.json"], tmp_path)[1])
    keys = [(row["center"], row["R"]) for row in payload["rows"]]
    assert keys == sorted(keys, key=lambda k: (float(k[0]), k[1]))


def test_config_file_mirrors_flags(tmp_path):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"space": "power:alpha=1", "center": "0", "radius": 1.0, "p": 2.0, "sigma": 2.0}))
    code, data = run(["chain", "--config", str(cfg)], tmp_path)
    assert code == 0
    assert data == (GOLDEN_DIR / "chain_power.json").read_bytes()
    # explicit flags win over the config
    code, data = run(["chain", "--config", str(cfg), "--p", "3"], tmp_path)
    assert json.loads(data)["p"] == 3.0


def test_csv_space_input(tmp_path):
    pts = tmp_path / "pts.csv"
    pts.write_text("id,x,mass\n" + "".join(f"n{k},{k / 100},0.01\n" for k in range(-200, 201)))
    edges = tmp_path / "edges.csv"
    edges.write_text("a,b,cost\n" + "".join(f"n{k},n{k + 1},0.01\n" for k in range(-200, 200)))
    code, data = run(["chain", "--space", str(pts), "--edges", str(edges), "--center-id", "n0", "--radius", "1"], tmp_path)
    assert code == 0
    payload = json.loads(data)
    assert payload["pass"] is True
    assert payload["actual_doubling"] == pytest.approx(2.0, rel=0.02)


def test_tabulated_weight_file(tmp_path):
    table = tmp_path / "w.csv"
    table.write_text("x,weight\n-5,1\n5,1\n")
    code, data = run(["doubling", "--space", f"table:path={table}", "--center", "0", "--radius", "1"], tmp_path)
    assert code == 0
    # open balls on mesh 0.005 hold 799 and 399 nodes
    assert json.loads(data)["ratio"] == pytest.approx(799 / 399, rel=1e-12)
    assert cli.main(["doubling", "--space", f"table:path={tmp_path / 'none.csv'}", "--center", "0", "--radius", "1"]) == 2


BAD_INPUTS = [
    ["chain", "--space", "bogus", "--center", "0", "--radius", "1"],
    ["chain", "--space", "lebesgue", "--center", "0", "--radius", "-1"],
    ["chain", "--space", "lebesgue", "--center", "0,0", "--radius", "1"],
    ["chain", "--space", "lebesgue", "--center", "x", "--radius", "1"],
    ["chain", "--space", "lebesgue", "--radius", "1"],
    ["chain", "--space", "lebesgue", "--center", "0", "--radius", "0.1", "--grid", "20", "--domain=-5:5"],
    ["chain", "--space", "missing.csv", "--center-id", "a", "--radius", "1"],
    ["chain", "--radius", "abc"],
    ["constants", "--p", "0.5"],
    ["constants", "--s", "4"],
    ["sweep", "--space", "lebesgue", "--center", "0", "--radii", "1:2"],
    ["sweep", "--space", "lebesgue", "--center", "0", "--radii", "-1,2"],
    ["doubling", "--space", "lebesgue", "--center", "0", "--radius", "1", "--domain", "0:1,0:1"],
    ["subelliptic", "--radius", "0.5"],
    ["subelliptic", "--s", "4"],
    ["constants", "--format", "csv"],
    ["nonsense"],
    [],
]


@pytest.mark.parametrize("argv", BAD_INPUTS, ids=[" ".join(a) or "empty" for a in BAD_INPUTS])
def test_invalid_input_exits_2(argv, capsys):
    assert cli.main(argv) == 2
    assert capsys.readouterr().err


def test_bad_config_exits_2(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert cli.main(["chain", "--config", str(bad)]) == 2
    bad.write_text(json.dumps({"bogus": 1}))
    assert cli.main(["chain", "--config", str(bad)]) == 2
    bad.write_text("[1, 2]")
    assert cli.main(["chain", "--config", str(bad)]) == 2


def test_certificate_failure_exits_1(tmp_path, monkeypatch):
    real = cli.run_chain

    def broken(*args, **kw):
        report = real(*args, **kw)
        report.certificate = report.certificate.__class__(**{**report.certificate.__dict__, "passed": False})
        return report

    monkeypatch.setattr(cli, "run_chain", broken)
    code, data = run(GOLDEN["chain_power.json"], tmp_path)
    assert code == 1
    assert json.loads(data)["pass"] is False


def test_module_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "sobdub", "constants", "--p", "1", "--sigma", "2"],
        capture_output=True, text=True, check=False,
    )
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["K1"] == 4096
    proc = subprocess.run([sys.executable, "-m", "sobdub", "chain", "--space", "nope"], capture_output=True, text=True, check=False)
    assert proc.returncode == 2
