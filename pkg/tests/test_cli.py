import subprocess
import sys

import numpy as np
import pytest
import yaml

from cclift.cli import EXIT_INPUT, EXIT_NUMERIC, EXIT_OK, EXIT_VERIFY, main

# light parameters so each run takes about a second
RUNS = {
    "bracket-table": ["bracket-table", "--system", "cr-sphere", "--s", "3"],
    "flow": ["flow", "--system", "grushin", "--word", "1", "--x", "0,0", "--t", "1"],
    "approx-exp": ["approx-exp", "--system", "cierre", "--word", "12", "--x", "0.3,0.2,0.1"],
    "lift": ["lift", "--submersion", "kernel-example", "--target", "0.5,0.5", "--count", "256", "--steps", "256"],
    "involutivity": ["involutivity", "--system", "cierre", "--count", "40"],
    "ballbox": ["ballbox", "--system", "heisenberg", "--count", "15", "--seed", "3"],
    "palais": ["palais", "--system", "cr-sphere", "--tmax", "2", "--mode", "renewal", "--x", "0.6,-0.2,0.3,0.5"],
    "blowup": ["blowup", "--system", "xy-blowup", "--x", "1,1"],
}


def run(argv, capsys):
    code = main(argv)
    out, err = capsys.readouterr()
    return code, out, err


def summary(out):
    return yaml.safe_load(out)


@pytest.mark.parametrize("name", sorted(RUNS))
def test_subcommand_writes_outputs(name, tmp_path, capsys):
    code, out, _ = run(RUNS[name] + ["--out", str(tmp_path)], capsys)
    assert code == EXIT_OK
    doc = summary(out)
    stem = name.replace("-", "_")
    assert doc["command"] == name
    assert (tmp_path / f"{stem}_summary.yaml").read_text() == out
    assert "seed" in doc and doc["tolerances"] == {"rel": 1e-10, "abs": 1e-12}
    if name != "blowup":
        header = (tmp_path / f"{stem}.csv").read_text().splitlines()[0]
        assert "," in header


@pytest.mark.parametrize("name", sorted(RUNS))
def test_deterministic(name, tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    run(RUNS[name] + ["--out", str(a)], capsys)
    run(RUNS[name] + ["--out", str(b)], capsys)
    files = sorted(p.name for p in a.iterdir())
    assert files == sorted(p.name for p in b.iterdir())
    for f in files:
        assert (a / f).read_bytes() == (b / f).read_bytes()


def test_blowup_example(capsys):
    code, out, _ = run(RUNS["blowup"], capsys)
    t = summary(out)["t_star"]
    assert code == EXIT_OK and abs(t - 1.0) <= 1e-2


def test_blowup_none_for_complete_system(capsys):
    code, out, _ = run(["blowup", "--system", "grushin", "--x", "1,0"], capsys)
    assert code == EXIT_OK and summary(out)["t_star"] is None


def test_cr_sphere_bracket_table(tmp_path, capsys):
    code, out, _ = run(RUNS["bracket-table"] + ["--out", str(tmp_path)], capsys)
    doc = summary(out)
    rels = {r["relation"]: r["residual"] for r in doc["relations"]}
    assert rels["X112 = -4 X2"] <= 1e-10 and rels["X212 = 4 X1"] <= 1e-10
    rows = (tmp_path / "bracket_table.csv").read_text().splitlines()
    assert rows[0].startswith("j,word,degree")
    assert len(rows) == doc["q"] + 1


def test_flow_example(capsys):
    _, out, _ = run(RUNS["flow"], capsys)
    np.testing.assert_allclose(summary(out)["endpoint"], [1.0, 0.0], atol=1e-12)


def test_approx_exp_order(capsys):
    code, out, _ = run(RUNS["approx-exp"], capsys)
    doc = summary(out)
    assert code == EXIT_OK and doc["slope"] >= doc["required_slope"]


def test_lift_report(capsys):
    _, out, _ = run(RUNS["lift"], capsys)
    doc = summary(out)
    assert doc["exit_flag"] == "Completed" and doc["passed"]
    assert doc["lipschitz_observed"] <= 1.01 * doc["speed_bound"]


def test_palais_schedule_file(tmp_path, capsys):
    p = tmp_path / "b.csv"
    p.write_text("t_start,b1,b2\n0,1,0\n0.5,0,-1\n")
    code, out, _ = run(["palais", "--system", "cierre", "--schedule", str(p), "--tmax", "1", "--s", "1"], capsys)
    assert code == EXIT_OK, out


def test_palais_blowup_exit(tmp_path, capsys):
    p = tmp_path / "b.csv"
    p.write_text("t_start,b1,b2\n0,1,1\n")
    argv = ["palais", "--system", "xy-blowup", "--s", "1", "--x", "1,1", "--tmax", "2", "--schedule", str(p)]
    code, out, _ = run(argv, capsys)
    assert code == EXIT_NUMERIC
    assert 0.99 <= summary(out)["blowup"] <= 1.01


def test_spec_file_input(tmp_path, capsys):
    doc = {
        "spec_version": 1,
        "dimension": 2,
        "s": 2,
        "generators": [{"components": [[[1.0, [0, 0]]], []]}, {"components": [[], [[1.0, [1, 0]]]]}],
        "relations": [{"word": [1, 1, 2]}],
    }
    p = tmp_path / "g.yaml"
    p.write_text(yaml.safe_dump(doc))
    code, out, _ = run(["involutivity", "--spec", str(p), "--count", "20"], capsys)
    assert code == EXIT_OK and summary(out)["constant_coefficients"]


@pytest.mark.parametrize(
    "argv",
    [
        ["flow", "--system", "nosuch"],
        ["flow"],
        ["flow", "--system", "grushin", "--x", "1,2,3"],
        ["flow", "--system", "grushin", "--word", "19"],
        ["approx-exp", "--system", "grushin", "--t-grid", "bad"],
        ["ballbox", "--system", "siegel-degenerate"],
        ["palais", "--system", "grushin", "--mode", "sideways"],
        ["lift", "--submersion", "arctan-example", "--target", "a"],
    ],
)
def test_input_errors(argv, capsys):
    code, out, err = run(argv, capsys)
    assert code == EXIT_INPUT
    rec = yaml.safe_load(err)
    assert set(rec) == {"error", "message"}


def test_argparse_errors_exit_one(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["lift", "--target", "1"])
    assert exc.value.code == EXIT_INPUT
    assert "error" in yaml.safe_load(capsys.readouterr().err)


def test_numeric_failure(capsys):
    # reaching f = 30 needs |theta| > 10, outside the domain ball
    code, out, _ = run(["lift", "--submersion", "arctan-example", "--target", "30", "--count", "64"], capsys)
    assert code == EXIT_NUMERIC and summary(out)["exit_flag"] == "LeftDomain"


def test_verification_failure(capsys):
    code, out, _ = run(["ballbox", "--system", "grushin", "--epsilon", "0.05", "--delta", "1.5", "--count", "10"], capsys)
    assert code == EXIT_VERIFY and not summary(out)["passed"]


def test_console_entry_point(tmp_path):
    cmd = [sys.executable, "-m", "cclift", *RUNS["flow"]]
    a = subprocess.run(cmd, capture_output=True, check=True)
    b = subprocess.run(cmd, capture_output=True, check=True)
    assert a.stdout == b.stdout and a.returncode == 0
    bad = subprocess.run([sys.executable, "-m", "cclift", "flow", "--system", "nosuch"], capture_output=True)
    assert bad.returncode == EXIT_INPUT
