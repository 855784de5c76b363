import json
import subprocess
import sys

import numpy as np
import pytest

from htnet.cli import run
from htnet.io import read_csv

SYM = {"J": 2, "K": 2, "mu": [1, 1], "eta": [2, 2], "P": [[0.5, 0.5], [0.5, 0.5]], "Q": [[0.5, 0.5], [0.5, 0.5]]}


@pytest.fixture
def workdir(tmp_path):
    (tmp_path / "good.json").write_text(json.dumps(SYM))
    bad = dict(SYM, eta=[2, 4])
    (tmp_path / "ht2.json").write_text(json.dumps(bad))
    broken = dict(SYM, P=[[0.5, 0.4], [0.5, 0.5]])
    (tmp_path / "broken.json").write_text(json.dumps(broken))
    return tmp_path


def pipeline(d, tag):
    d = str(d)
    assert run(["simulate", f"{d}/good.json", "--n", "50", "--horizon", "1", "--grid", "0.01", "--reps", "3",
                "--seed", "42", "--out", f"{d}/paths{tag}.csv"]) == 0
    assert run(["scale", f"{d}/paths{tag}.csv", "--out", f"{d}/scaled{tag}.csv"]) == 0
    assert run(["regulate", f"{d}/scaled{tag}.csv", "--mode", "forward", "--out", f"{d}/reg{tag}.csv"]) == 0
    assert run(["limit", f"{d}/good.json", "--grid", "0.01", "--horizon", "1", "--reps", "3", "--seed", "7",
                "--out", f"{d}/limit{tag}.csv"]) == 0
    run(["compare", f"{d}/good.json", "--n", "16,64", "--reps", "10", "--horizon", "1", "--grid", "0.01",
         "--seed", "42", "--out", f"{d}/report{tag}.json"])
    assert run(["oracle", f"{d}/good.json", "--n", "50", "--horizon", "1", "--grid", "0.01", "--reps", "4",
                "--seed", "1", "--out", f"{d}/oracle{tag}.json"]) in (0, 1)
    return [f"paths{tag}.csv", f"scaled{tag}.csv", f"reg{tag}.csv", f"limit{tag}.csv", f"report{tag}.json",
            f"report{tag}.csv", f"oracle{tag}.json"]


def test_validate_exit_codes(workdir, capsys):
    assert run(["validate", str(workdir / "good.json")]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["passes"] and out["m"] == [0.5, 0.5]
    assert run(["validate", str(workdir / "ht2.json")]) == 1
    captured = capsys.readouterr()
    assert "0.25" in captured.err
    assert run(["validate", str(workdir / "broken.json")]) == 1
    assert run(["validate", str(workdir / "broken.json"), "--renormalize", "--tol", "1e-6"]) == 0


def test_pipeline_outputs(workdir):
    pipeline(workdir, "")
    cfg, cols, vals, summ = read_csv(workdir / "paths.csv")
    assert cfg["n"] == 50 and cfg["network"]["J"] == 2
    assert cols[:6] == ["rep", "t", "q_1", "q_2", "v_1", "v_2"]
    assert cols[-1] == "Psi_2_2"
    assert len(vals) == 3 * 101 and len(summ) == 3
    cfg, cols, vals, summ = read_csv(workdir / "reg.csv")
    assert cols == ["rep", "t", "x_1", "x_2", "u_1", "u_2", "y_1", "y_2"]
    assert all(s["residual"] <= 1e-10 and s["iterations"] == 1 for s in summ)
    report = json.loads((workdir / "report.json").read_text())
    assert report["config"]["n"] == [16, 64]
    assert report["thresholds"]["ks_final"] == 0.1


def test_scaled_csv_round_trips_counters(workdir):
    pipeline(workdir, "")
    _, cols, vals, _ = read_csv(workdir / "scaled.csv")
    xi = vals[:, [cols.index("xi_1"), cols.index("xi_2")]]
    zeta = vals[:, [cols.index("zeta_1"), cols.index("zeta_2")]]
    assert np.max(np.abs(xi.sum(axis=1) + zeta.sum(axis=1))) <= 1e-9


def test_every_subcommand_is_byte_deterministic(tmp_path, monkeypatch):
    outputs = []
    for name in ("a", "b"):
        d = tmp_path / name
        d.mkdir()
        (d / "good.json").write_text(json.dumps(SYM))
        monkeypatch.chdir(d)
        files = pipeline(".", "")
        outputs.append({f: (d / f).read_bytes() for f in files})
    assert outputs[0] == outputs[1]


def test_same_argv_same_bytes(workdir):
    argv = ["simulate", str(workdir / "good.json"), "--n", "40", "--horizon", "1", "--grid", "0.05",
            "--reps", "2", "--seed", "3", "--out", str(workdir / "p.csv")]
    assert run(argv) == 0
    a = (workdir / "p.csv").read_bytes()
    assert run(argv) == 0
    assert (workdir / "p.csv").read_bytes() == a


def test_numerical_failure_exit_code(workdir):
    d = str(workdir)
    run(["simulate", f"{d}/good.json", "--n", "50", "--horizon", "2", "--grid", "0.01", "--reps", "1",
         "--out", f"{d}/p.csv"])
    run(["scale", f"{d}/p.csv", "--out", f"{d}/s.csv"])
    assert run(["regulate", f"{d}/s.csv", "--mode", "picard", "--max-iter", "1", "--out", f"{d}/r.csv"]) == 2


def test_io_error_exit_code(workdir):
    assert run(["simulate", str(workdir / "good.json"), "--reps", "1", "--horizon", "1",
                "--out", str(workdir / "missing" / "p.csv")]) == 3
    assert run(["validate", str(workdir / "nope.json")]) == 3


def test_usage_errors(workdir):
    with pytest.raises(SystemExit) as exc:
        run(["simulate", str(workdir / "good.json"), "--n", "-5", "--out", "x.csv"])
    assert exc.value.code != 0
    with pytest.raises(SystemExit) as exc:
        run([])
    assert exc.value.code != 0
    assert run(["simulate", str(workdir / "good.json"), "--horizon", "1", "--grid", "0.3",
                "--out", str(workdir / "x.csv")]) == 1


def test_console_entry_point(workdir):
    res = subprocess.run([sys.executable, "-m", "htnet.cli", "validate", str(workdir / "good.json")],
                         capture_output=True, text=True)
    assert res.returncode == 0
    assert json.loads(res.stdout)["passes"]
