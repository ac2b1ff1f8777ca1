import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from poisson_eb.cli import main
from poisson_eb.estimators import erm_fit, robbins_table, tabulate
from poisson_eb.mindist import GridMixingDistribution

UNIFORM = '{"kind": "uniform", "lo": 0, "hi": 10}'


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


@pytest.fixture
def sample(tmp_path):
    out = tmp_path / "s.csv"
    assert main(["simulate", "--prior", UNIFORM, "--n", "400", "--seed", "5", "--out", str(out)]) == 0
    return out


def test_simulate_format(sample):
    rows = _rows(sample)
    assert rows[0] == ["theta", "x"]
    assert len(rows) == 401
    for theta, x in rows[1:]:
        assert 0 <= float(theta) <= 10 and int(x) >= 0


def test_simulate_prior_from_file(tmp_path):
    p = tmp_path / "prior.json"
    p.write_text(json.dumps({"kind": "point_masses", "atoms": [0.0], "weights": [1.0]}))
    out = tmp_path / "s.csv"
    assert main(["simulate", "--prior", str(p), "--n", "4", "--seed", "1", "--out", str(out)]) == 0
    assert [r[1] for r in _rows(out)[1:]] == ["0"] * 4


def test_estimate_matches_library(sample, tmp_path):
    xs = [int(r[1]) for r in _rows(sample)[1:]]
    counts = tabulate(xs)
    out = tmp_path / "e.csv"
    assert main(["estimate", "--prior-data", str(sample), "--estimator", "erm", "--k", "2",
                 "--out", str(out)]) == 0
    rows = _rows(out)
    assert rows[0] == ["x", "count", "estimate"]
    assert [float(r[2]) for r in rows[1:]] == erm_fit(counts, 2).values.tolist()
    assert [int(r[1]) for r in rows[1:]] == counts.freq.tolist()
    assert main(["estimate", "--prior-data", str(sample), "--estimator", "robbins", "--k", "1",
                 "--clip", "0,10", "--out", str(out)]) == 0
    got = np.array([float(r[2]) for r in _rows(out)[1:]])
    expected = robbins_table(counts, 1, clip=(0, 10))
    np.testing.assert_array_equal(got, expected)


def test_estimate_count_table_input(tmp_path):
    data = tmp_path / "counts.csv"
    data.write_text("x,count\n0,3\n2,1\n")
    out = tmp_path / "e.csv"
    assert main(["estimate", "--prior-data", str(data), "--estimator", "robbins", "--k", "2",
                 "--out", str(out)]) == 0
    rows = _rows(out)
    assert rows[1] == ["0", "3", repr(2 * 1 / 3)]
    assert rows[2][2] == "nan"


def test_estimate_plugin_writes_mixture(sample, tmp_path):
    out, mix = tmp_path / "e.csv", tmp_path / "m.csv"
    assert main(["estimate", "--prior-data", str(sample), "--estimator", "npmle-plugin", "--k", "3",
                 "--h", "10", "--mixture-out", str(mix), "--out", str(out)]) == 0
    fitted = GridMixingDistribution.from_csv(mix)
    assert fitted.atoms.max() <= 10


def test_estimate_errors(sample, tmp_path, capsys):
    out = tmp_path / "e.csv"
    assert main(["estimate", "--prior-data", str(sample), "--estimator", "erm", "--k", "1",
                 "--clip", "3,1", "--out", str(out)]) == 1
    assert "a < b" in capsys.readouterr().err
    assert main(["estimate", "--prior-data", str(sample), "--estimator", "oracle", "--k", "1",
                 "--out", str(out)]) == 1


def test_approx_output(tmp_path):
    out = tmp_path / "a.csv"
    assert main(["approx", "--functional", "cube", "--h", "10", "--degree", "3", "--out", str(out)]) == 0
    assert _rows(out) == [["power", "coefficient"], ["0", "0.0"], ["1", "0.0"], ["2", "0.0"], ["3", "1.0"]]


def test_bench_outputs(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"prior": {"kind": "uniform", "lo": 0, "hi": 10},
                               "functional": {"kind": "moment", "k": 2},
                               "estimators": ["erm", "mom"], "n_grid": [30, 60], "replicates": 2, "seed": 3}))
    assert main(["bench", "--config", str(cfg), "--out-dir", str(tmp_path / "o")]) == 0
    names = sorted(p.name for p in (tmp_path / "o").iterdir())
    assert names == ["mean_regret.svg", "records.csv", "rmse.svg"]
    assert len(_rows(tmp_path / "o" / "records.csv")) == 5


def test_console_entry_point(tmp_path):
    out = tmp_path / "a.csv"
    res = subprocess.run([sys.executable, "-m", "poisson_eb.cli", "approx", "--functional", "exp", "--h", "1",
                          "--degree", "4", "--out", str(out)], capture_output=True, text=True)
    assert res.returncode == 0 and out.exists()
