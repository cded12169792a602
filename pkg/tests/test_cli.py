import json

import numpy as np
import pytest

from marbubble.cli import main
from marbubble.mar_model import ErrorDist, MarModel, simulate
from marbubble.timeseries_io import TimeSeries, load_csv, write_csv


def run(tmp_path, *args):
    return main(["--out-dir", str(tmp_path), *args])


def read_json(path):
    return json.loads(path.read_text())


@pytest.fixture
def series_csv(tmp_path):
    y = simulate(MarModel(1, 1, 0.3, 0.9, ErrorDist.student_t(3)), 400, seed=0)
    p = tmp_path / "in.csv"
    write_csv(p, TimeSeries.from_values(y))
    return p


class TestSimulate:
    ARGS = ["simulate", "--r", "1", "--s", "1", "--phi", "0.3", "--psi", "0.9", "--dist", "t3", "--T", "400", "--seed", "7"]

    def test_rows_and_manifest(self, tmp_path):
        assert run(tmp_path, *self.ARGS) == 0
        ts = load_csv(tmp_path / "series.csv")
        assert len(ts) == 400
        m = read_json(tmp_path / "simulate.manifest.json")
        assert m["seed"] == 7 and m["outputs"] == ["series.csv"]
        assert m["config"]["phi"] == 0.3

    def test_byte_identical(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert run(a, *self.ARGS) == 0 and run(b, *self.ARGS) == 0
        assert (a / "series.csv").read_bytes() == (b / "series.csv").read_bytes()

    def test_global_flags_after_subcommand(self, tmp_path):
        out = tmp_path / "late"
        assert main([*self.ARGS[:-2], "--seed", "7", "--out-dir", str(out)]) == 0
        assert (out / "series.csv").exists()

    def test_json_format(self, tmp_path):
        assert run(tmp_path, "--format", "json", "simulate", "--s", "1", "--r", "0", "--psi", "0.5", "--T", "20") == 0
        d = read_json(tmp_path / "series.json")
        assert len(d["values"]) == 20 and d["manifest"] == "simulate.manifest.json"

    def test_unit_root(self, tmp_path, capsys):
        assert run(tmp_path, "simulate", "--psi", "1.0") == 2
        assert "psi" in capsys.readouterr().err

    def test_bad_flag(self, tmp_path):
        with pytest.raises(SystemExit) as e:
            run(tmp_path, "simulate", "--T", "many")
        assert e.value.code == 2


class TestEstimate:
    def test_fit_report(self, tmp_path, series_csv):
        assert run(tmp_path, "estimate", str(series_csv)) == 0
        d = read_json(tmp_path / "fit.json")
        assert d["theta"]["phi"] == pytest.approx(0.3, abs=0.15)
        assert d["theta"]["psi"] == pytest.approx(0.9, abs=0.15)
        assert set(d["test"]) == {"stat", "df", "pvalue"}
        assert d["config"]["transforms"] == "powers:1,2"
        m = read_json(tmp_path / "estimate.manifest.json")
        assert list(m["inputs"].values())[0] == __import__("hashlib").sha256(series_csv.read_bytes()).hexdigest()

    def test_white_noise(self, tmp_path):
        p = tmp_path / "wn.csv"
        write_csv(p, TimeSeries.from_values(np.random.default_rng(1).standard_t(3, 400)))
        assert run(tmp_path, "estimate", str(p)) == 0
        d = read_json(tmp_path / "fit.json")
        assert abs(d["theta"]["phi"]) < 0.25 and abs(d["theta"]["psi"]) < 0.25

    def test_ols(self, tmp_path, series_csv):
        assert run(tmp_path, "estimate", str(series_csv), "--method", "ols", "--r", "0", "--s", "1") == 0
        assert read_json(tmp_path / "fit.json")["method"] == "ols"
        assert run(tmp_path, "estimate", str(series_csv), "--method", "ols") == 2

    def test_missing_file(self, tmp_path):
        assert run(tmp_path, "estimate", str(tmp_path / "missing.csv")) == 1

    def test_malformed_file(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("date,value\n2020-01-31,x\n")
        assert run(tmp_path, "estimate", str(p)) == 1

    def test_numerical_failure(self, tmp_path):
        p = tmp_path / "flat.csv"
        write_csv(p, TimeSeries.from_values(np.ones(60)))
        assert run(tmp_path, "estimate", str(p)) == 3


class TestDetect:
    def test_outputs(self, tmp_path, series_csv):
        assert run(tmp_path, "detect", str(series_csv)) == 0
        d = read_json(tmp_path / "detect.json")
        assert len(d["points"]) == 399
        assert d["episodes"] and all(e["threshold_q"] == 0.975 for e in d["episodes"])
        assert (tmp_path / "detect.csv").read_text().startswith("date,y,xi,band_lo,band_hi,in_episode")
        assert read_json(tmp_path / "detect.manifest.json")["config"]["threshold"] == 0.975

    def test_constant_input(self, tmp_path):
        p = tmp_path / "flat.csv"
        write_csv(p, TimeSeries.from_values(np.full(60, 5.0)))
        assert run(tmp_path, "detect", str(p)) == 0
        assert read_json(tmp_path / "detect.json")["episodes"] == []

    def test_detrend_option(self, tmp_path, series_csv):
        assert run(tmp_path, "detect", str(series_csv), "--detrend", "--threshold", "0.95") == 0
        d = read_json(tmp_path / "detect.json")
        assert all(e["threshold_q"] == 0.95 for e in d["episodes"])


class TestDuration:
    def test_report(self, tmp_path):
        assert run(tmp_path, "duration", "--phi", "0.24", "--psi", "0.70", "--alpha", "1.3") == 0
        d = read_json(tmp_path / "duration.json")
        # the marginal mean, not the mean given N < 0, is close to -1.5 here
        assert d["E_N"] == pytest.approx(-1.5, abs=0.1)
        assert d["E_N_given_neg"] < d["E_N"]
        assert set(d["interval"]) == {"gamma", "lo", "hi"}

    def test_symmetric(self, tmp_path):
        assert run(tmp_path, "duration", "--phi", "0.5", "--psi", "0.5", "--alpha", "2") == 0
        assert read_json(tmp_path / "duration.json")["E_N"] == 0.0

    def test_bad_alpha(self, tmp_path):
        assert run(tmp_path, "duration", "--psi", "0.5", "--alpha", "-1") == 2


def test_moments(tmp_path):
    args = ["moments", "--y-t", "1", "--y-prev", "0.5", "--phi", "0.3", "--psi", "0.6"]
    assert run(tmp_path, *args) == 0
    d = read_json(tmp_path / "moments.json")
    assert {"printed", "composed", "mismatched_terms"} <= set(d)
    assert run(tmp_path, "moments", "--y-t", "1", "--y-prev", "0.5", "--phi", "0.3", "--psi", "1.5") == 2


class TestMc:
    ARGS = ["mc", "--dists", "t3", "--psis", "0.5,0.9", "--R", "1"]

    def test_smoke(self, tmp_path):
        assert run(tmp_path, *self.ARGS) == 0
        lines = (tmp_path / "mc.csv").read_text().splitlines()
        assert lines[0] == "dist,psi,phi,metric,value,R,failures"
        assert len(lines) == 5
        assert (tmp_path / "mc.txt").exists()

    def test_deterministic(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        args = ["mc", "--dists", "t3,t4", "--psis", "0.3,0.7", "--R", "10", "--seed", "5"]
        assert run(a, *args) == 0 and run(b, *args) == 0
        assert (a / "mc.csv").read_bytes() == (b / "mc.csv").read_bytes()

    def test_json(self, tmp_path):
        assert run(tmp_path, "--format", "json", *self.ARGS) == 0
        assert len(read_json(tmp_path / "mc.json")["cells"]) == 4

    def test_bad_grid(self, tmp_path):
        assert run(tmp_path, "mc", "--dists", "normal", "--R", "1") == 2


def test_detrend(tmp_path):
    p = tmp_path / "line.csv"
    write_csv(p, TimeSeries.from_values(2.0 + 0.5 * np.arange(60)))
    assert run(tmp_path, "detrend", str(p)) == 0
    lines = (tmp_path / "detrended.csv").read_text().splitlines()
    assert lines[0] == "date,value,trend,residual"
    assert max(abs(float(l.split(",")[3])) for l in lines[1:]) < 1e-8


def test_stats(tmp_path, series_csv):
    assert run(tmp_path, "stats", str(series_csv), "--hill-k", "40") == 0
    d = read_json(tmp_path / "stats.json")
    assert d["summary"]["n"] == 400 and d["hill"]["alpha"] > 0
    assert len((tmp_path / "rolling_variance.csv").read_text().splitlines()) == 397


def test_monthly_resampling_flag(tmp_path):
    d = np.arange(np.datetime64("2020-01-01"), np.datetime64("2022-01-01"))
    p = tmp_path / "daily.csv"
    write_csv(p, TimeSeries(d, np.random.default_rng(0).normal(10, 1, d.size)))
    assert run(tmp_path, "stats", str(p), "--monthly") == 0
    assert read_json(tmp_path / "stats.json")["summary"]["n"] == 24
