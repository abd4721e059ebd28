import csv
import json
import math
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from kernelforge.cli import EXIT_DATA, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, main, read_config
from kernelforge.report import (SCHEMA, ReportError, RunReport, _clean, dumps, emit_report,
                                load_report)

FAST = ["--depth", "1", "--restarts", "1", "--max-evals", "30", "--families", "SE,PER",
        "--grid", "40"]


def _read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def _column(path, name):
    header, rows = _read_csv(path)
    i = header.index(name)
    return np.array([float(r[i]) for r in rows])


@pytest.fixture(scope="module")
def synth_csv(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "train.csv"
    code = main(["synth", "--kernel", "SE_1{ell=1.5} + PER_1{p=2}", "--n", "40",
                 "--seed", "3", "--out", str(path)])
    assert code == EXIT_OK
    return path


@pytest.fixture(scope="module")
def search_dir(tmp_path_factory, synth_csv):
    out = tmp_path_factory.mktemp("search")
    assert main(["search", "--data", str(synth_csv), "--out", str(out)] + FAST) == EXIT_OK
    return out


# ---------------------------------------------------------------- report format

def test_dumps_uses_17_significant_digits():
    x = 0.1 + 0.2
    text = dumps(_clean({"x": x, "bad": float("nan"), "arr": np.array([1 / 3])}))
    d = json.loads(text)
    assert d["x"] == x
    assert d["bad"] is None
    assert d["arr"] == [1 / 3]
    assert "0.30000000000000004" in text


def test_json_round_trip(search_dir, tmp_path):
    report = load_report(search_dir / "report.json")
    assert report.schema == SCHEMA
    again = tmp_path / "again.json"
    emit_report(report, again, "json")
    assert json.loads(again.read_text()) == json.loads((search_dir / "report.json").read_text())


def test_schema_mismatch_rejected(search_dir):
    d = json.loads((search_dir / "report.json").read_text())
    d["schema"] = "kernelforge-report/0"
    with pytest.raises(ReportError):
        RunReport.from_dict(d)


@pytest.mark.parametrize("text", ["", "{", "[1, 2]"])
def test_corrupt_report_rejected(tmp_path, text):
    p = tmp_path / "r.json"
    p.write_text(text)
    with pytest.raises(ReportError):
        load_report(p)


def test_empty_components_give_metrics_only_bundle(tmp_path):
    report = RunReport("search", metrics={"train_mse": 0.5})
    files = emit_report(report, tmp_path, "csv")
    assert [Path(f).name for f in files] == ["metrics.csv"]
    header, rows = _read_csv(tmp_path / "metrics.csv")
    assert header == ["metric", "value"]
    assert rows == [["train_mse", "0.5"]]


def test_bundle_layout(search_dir):
    header, rows = _read_csv(search_dir / "components.csv")
    assert header == ["index", "label", "file"]
    assert rows
    for _, _, name in rows:
        h, body = _read_csv(search_dir / name)
        assert h == ["x1", "mean", "lower", "upper"]
        assert len(body) == 40


def test_bundle_components_sum_to_posterior(search_dir):
    _, rows = _read_csv(search_dir / "components.csv")
    total = sum(_column(search_dir / name, "mean") for _, _, name in rows)
    _, metrics = _read_csv(search_dir / "metrics.csv")
    shift = float(dict(metrics)["y_shift"])
    post = _column(search_dir / "posterior.csv", "mean")
    np.testing.assert_allclose(total + shift, post, rtol=0, atol=1e-6 * max(1, np.abs(post).max()))


def test_bundle_bands_bracket_mean(search_dir):
    _, rows = _read_csv(search_dir / "components.csv")
    for _, _, name in rows:
        m = _column(search_dir / name, "mean")
        assert np.all(_column(search_dir / name, "lower") <= m)
        assert np.all(m <= _column(search_dir / name, "upper"))


def test_csv_numbers_are_17_digit(search_dir):
    _, body = _read_csv(search_dir / "posterior.csv")
    for row in body:
        for cell in row:
            assert float("%.17g" % float(cell)) == float(cell)
            assert cell == "%.17g" % float(cell)


# ---------------------------------------------------------------- CLI commands

def test_synth_writes_truth(synth_csv):
    truth = json.loads(synth_csv.with_name(synth_csv.name + ".truth.json").read_text())
    assert truth["noise_variance"] > 0
    header, rows = _read_csv(synth_csv)
    assert len(rows) == 40 and len(header) == 2


def test_search_report_contents(search_dir):
    d = json.loads((search_dir / "report.json").read_text())
    assert d["schema"] == SCHEMA and d["command"] == "search"
    assert d["model"]["bic"] <= d["search"]["noise_only_bic"] + 1e-9
    assert len(d["residuals"]) == 40


def test_predict_reproduces_stored_posterior(search_dir, tmp_path):
    d = json.loads((search_dir / "report.json").read_text())
    grid = np.asarray(d["posterior"]["x"], dtype=float).reshape(-1, 1)
    q = tmp_path / "q.csv"
    q.write_text("".join("%.17g\n" % v for v in grid[:, 0]))
    out = tmp_path / "pred"
    assert main(["predict", "--model", str(search_dir / "report.json"), "--data", str(q),
                 "--out", str(out)]) == EXIT_OK
    mean = _column(out / "predictions.csv", "mean")
    np.testing.assert_allclose(mean, d["posterior"]["mean"], rtol=0, atol=1e-8)
    var = _column(out / "predictions.csv", "variance")
    assert np.all(var >= 0)


def test_predict_scores_targets(search_dir, synth_csv, tmp_path, capsys):
    out = tmp_path / "pred"
    assert main(["predict", "--model", str(search_dir / "report.json"), "--data",
                 str(synth_csv), "--out", str(out)]) == EXIT_OK
    rep = json.loads((out / "report.json").read_text())
    assert set(rep["metrics"]) == {"mse", "mean_log_lik"}
    assert "mse=" in capsys.readouterr().out


def test_decompose_matches_search(search_dir, tmp_path):
    out = tmp_path / "dec"
    assert main(["decompose", "--model", str(search_dir / "report.json"), "--grid", "40",
                 "--out", str(out)]) == EXIT_OK
    a = json.loads((search_dir / "report.json").read_text())
    b = json.loads((out / "report.json").read_text())
    assert [c["label"] for c in a["components"]] == [c["label"] for c in b["components"]]
    for ca, cb in zip(a["components"], b["components"]):
        np.testing.assert_allclose(ca["mean"], cb["mean"], rtol=0, atol=1e-8)


def test_recover_command(tmp_path):
    spec = tmp_path / "spec.cfg"
    spec.write_text("kernel = SE_1\nsnr = 10\nseeds = 0,1\nn = 30\n"
                    "depth = 1\nrestarts = 1\nmax_evals = 30\nfamilies = SE,LIN\n")
    out = tmp_path / "rec"
    assert main(["recover", "--spec", str(spec), "--out", str(out)]) == EXIT_OK
    header, rows = _read_csv(out / "recovery.csv")
    assert header[0] == "true_kernel" and len(rows) == 2
    d = json.loads((out / "report.json").read_text())
    assert d["extra"]["summary"]["SE_1 @ snr=10"]["runs"] == 2


def test_curve_command(tmp_path, synth_csv):
    out = tmp_path / "curve"
    assert main(["curve", "--data", str(synth_csv), "--fractions", "0.5,0.8",
                 "--methods", "linear,se", "--out", str(out)] + FAST[:-2]) == EXIT_OK
    header, rows = _read_csv(out / "curve.csv")
    assert header[:3] == ["method", "fraction", "n_train"]
    assert len(rows) == 4
    assert all(math.isfinite(float(r[3])) for r in rows)


def test_module_entry_point(tmp_path):
    p = subprocess.run([sys.executable, "-m", "kernelforge", "--version"],
                       capture_output=True, text=True)
    assert p.returncode == 0 and "kernelforge" in p.stdout


# ---------------------------------------------------------------- config files

def test_read_config(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("# comment\nmax-evals = 10\n\nseed=4  # trailing\nkernel = a\nkernel = b\n")
    assert read_config(p) == {"max_evals": "10", "seed": "4", "kernel": ["a", "b"]}


def test_config_file_supplies_values_and_flags_override(synth_csv, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(f"data = {synth_csv}\ndepth = 1\nrestarts = 1\nmax_evals = 30\n"
                   "families = SE\nseed = 5\ngrid = 20\nformat = json\n")
    out = tmp_path / "o"
    assert main(["search", "--config", str(cfg), "--out", str(out), "--seed", "9"]) == EXIT_OK
    echo = json.loads((out / "report.json").read_text())["config"]
    assert echo["seed"] == 9          # flag wins
    assert echo["depth"] == 1 and echo["families"] == ["SE"] and echo["grid"] == 20
    assert not (out / "metrics.csv").exists()


# ---------------------------------------------------------------- exit codes

@pytest.mark.parametrize("argv, code", [
    ([], EXIT_USAGE),
    (["search"], EXIT_USAGE),
    (["search", "--data", "x.csv", "--out", "o", "--depth", "two"], EXIT_USAGE),
    (["search", "--data", "x.csv", "--out", "o", "--depth", "-1"], EXIT_USAGE),
    (["synth", "--kernel", "SE_1 +", "--out", "s.csv"], EXIT_USAGE),
    (["synth", "--kernel", "SE_2", "--D", "1", "--out", "s.csv"], EXIT_USAGE),
    (["synth", "--kernel", "SE_1", "--n", "0", "--out", "s.csv"], EXIT_USAGE),
    (["search", "--data", "missing.csv", "--out", "o"], EXIT_DATA),
    (["predict", "--model", "missing.json", "--data", "q.csv", "--out", "o"], EXIT_DATA),
])
def test_exit_codes(tmp_path, monkeypatch, argv, code, capsys):
    monkeypatch.chdir(tmp_path)
    assert main(argv) == code
    if code != EXIT_USAGE or argv:
        assert capsys.readouterr().err


def test_unknown_config_key_is_usage_error(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("bogus = 1\n")
    assert main(["search", "--config", str(cfg), "--data", "x", "--out", "o"]) == EXIT_USAGE


def test_non_numeric_cell_is_data_error(tmp_path, capsys):
    p = tmp_path / "bad.csv"
    p.write_text("x,y\n1,2\n2,abc\n")
    assert main(["search", "--data", str(p), "--out", str(tmp_path / "o")]) == EXIT_DATA
    assert "row 2" in capsys.readouterr().err


@pytest.mark.filterwarnings("ignore:overflow")
def test_unfactorizable_prior_is_numerical_failure(tmp_path, capsys):
    # the signal variances overflow to inf, so no jitter level can factorize K
    out = tmp_path / "s.csv"
    code = main(["synth", "--kernel", "SE_1{sf=1e300, ell=1e300} * SE_1{sf=1e300}",
                 "--n", "5", "--snr", "inf", "--out", str(out)])
    assert code == EXIT_NUMERIC
    assert "numerical failure" in capsys.readouterr().err
