import json

import numpy as np
import pytest

from finestructure.cli import main, match_peaks
from finestructure.lorentz import LorentzianPeak, MultiLorentzianModel, eval_model
from finestructure.timeseries import TimeSeries, load_csv, write_csv


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    return code, capsys.readouterr().err


@pytest.fixture(scope="module")
def session(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    assert main(["synth", "--seed", "42", "--out-dir", str(out)]) == 0
    return out


def test_synth_deterministic(tmp_path, session):
    assert main(["synth", "--seed", "42", "--out-dir", str(tmp_path)]) == 0
    for name in ("series.csv", "truth.json"):
        assert (tmp_path / name).read_bytes() == (session / name).read_bytes()
    a = json.loads((tmp_path / "manifest.json").read_text())
    b = json.loads((session / "manifest.json").read_text())
    assert a["config"] == b["config"] and a["true_ratio"] == b["true_ratio"]


def test_synth_manifest_lists_defaults(session):
    m = json.loads((session / "manifest.json").read_text())
    assert m["command"] == "synth" and m["rng_seed"] == 42
    for key in ("session_length", "step", "fine_mean_spacing", "fine_mean_width",
                "fine_width_dof", "noise_sigma", "trend", "inter_ratio"):
        assert key in m["config"]
    assert "timestamp" not in json.dumps(m)


def test_synth_bad_flag(tmp_path, capsys):
    code, err = run(capsys, "synth", "--fine-mean-spacing", "-5", "--out-dir", tmp_path)
    assert code == 2
    assert err.startswith("config_error:") and "--fine-mean-spacing" in err
    assert len(err.strip().splitlines()) == 1


def test_unknown_flag_and_config_file(tmp_path, capsys):
    assert run(capsys, "synth", "--no-such-flag")[0] == 2
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"session_length": 7200.0, "inter1_mean_spacing": 3300.0,
                               "rng_seed": 3}))
    assert run(capsys, "synth", "--config", cfg, "--seed", "4", "--out-dir", tmp_path)[0] == 0
    m = json.loads((tmp_path / "manifest.json").read_text())
    assert m["config"]["session_length"] == 7200.0 and m["rng_seed"] == 4
    cfg.write_text(json.dumps({"bogus": 1}))
    assert run(capsys, "synth", "--config", cfg, "--out-dir", tmp_path)[0] == 2


def test_decompose(tmp_path, session):
    assert main(["decompose", str(session / "series.csv"), "--out-dir", str(tmp_path)]) == 0
    m = json.loads((tmp_path / "manifest.json").read_text())
    assert m["relative_reconstruction_residual"] < 1e-9
    assert np.std(load_csv(tmp_path / "fine.csv").values) > 0


def test_decompose_non_uniform(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("0,1\n60,2\n120,3\n210,4\n")
    code, err = run(capsys, "decompose", bad, "--out-dir", tmp_path)
    assert code == 3 and err.startswith("data_error:")
    assert run(capsys, "decompose", tmp_path / "missing.csv", "--out-dir", tmp_path)[0] == 3


def test_fit_single_peak(tmp_path):
    t = 10.0 * np.arange(360)
    m = MultiLorentzianModel((LorentzianPeak(1.0, 1800.0, 60.0),))
    write_csv(TimeSeries(0.0, 10.0, eval_model(m, t)), tmp_path / "band.csv")
    assert main(["fit", str(tmp_path / "band.csv"), "--out-dir", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "model.json").read_text())
    assert len(doc["model"]["peaks"]) == 1 and doc["rss"] < 1e-12
    assert json.loads((tmp_path / "manifest.json").read_text())["converged"] is True


def test_fit_nothing_detected(tmp_path, capsys):
    write_csv(TimeSeries(0.0, 10.0, np.zeros(400)), tmp_path / "flat.csv")
    code, err = run(capsys, "fit", tmp_path / "flat.csv", "--out-dir", tmp_path)
    assert code == 4 and err.startswith("analysis_error:") and "min-prominence" in err


def test_fit_report_pipeline(tmp_path, session):
    out = tmp_path / "fit"
    assert main(["fit", str(session / "series.csv"), "--decompose", "--out-dir", str(out)]) == 0
    assert json.loads((out / "manifest.json").read_text())["converged"] is True
    rep = tmp_path / "rep"
    assert main(["report", str(out / "model.json"), "--truth", str(session / "truth.json"),
                 "--out-dir", str(rep)]) == 0
    stats = json.loads((rep / "statistics.json").read_text())
    assert {f["family"] for f in stats["fits"]} == {"wigner", "chi_squared", "porter_thomas"}
    m = json.loads((rep / "manifest.json").read_text())
    assert m["matched"] >= 0.7 * m["n_truth"]
    assert (rep / "matched_peaks.csv").exists() and (rep / "width_histogram.csv").exists()


def test_report_reference_day(tmp_path):
    model = MultiLorentzianModel.from_arrays(np.ones(33), 110.0 * np.arange(33), np.full(33, 57.0))
    (tmp_path / "m.json").write_text(json.dumps(model.to_dict()))
    assert main(["report", str(tmp_path / "m.json"), "--out-dir", str(tmp_path)]) == 0
    stats = json.loads((tmp_path / "statistics.json").read_text())
    assert round(stats["ratio"], 2) == 0.52


def test_report_too_few(tmp_path, capsys):
    model = MultiLorentzianModel((LorentzianPeak(1.0, 5.0, 2.0),))
    (tmp_path / "m.json").write_text(json.dumps(model.to_dict()))
    assert run(capsys, "report", tmp_path / "m.json", "--out-dir", tmp_path)[0] == 4


def test_match_peaks_greedy():
    fit = MultiLorentzianModel.from_arrays([1, 1, 1], [0.0, 12.0, 50.0], [5, 5, 5])
    truth = MultiLorentzianModel.from_arrays([1, 1], [4.0, 10.0], [5, 5])
    assert match_peaks(fit, truth, 10.0) == [(0, 0), (1, 1)]
    assert match_peaks(fit, truth, 1.0) == []


def test_predict(tmp_path, session):
    assert main(["predict", str(session / "series.csv"), "--out-dir", str(tmp_path)]) == 0
    track = json.loads((tmp_path / "track.json").read_text())
    assert len(track["windows"]) == 5 and track["threshold"] == 0.03
    assert (tmp_path / "track.csv").read_text().startswith("window_start,ratio")
    assert run_ok_bad_hours(tmp_path, session) == 2


def run_ok_bad_hours(tmp_path, session):
    return main(["predict", str(session / "series.csv"), "--early-hours", "-1",
                 "--out-dir", str(tmp_path)])
