import json
import math

import numpy as np
import pytest

from finestructure.errors import AnalysisError, ConfigError
from finestructure.lorentz import MultiLorentzianModel, eval_model
from finestructure.predictor import (
    fit_window,
    hourly_ratios,
    predict_and_score,
    write_track_csv,
    write_track_json,
)
from finestructure.stats import extract_statistics
from finestructure.synth import SynthConfig, generate_session
from finestructure.timeseries import TimeSeries, decompose


@pytest.fixture(scope="module")
def day():
    s = generate_session(SynthConfig(rng_seed=11))
    return s, decompose(s.series)


def _fine_only(seed=0, noise=0.05, **kw):
    """A session's fine component plus white noise, without the other bands."""
    s = generate_session(SynthConfig(rng_seed=seed, **kw))
    y = eval_model(s.truth("fine"), s.series.times)
    y = y + noise * np.random.default_rng(seed).standard_normal(len(y))
    return s, s.series.with_values(y)


def test_all_zero_band_every_window_insufficient():
    band = TimeSeries(0.0, 10.0, np.zeros(2340))
    windows = hourly_ratios(band)
    assert len(windows) == 7  # six full hours and a trailing half hour
    assert all(not w.sufficient and math.isnan(w.ratio) for w in windows)


def test_tiling_drops_short_trailing_window():
    band = TimeSeries(0.0, 10.0, np.zeros(400))  # 4000 s
    assert [(w.start, w.stop) for w in hourly_ratios(band)] == [(0.0, 3600.0)]


def test_window_ratios_follow_truth():
    s, band = _fine_only(seed=2)
    truth = s.truth("fine")
    for w in hourly_ratios(band):
        k = (truth.t0 >= w.start) & (truth.t0 < w.stop)
        true = extract_statistics(MultiLorentzianModel(
            tuple(p for p, keep in zip(truth.peaks, k) if keep))).ratio
        assert w.sufficient and w.count >= 0.8 * k.sum()
        assert abs(w.ratio - true) < 0.1


def test_early_estimate_consistency(day):
    s, d = day
    kw = dict(response=d.response("fine"), width_range=d.width_range("fine"))
    track = predict_and_score(d.fine, **kw)
    assert track.early_estimate == pytest.approx(
        extract_statistics(track.early_model).ratio, abs=1e-12)
    assert track.max_abs_deviation >= 0
    starts = [w.start for w in track.window_ratios]
    assert starts == [5400.0, 9000.0, 12600.0, 16200.0, 19800.0]
    again = fit_window(d.fine, 0.0, 5400.0, **kw)
    assert again == track.early_model


def test_amplitude_invariance():
    _, band = _fine_only(seed=4, session_length=9000.0, inter2_mean_spacing=720.0)
    a = predict_and_score(band, early_hours=1.0)
    b = predict_and_score(band * 3.0, early_hours=1.0)
    assert b.early_estimate == pytest.approx(a.early_estimate, rel=1e-6)
    for wa, wb in zip(a.window_ratios, b.window_ratios):
        assert wb.ratio == pytest.approx(wa.ratio, rel=1e-6)


def test_midday_width_step_is_detected():
    s, band = _fine_only(seed=1, fine_width_change=(11700.0, 1.5))
    assert predict_and_score(band).max_abs_deviation > 0.05


def test_early_window_too_sparse():
    y = np.zeros(2340)
    t = 10.0 * np.arange(2340)
    for c in (1000.0, 3000.0, 9000.0, 12000.0, 15000.0):
        y += 1.0 / (1.0 + (2 * (t - c) / 60.0) ** 2)
    with pytest.raises(AnalysisError, match="predictor unavailable"):
        predict_and_score(TimeSeries(0.0, 10.0, y))


def test_session_too_short():
    with pytest.raises(ConfigError):
        predict_and_score(TimeSeries(0.0, 10.0, np.zeros(600)))


def test_track_outputs(tmp_path):
    _, band = _fine_only(seed=3, session_length=9000.0, inter2_mean_spacing=720.0)
    track = predict_and_score(band, early_hours=1.0)
    d = json.loads(write_track_json(track, tmp_path / "t.json").read_text())
    assert d["passed"] == track.passed and len(d["windows"]) == len(track.window_ratios)
    lines = write_track_csv(track, tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "window_start,ratio" and len(lines) == 1 + len(track.window_ratios)
