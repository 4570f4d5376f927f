"""Early-session estimate of the fine-structure ratio, scored on the rest of the day.

The ratio ``<dt>/<T>`` measured over the first ``early_hours`` of a session
is taken as a forecast for the remainder. The remainder is tiled into
consecutive windows, each fitted independently, and the forecast passes if
no window ratio strays more than ``threshold`` from it.

Each window is fitted on a padded stretch of the band so that states near
its edges are fully constrained, and only states centred inside the window
are kept. A band produced by a filter is fitted through the short stages of
that filter (see :meth:`BandResponse.local`); stages longer than the padded
stretch cannot be evaluated on it and barely touch fine structure anyway.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import AnalysisError, ConfigError
from .fitting import Detection, FitOptions, fit_series
from .lorentz import MultiLorentzianModel
from .stats import extract_statistics
from .timeseries import BandResponse, TimeSeries

__all__ = [
    "WindowRatio",
    "RatioTrack",
    "fit_window",
    "hourly_ratios",
    "predict_and_score",
    "write_track_json",
    "write_track_csv",
]

MIN_STATES = 4
DEFAULT_WINDOW = 3600.0
DEFAULT_PAD = 900.0


@dataclass(frozen=True)
class WindowRatio:
    start: float
    stop: float
    ratio: float
    count: int
    # why the window was excluded; empty when the ratio is usable
    note: str = ""

    @property
    def sufficient(self) -> bool:
        return not self.note

    def to_dict(self) -> dict:
        return {"start": self.start, "stop": self.stop,
                "ratio": None if math.isnan(self.ratio) else self.ratio,
                "count": self.count, "sufficient": self.sufficient, "note": self.note}


@dataclass(frozen=True)
class RatioTrack:
    window_length: float
    window_ratios: tuple
    early_estimate: float
    early_count: int
    max_abs_deviation: float
    threshold: float
    early_model: MultiLorentzianModel = field(repr=False, default=None)

    @property
    def passed(self) -> bool:
        return bool(self.max_abs_deviation <= self.threshold)

    def to_dict(self) -> dict:
        dev = self.max_abs_deviation
        return {
            "window_length": self.window_length,
            "early_estimate": self.early_estimate,
            "early_count": self.early_count,
            "max_abs_deviation": None if math.isnan(dev) else dev,
            "threshold": self.threshold,
            "passed": self.passed,
            "windows": [w.to_dict() for w in self.window_ratios],
        }


def _local_response(response, n_samples):
    if response is None:
        return None
    # a stage is usable if its window fits in the stretch being fitted
    local = response.local(n_samples)
    return BandResponse(tuple((k, n) for k, n in local.stages if n <= n_samples)) \
        if local.stages else None


def fit_window(band: TimeSeries, start: float, stop: float, *, which: str = "fine",
               opts: FitOptions | None = None, det: Detection | None = None,
               response: BandResponse | None = None, pad: float = DEFAULT_PAD,
               width_range=(0.0, math.inf)) -> MultiLorentzianModel:
    """States centred in ``[start, stop)`` from a fit of the padded stretch.

    Only states whose width falls in ``width_range`` are returned; wider or
    narrower ones are structure of other bands picked up by the fit.
    """
    if not stop > start:
        raise ConfigError(f"empty window [{start:g}, {stop:g})")
    if pad < 0:
        raise ConfigError("pad must be non-negative")
    piece = band.restrict(start - pad, stop + pad)
    resp = _local_response(response, len(piece))
    res = fit_series(piece, which, opts, det, resp)
    lo, hi = width_range
    keep = tuple(p for p in res.model.peaks
                 if start <= p.t0 < stop and lo <= p.dt < hi)
    return MultiLorentzianModel(keep, res.model.baseline)


def _window_ratio(band, a, b, min_states, **kw) -> WindowRatio:
    try:
        model = fit_window(band, a, b, **kw)
    except (AnalysisError, ConfigError) as exc:
        return WindowRatio(a, b, math.nan, 0, f"{exc.__class__.__name__}: {exc}")
    if len(model) < min_states:
        return WindowRatio(a, b, math.nan, len(model),
                           f"insufficient: {len(model)} states, need {min_states}")
    return WindowRatio(a, b, extract_statistics(model).ratio, len(model))


def _tiles(t_a, t_b, window):
    """Consecutive windows; a trailing partial one is kept if at least half full."""
    out = []
    a = t_a
    while a < t_b:
        b = min(a + window, t_b)
        if b - a >= 0.5 * window or not out:
            out.append((a, b))
        a += window
    return out


def hourly_ratios(fine_band: TimeSeries, window: float = DEFAULT_WINDOW,
                  fit_opts: FitOptions | None = None, det: Detection | None = None,
                  *, start: float | None = None, which: str = "fine",
                  response: BandResponse | None = None, pad: float = DEFAULT_PAD,
                  width_range=(0.0, math.inf), min_states: int = MIN_STATES) -> list:
    """Ratio ``<dt>/<T>`` in consecutive windows of ``window`` seconds.

    Windows are fitted independently. A window whose fit fails or that holds
    fewer than ``min_states`` states is kept in the list with a NaN ratio
    and a note saying why.

    Parameters
    ----------
    fine_band
        The band to analyse.
    window
        Window length in seconds.
    start
        Where tiling begins (default: the start of the band); tiling ends at
        the end of the band.
    response
        The filter that produced the band, if any.
    pad
        Seconds of context fitted on each side of a window.
    """
    if not window > 0:
        raise ConfigError("window must be positive")
    t_a = fine_band.start_time if start is None else float(start)
    t_end = fine_band.end_time + fine_band.step
    if not t_a < t_end:
        raise ConfigError("tiling starts after the end of the band")
    kw = dict(which=which, opts=fit_opts, det=det, response=response, pad=pad,
              width_range=width_range)
    return [_window_ratio(fine_band, a, b, min_states, **kw)
            for a, b in _tiles(t_a, t_end, window)]


def predict_and_score(fine_band: TimeSeries, early_hours: float = 1.5,
                      window: float = DEFAULT_WINDOW, opts: FitOptions | None = None,
                      *, det: Detection | None = None, threshold: float = 0.03,
                      which: str = "fine", response: BandResponse | None = None,
                      pad: float = DEFAULT_PAD, width_range=(0.0, math.inf),
                      min_states: int = MIN_STATES) -> RatioTrack:
    """Estimate the ratio over the first ``early_hours`` and score it on later windows.

    The later part of the session, from the end of the early span, is tiled
    by :func:`hourly_ratios`. ``max_abs_deviation`` is taken over the
    sufficient later windows (NaN if there are none, which fails the track).

    Raises
    ------
    AnalysisError
        If the early span yields fewer than ``min_states`` states.
    """
    if not early_hours > 0:
        raise ConfigError("early_hours must be positive")
    if not threshold >= 0:
        raise ConfigError("threshold must be non-negative")
    early = 3600.0 * early_hours
    t_a = fine_band.start_time
    if fine_band.duration + fine_band.step < early + window:
        raise ConfigError(
            f"session of {fine_band.duration:g} s is shorter than the early span "
            f"plus one window ({early + window:g} s)")
    kw = dict(which=which, opts=opts, det=det, response=response, pad=pad,
              width_range=width_range)
    try:
        model = fit_window(fine_band, t_a, t_a + early, **kw)
    except AnalysisError as exc:
        raise AnalysisError(f"predictor unavailable: {exc}") from None
    if len(model) < min_states:
        raise AnalysisError(
            f"predictor unavailable: {len(model)} states in the first "
            f"{early_hours:g} h, need {min_states}")
    estimate = extract_statistics(model).ratio
    later = hourly_ratios(fine_band, window, opts, det, start=t_a + early,
                          min_states=min_states, **{k: v for k, v in kw.items()
                                                    if k not in ("opts", "det")})
    devs = [abs(w.ratio - estimate) for w in later if w.sufficient]
    max_dev = max(devs) if devs else math.nan
    return RatioTrack(window, tuple(later), estimate, len(model), max_dev, threshold,
                      model)


def write_track_json(track: RatioTrack, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(track.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def write_track_csv(track: RatioTrack, path):
    """``window_start,ratio`` for the later windows; insufficient ones have an empty ratio."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["window_start", "ratio"])
        for win in track.window_ratios:
            w.writerow([repr(win.start), "" if math.isnan(win.ratio) else repr(win.ratio)])
    return path
