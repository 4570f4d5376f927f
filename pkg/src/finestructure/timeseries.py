"""Uniformly sampled series and their decomposition into structural bands.

An intraday index is split into four additive components:

* ``gross``   -- drift over many hours,
* ``inter_1`` -- intermediate structure with states roughly an hour apart,
* ``inter_2`` -- intermediate structure with states roughly ten minutes apart,
* ``fine``    -- fine structure with states one to two minutes apart.

The split is a cascade of centered moving averages applied to successive
residuals, so the four bands always add back up to the input.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError

__all__ = [
    "TimeSeries",
    "BandDecomposition",
    "DecompositionConfig",
    "BandResponse",
    "BANDS",
    "load_csv",
    "write_csv",
    "resample",
    "moving_average",
    "decompose",
]

BANDS = ("gross", "inter_1", "inter_2", "fine")

# relative slack when checking that sample spacings are uniform
_GRID_RTOL = 1e-9


@dataclass(frozen=True)
class TimeSeries:
    """Values sampled at ``start_time + i * step`` (seconds since the open)."""

    start_time: float
    step: float
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim != 1:
            raise ConfigError("values must be one-dimensional")
        if len(values) < 2:
            raise ConfigError("a series needs at least two samples")
        if not np.all(np.isfinite(values)):
            raise ConfigError("series values must be finite")
        if not (math.isfinite(self.step) and self.step > 0):
            raise ConfigError(f"step must be positive, got {self.step}")
        if not math.isfinite(self.start_time):
            raise ConfigError("start_time must be finite")
        values.flags.writeable = False
        object.__setattr__(self, "start_time", float(self.start_time))
        object.__setattr__(self, "step", float(self.step))
        object.__setattr__(self, "values", values)

    def __len__(self):
        return len(self.values)

    @property
    def times(self) -> np.ndarray:
        return self.start_time + self.step * np.arange(len(self.values))

    @property
    def end_time(self) -> float:
        return self.start_time + self.step * (len(self.values) - 1)

    @property
    def duration(self) -> float:
        """Time covered by the samples, counting one step per sample."""
        return self.step * len(self.values)

    def with_values(self, values) -> "TimeSeries":
        return TimeSeries(self.start_time, self.step, values)

    def restrict(self, t_start: float, t_stop: float) -> "TimeSeries":
        """Samples with ``t_start <= t < t_stop``."""
        i0 = max(0, math.ceil((t_start - self.start_time) / self.step - _GRID_RTOL))
        i1 = min(len(self), math.ceil((t_stop - self.start_time) / self.step - _GRID_RTOL))
        if i1 - i0 < 2:
            raise ConfigError(
                f"window [{t_start}, {t_stop}) holds fewer than two samples")
        return TimeSeries(self.start_time + i0 * self.step, self.step,
                          self.values[i0:i1])

    def __add__(self, other):
        _check_same_grid(self, other)
        return self.with_values(self.values + other.values)

    def __sub__(self, other):
        _check_same_grid(self, other)
        return self.with_values(self.values - other.values)

    def __mul__(self, c):
        return self.with_values(self.values * float(c))

    __rmul__ = __mul__


def _check_same_grid(a, b):
    if len(a) != len(b) or a.step != b.step or a.start_time != b.start_time:
        raise ConfigError("series are not on the same grid")


@dataclass(frozen=True)
class DecompositionConfig:
    """Moving-average windows (seconds) for the residual cascade."""

    gross_window: float = 10800.0
    inter1_window: float = 1800.0
    inter2_window: float = 300.0

    def __post_init__(self):
        if not self.gross_window > self.inter1_window > self.inter2_window > 0:
            raise ConfigError(
                "windows must satisfy gross_window > inter1_window > inter2_window > 0")

    def check_against(self, ts: TimeSeries):
        for name in ("gross_window", "inter1_window", "inter2_window"):
            if getattr(self, name) < 3 * ts.step:
                raise ConfigError(f"{name} must be at least 3 samples ({3 * ts.step} s)")


@dataclass(frozen=True)
class BandResponse:
    """The linear map from a raw series onto one of its bands.

    ``stages`` is applied left to right; each is ``("smooth", n)`` for a
    centered ``n``-sample moving average or ``("residual", n)`` for the
    input minus that average. The fine band, for example, is
    ``residual(gross) -> residual(inter_1) -> residual(inter_2)``.
    """

    stages: tuple = ()

    def __post_init__(self):
        stages = tuple((str(k), int(n)) for k, n in self.stages)
        for kind, n in stages:
            if kind not in ("smooth", "residual") or n < 1 or n % 2 == 0:
                raise ConfigError(f"bad response stage ({kind!r}, {n})")
        object.__setattr__(self, "stages", stages)

    @property
    def removes_constants(self) -> bool:
        return any(kind == "residual" for kind, _ in self.stages)

    def apply(self, values) -> np.ndarray:
        """Apply the stages to a 1-D array (or to each column of a 2-D array)."""
        out = np.asarray(values, dtype=float)
        for kind, n in self.stages:
            avg = _box_mean(out, n)
            out = avg if kind == "smooth" else out - avg
        return out

    def local(self, max_window: int) -> "BandResponse":
        """Drop residual stages longer than ``max_window`` samples.

        Such stages barely change structure much narrower than their window
        and are treated as the identity when only an approximation is needed.
        """
        return BandResponse(tuple((k, n) for k, n in self.stages
                                  if k == "smooth" or n <= max_window))


def _box_mean(values, n):
    """Centered ``n``-sample mean along axis 0, averaging only available samples."""
    h = n // 2
    m = values.shape[0]
    c = np.cumsum(values, axis=0)
    c = np.concatenate([np.zeros((1,) + values.shape[1:]), c], axis=0)
    idx = np.arange(m)
    hi = np.minimum(idx + h + 1, m)
    lo = np.maximum(idx - h, 0)
    counts = (hi - lo).astype(float)
    if values.ndim > 1:
        counts = counts.reshape((m,) + (1,) * (values.ndim - 1))
    return (c[hi] - c[lo]) / counts


@dataclass(frozen=True)
class BandDecomposition:
    gross: TimeSeries
    inter_1: TimeSeries
    inter_2: TimeSeries
    fine: TimeSeries
    config: DecompositionConfig = field(default_factory=DecompositionConfig, repr=False)

    def band(self, which: str) -> TimeSeries:
        if which not in BANDS:
            raise ConfigError(f"unknown band {which!r}; choose from {', '.join(BANDS)}")
        return getattr(self, which)

    def response(self, which: str) -> BandResponse:
        """The linear map from the decomposed series onto band ``which``."""
        step = self.fine.step
        n1 = window_samples(self.config.gross_window, step)
        n2 = window_samples(self.config.inter1_window, step)
        n3 = window_samples(self.config.inter2_window, step)
        stages = {
            "gross": (("smooth", n1),),
            "inter_1": (("residual", n1), ("smooth", n2)),
            "inter_2": (("residual", n1), ("residual", n2), ("smooth", n3)),
            "fine": (("residual", n1), ("residual", n2), ("residual", n3)),
        }
        if which not in stages:
            raise ConfigError(f"unknown band {which!r}; choose from {', '.join(BANDS)}")
        return BandResponse(stages[which])

    def width_range(self, which: str) -> tuple[float, float]:
        """Widths (s) of the states that belong to band ``which``.

        A band's states are narrower than half the window that separates it
        from the next coarser band; the coarser bands' states are at least
        half their own window wide, since the average smears anything
        narrower.
        """
        c = self.config
        ranges = {
            "fine": (0.0, c.inter2_window / 2),
            "inter_2": (c.inter2_window / 2, c.inter1_window / 2),
            "inter_1": (c.inter1_window / 2, c.gross_window / 2),
        }
        if which not in ranges:
            raise ConfigError(f"no state width range for band {which!r}")
        return ranges[which]

    def total(self) -> TimeSeries:
        return self.gross + self.inter_1 + self.inter_2 + self.fine


# ---------------------------------------------------------------------------
# CSV input / output

def _parse_time(text: str):
    """Seconds as a float, or ``None`` if ``text`` is wall-clock ``HH:MM[:SS]``."""
    if ":" in text:
        return None
    return float(text)


def _parse_clock(text: str) -> float:
    parts = text.split(":")
    if len(parts) not in (2, 3):
        raise ValueError(f"bad clock time {text!r}")
    h, m = int(parts[0]), int(parts[1])
    s = float(parts[2]) if len(parts) == 3 else 0.0
    if not (0 <= m < 60 and 0 <= s < 60):
        raise ValueError(f"bad clock time {text!r}")
    return 3600.0 * h + 60.0 * m + s


def load_csv(path) -> TimeSeries:
    """Read a ``time,value`` CSV file into a :class:`TimeSeries`.

    Times are seconds (integer or decimal) or ``HH:MM[:SS]`` wall-clock
    strings; clock times are converted to seconds since the first sample.
    A header row is optional. Non-uniform spacing raises :class:`DataError`
    rather than being resampled.
    """
    times, values = [], []
    clock = None
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 2:
                raise DataError(f"expected 2 columns, got {len(row)}", line=lineno)
            t_text, v_text = row[0].strip(), row[1].strip()
            if lineno == 1 and not times:
                try:
                    float(v_text)
                except ValueError:
                    continue  # header
            try:
                is_clock = ":" in t_text
                if clock is None:
                    clock = is_clock
                elif clock != is_clock:
                    raise ValueError("mixed clock and numeric timestamps")
                t = _parse_clock(t_text) if is_clock else float(t_text)
                v = float(v_text)
            except ValueError as exc:
                raise DataError(str(exc), line=lineno) from None
            if not (math.isfinite(t) and math.isfinite(v)):
                raise DataError("non-finite entry", line=lineno)
            if times and t <= times[-1]:
                raise DataError("timestamps must be strictly increasing", line=lineno)
            times.append(t)
            values.append(v)

    if not times:
        raise DataError(f"{path}: no data rows")
    if len(times) < 2:
        raise DataError(f"{path}: need at least two rows")

    t = np.asarray(times)
    if clock:
        t = t - t[0]
    gaps = np.diff(t)
    step = float(gaps[0])
    bad = np.flatnonzero(np.abs(gaps - step) > _GRID_RTOL * max(step, 1.0))
    if len(bad):
        i = int(bad[0])
        raise DataError(
            f"{path}: non-uniform spacing ({gaps[i]:g} s after {step:g} s) "
            f"at sample {i + 1}")
    # refine step over the full span to limit accumulated rounding
    step = float((t[-1] - t[0]) / (len(t) - 1))
    return TimeSeries(float(t[0]), step, np.asarray(values))


def write_csv(ts: TimeSeries, path, header=("time", "value")):
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        if header:
            w.writerow(header)
        for t, v in zip(ts.times, ts.values):
            w.writerow([repr(float(t)), repr(float(v))])
    return path


# ---------------------------------------------------------------------------
# resampling and smoothing

def _integer_ratio(a: float, b: float):
    """``round(a / b)`` if ``a / b`` is (numerically) an integer >= 1, else None."""
    k = round(a / b)
    if k >= 1 and abs(k * b - a) <= 1e-9 * a:
        return int(k)
    return None


def resample(ts: TimeSeries, new_step: float) -> TimeSeries:
    """Move a series onto a grid with spacing ``new_step``.

    Upsampling (``step / new_step`` an integer) interpolates linearly and keeps
    both endpoints. Downsampling (``new_step / step`` an integer ``k``) replaces
    each block of ``k`` consecutive samples by its mean, stamped at the block
    centre; an incomplete trailing block is dropped.
    """
    if not new_step > 0:
        raise ConfigError(f"new_step must be positive, got {new_step}")
    if new_step < ts.step:
        k = _integer_ratio(ts.step, new_step)
        if k is None:
            raise ConfigError(
                f"unsupported resampling ratio: {ts.step} s -> {new_step} s")
        n_out = (len(ts) - 1) * k + 1
        frac = np.arange(n_out) / k
        values = np.interp(frac, np.arange(len(ts)), ts.values)
        return TimeSeries(ts.start_time, ts.step / k, values)

    k = _integer_ratio(new_step, ts.step)
    if k is None:
        raise ConfigError(f"unsupported resampling ratio: {ts.step} s -> {new_step} s")
    if k == 1:
        return ts
    n_out = len(ts) // k
    if n_out < 2:
        raise ConfigError("series too short for the requested downsampling")
    blocks = ts.values[: n_out * k].reshape(n_out, k)
    start = ts.start_time + 0.5 * (k - 1) * ts.step
    return TimeSeries(start, ts.step * k, blocks.mean(axis=1))


def window_samples(window: float, step: float) -> int:
    """Window length in samples, rounded to the nearest odd count (ties go up)."""
    n = window / step
    return 2 * int(math.floor(n / 2.0 + 1e-9)) + 1 if n >= 1 else 1


def moving_average(ts: TimeSeries, window: float) -> TimeSeries:
    """Centered box average; near the ends only available samples are averaged."""
    if window < 3 * ts.step * (1 - 1e-12):
        raise ConfigError(
            f"moving-average window {window} s is shorter than 3 samples ({3 * ts.step} s)")
    n = window_samples(window, ts.step)
    kernel = np.ones(n)
    sums = np.convolve(ts.values, kernel, mode="same")
    counts = np.convolve(np.ones(len(ts)), kernel, mode="same")
    return ts.with_values(sums / counts)


def decompose(ts: TimeSeries, cfg: DecompositionConfig | None = None) -> BandDecomposition:
    """Split ``ts`` into gross, intermediate-I, intermediate-II and fine bands."""
    cfg = cfg or DecompositionConfig()
    cfg.check_against(ts)
    if ts.duration < 2 * cfg.gross_window:
        raise ConfigError(
            f"series spans {ts.duration:g} s; decomposition needs at least "
            f"{2 * cfg.gross_window:g} s (twice the gross window)")
    gross = moving_average(ts, cfg.gross_window)
    rest = ts.values - gross.values
    inter_1 = moving_average(ts.with_values(rest), cfg.inter1_window)
    rest = rest - inter_1.values
    inter_2 = moving_average(ts.with_values(rest), cfg.inter2_window)
    fine = ts.with_values(rest - inter_2.values)
    return BandDecomposition(gross=gross, inter_1=inter_1, inter_2=inter_2, fine=fine,
                             config=cfg)
