"""Synthetic trading sessions with known ground truth.

A session is a slow piecewise-linear trend plus three bands of Lorentzian
states (intermediate-I, intermediate-II, fine) and white Gaussian noise.
State centres follow cumulative Wigner-distributed spacings and widths follow
the fixed-mean chi-squared family, so the generated day has exactly the
statistical structure the analysis is meant to recover.

Randomness comes from :func:`numpy.random.default_rng` (PCG64) seeded with
``rng_seed``; bands are drawn in a fixed order (fine, inter_2, inter_1,
noise), so a seed fully determines the session.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .errors import ConfigError
from .lorentz import LorentzianPeak, MultiLorentzianModel, eval_model
from .timeseries import TimeSeries

__all__ = [
    "SynthConfig",
    "SynthSession",
    "sample_wigner",
    "sample_chi2_width",
    "generate_session",
]


@dataclass(frozen=True)
class SynthConfig:
    session_length: float = 23400.0
    step: float = 10.0
    fine_mean_spacing: float = 110.0
    fine_mean_width: float = 57.0
    fine_width_dof: int = 8
    fine_amplitude: float = 1.0
    amplitude_jitter: float = 0.2
    inter2_mean_spacing: float = 720.0
    inter1_mean_spacing: float = 3300.0
    inter_ratio: float = 0.6
    inter_width_dof: int = 8
    inter2_amplitude: float = 1.0
    inter1_amplitude: float = 1.0
    # (time, value) control points; linear in between, held flat outside
    trend: tuple = ((0.0, 13200.0), (11700.0, 13203.0), (23400.0, 13201.0))
    noise_sigma: float = 0.05
    rng_seed: int = 0
    # optional (time, factor): fine widths of states centred after `time`
    # are multiplied by `factor`
    fine_width_change: tuple | None = None

    def __post_init__(self):
        positive = ("session_length", "step", "fine_mean_spacing", "fine_mean_width",
                    "fine_amplitude", "inter2_mean_spacing", "inter1_mean_spacing",
                    "inter_ratio", "inter2_amplitude", "inter1_amplitude")
        for name in positive:
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                raise ConfigError(f"{name} must be positive, got {v!r}")
        for name in ("fine_width_dof", "inter_width_dof"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
        if not self.fine_mean_spacing < self.inter2_mean_spacing < self.inter1_mean_spacing:
            raise ConfigError(
                "spacings must be ordered fine_mean_spacing < inter2_mean_spacing "
                "< inter1_mean_spacing")
        if not 0 <= self.amplitude_jitter < 1:
            raise ConfigError("amplitude_jitter must lie in [0, 1)")
        if not (math.isfinite(self.noise_sigma) and self.noise_sigma >= 0):
            raise ConfigError("noise_sigma must be non-negative")
        if int(self.rng_seed) != self.rng_seed or self.rng_seed < 0:
            raise ConfigError("rng_seed must be a non-negative integer")
        trend = tuple((float(t), float(v)) for t, v in self.trend)
        if not trend or any(b[0] <= a[0] for a, b in zip(trend, trend[1:])):
            raise ConfigError("trend control points need strictly increasing times")
        object.__setattr__(self, "trend", trend)
        if self.fine_width_change is not None:
            t, k = self.fine_width_change
            if not k > 0:
                raise ConfigError("fine_width_change factor must be positive")
            object.__setattr__(self, "fine_width_change", (float(t), float(k)))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["trend"] = [list(p) for p in self.trend]
        if self.fine_width_change is not None:
            d["fine_width_change"] = list(self.fine_width_change)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown synth config keys: {sorted(unknown)}")
        d = dict(d)
        if "trend" in d:
            d["trend"] = tuple(tuple(p) for p in d["trend"])
        if d.get("fine_width_change") is not None:
            d["fine_width_change"] = tuple(d["fine_width_change"])
        return cls(**d)


@dataclass(frozen=True)
class SynthSession:
    series: TimeSeries
    truth_fine: tuple
    truth_inter2: tuple
    truth_inter1: tuple
    config: SynthConfig = field(repr=False)

    def truth(self, band: str) -> MultiLorentzianModel:
        peaks = {"fine": self.truth_fine, "inter_2": self.truth_inter2,
                 "inter_1": self.truth_inter1}[band]
        return MultiLorentzianModel(peaks)

    def true_ratio(self, band: str = "fine") -> float:
        m = self.truth(band)
        return float(np.mean(m.dt) / np.mean(np.diff(m.t0)))


def sample_wigner(rng: np.random.Generator, mean_spacing: float, size=None):
    """Wigner-surmise spacings with the given mean, by inverse transform."""
    if not mean_spacing > 0:
        raise ConfigError("mean_spacing must be positive")
    u = rng.random(size)
    return mean_spacing * np.sqrt(-(4.0 / math.pi) * np.log1p(-u))


def sample_chi2_width(rng: np.random.Generator, n: int, mean_width: float, size=None):
    """Widths from the chi-squared family with ``n`` degrees of freedom and the given mean."""
    if int(n) != n or n < 1:
        raise ConfigError(f"sampling needs a positive integer dof, got {n!r}")
    if not mean_width > 0:
        raise ConfigError("mean_width must be positive")
    n = int(n)
    shape = (n,) if size is None else (*np.atleast_1d(size), n)
    z = rng.standard_normal(shape)
    return (mean_width / n) * np.sum(z * z, axis=-1)


def _lay_centres(rng, mean_spacing, span):
    centres = []
    t = 0.0
    while True:
        t += float(sample_wigner(rng, mean_spacing))
        if t >= span:
            return np.array(centres)
        centres.append(t)


def _band_peaks(rng, mean_spacing, mean_width, dof, amplitude, jitter, span, name,
                width_change=None):
    t0 = _lay_centres(rng, mean_spacing, span)
    if len(t0) == 0:
        raise ConfigError(
            f"session of {span:g} s is too short to hold a {name} state")
    dt = sample_chi2_width(rng, dof, mean_width, size=len(t0))
    if width_change is not None:
        dt = np.where(t0 >= width_change[0], dt * width_change[1], dt)
    m0 = amplitude * (1.0 + jitter * rng.uniform(-1.0, 1.0, size=len(t0)))
    return tuple(LorentzianPeak(a, b, c) for a, b, c in zip(m0, t0, dt))


def _trend(times, points):
    pts = np.asarray(points)
    return np.interp(times, pts[:, 0], pts[:, 1])


def generate_session(cfg: SynthConfig | None = None) -> SynthSession:
    cfg = cfg or SynthConfig()
    n = int(round(cfg.session_length / cfg.step))
    if n < 2:
        raise ConfigError("session_length must cover at least two samples")
    span = (n - 1) * cfg.step
    rng = np.random.default_rng(cfg.rng_seed)

    fine = _band_peaks(rng, cfg.fine_mean_spacing, cfg.fine_mean_width,
                       cfg.fine_width_dof, cfg.fine_amplitude, cfg.amplitude_jitter,
                       span, "fine", cfg.fine_width_change)
    inter2 = _band_peaks(rng, cfg.inter2_mean_spacing,
                         cfg.inter_ratio * cfg.inter2_mean_spacing, cfg.inter_width_dof,
                         cfg.inter2_amplitude, cfg.amplitude_jitter, span, "inter_2")
    inter1 = _band_peaks(rng, cfg.inter1_mean_spacing,
                         cfg.inter_ratio * cfg.inter1_mean_spacing, cfg.inter_width_dof,
                         cfg.inter1_amplitude, cfg.amplitude_jitter, span, "inter_1")

    times = cfg.step * np.arange(n)
    values = _trend(times, cfg.trend)
    for peaks in (inter1, inter2, fine):
        values = values + eval_model(MultiLorentzianModel(peaks), times)
    values = values + cfg.noise_sigma * rng.standard_normal(n)
    series = TimeSeries(0.0, cfg.step, values)
    return SynthSession(series, fine, inter2, inter1, cfg)
