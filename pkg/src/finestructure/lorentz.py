"""Lorentzian states and their superposition.

A state with peak value ``m0``, centre ``t0`` and full width at half maximum
``dt`` has the profile::

    L(t) = m0 / (1 + X**2),    X = 2 * (t - t0) / dt

so ``L(t0) = m0`` and ``L(t0 +- dt/2) = m0/2``. Its area is ``pi * m0 * dt / 2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError

__all__ = [
    "LorentzianPeak",
    "MultiLorentzianModel",
    "ModelMean",
    "eval_peak",
    "eval_model",
    "area",
    "model_mean",
]


@dataclass(frozen=True)
class LorentzianPeak:
    m0: float
    t0: float
    dt: float

    def __post_init__(self):
        if not (math.isfinite(self.m0) and self.m0 > 0):
            raise ConfigError(f"peak amplitude must be positive, got {self.m0}")
        if not (math.isfinite(self.dt) and self.dt > 0):
            raise ConfigError(f"peak width must be positive, got {self.dt}")
        if not math.isfinite(self.t0):
            raise ConfigError("peak centre must be finite")
        for name in ("m0", "t0", "dt"):
            object.__setattr__(self, name, float(getattr(self, name)))

    def scaled(self, c: float) -> "LorentzianPeak":
        return LorentzianPeak(self.m0 * c, self.t0, self.dt)

    def shifted(self, s: float) -> "LorentzianPeak":
        return LorentzianPeak(self.m0, self.t0 + s, self.dt)


@dataclass(frozen=True)
class MultiLorentzianModel:
    """Sum of Lorentzian peaks on a constant baseline. Peaks are kept sorted by ``t0``."""

    peaks: tuple = ()
    baseline: float = 0.0

    def __post_init__(self):
        if not math.isfinite(self.baseline):
            raise ConfigError("baseline must be finite")
        peaks = tuple(sorted(self.peaks, key=lambda p: p.t0))
        object.__setattr__(self, "peaks", peaks)
        object.__setattr__(self, "baseline", float(self.baseline))

    def __len__(self):
        return len(self.peaks)

    @property
    def t0(self) -> np.ndarray:
        return np.array([p.t0 for p in self.peaks])

    @property
    def m0(self) -> np.ndarray:
        return np.array([p.m0 for p in self.peaks])

    @property
    def dt(self) -> np.ndarray:
        return np.array([p.dt for p in self.peaks])

    @classmethod
    def from_arrays(cls, m0, t0, dt, baseline=0.0) -> "MultiLorentzianModel":
        peaks = [LorentzianPeak(a, b, c) for a, b, c in zip(m0, t0, dt)]
        return cls(tuple(peaks), baseline)

    def to_dict(self) -> dict:
        return {
            "baseline": self.baseline,
            "peaks": [{"m0": p.m0, "t0": p.t0, "dt": p.dt} for p in self.peaks],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MultiLorentzianModel":
        try:
            peaks = [LorentzianPeak(float(p["m0"]), float(p["t0"]), float(p["dt"]))
                     for p in d["peaks"]]
            return cls(tuple(peaks), float(d.get("baseline", 0.0)))
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"malformed model description: {exc}") from None


def eval_peak(p: LorentzianPeak, t):
    """Value of one Lorentzian state at time(s) ``t``."""
    x = (2.0 / p.dt) * (np.asarray(t, dtype=float) - p.t0)
    out = p.m0 / (1.0 + x * x)
    return float(out) if out.ndim == 0 else out


def eval_model(m: MultiLorentzianModel, t):
    """``baseline + sum of all peaks`` at time(s) ``t``."""
    t = np.asarray(t, dtype=float)
    out = np.full(t.shape, m.baseline)
    for p in m.peaks:
        out = out + eval_peak(p, t)
    return float(out) if out.ndim == 0 else out


def area(p: LorentzianPeak) -> float:
    return math.pi * p.m0 * p.dt / 2.0


@dataclass(frozen=True)
class ModelMean:
    """Mean of a model over a span.

    ``relative_mean`` is ``(mean - baseline) / <m0>``. For equal-amplitude peaks
    spaced ``<T>`` apart each interval carries one area ``pi m0 <dt> / 2``,
    so ``relative_mean ~ (pi/2) <dt>/<T>``; ``implied_ratio`` inverts that
    area-based approximation and is only meaningful for such models.
    """

    mean: float
    relative_mean: float
    implied_ratio: float


def model_mean(m: MultiLorentzianModel, span: Sequence[float],
               panels: int = 10_000) -> ModelMean:
    """Trapezoid-rule mean of ``eval_model`` over ``span = (t_a, t_b)``."""
    t_a, t_b = float(span[0]), float(span[1])
    if not t_a < t_b:
        raise ConfigError(f"degenerate span [{t_a}, {t_b}]")
    t = np.linspace(t_a, t_b, panels + 1)
    mean = float(np.trapezoid(eval_model(m, t), t) / (t_b - t_a))
    if len(m.peaks) == 0:
        return ModelMean(mean, math.nan, math.nan)
    rel = (mean - m.baseline) / float(np.mean(m.m0))
    return ModelMean(mean, rel, 2.0 * rel / math.pi)
