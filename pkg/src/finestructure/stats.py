"""Per-state statistics and the fluctuation distributions of widths and spacings.

Adjacent spacings, normalized to unit mean, are compared with the Wigner
surmise ``p(x) = (pi/2) x exp(-pi x^2 / 4)``. Widths are compared with the
chi-squared family at fixed mean ``<x>``::

    chi(x; n) = (n / (2<x>))**(n/2) / Gamma(n/2) * x**((n-2)/2) * exp(-n x / (2<x>))

whose ``n = 2`` member is the exponential (Porter-Thomas) law.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammainc, gammaln

from .errors import AnalysisError, ConfigError
from .lorentz import MultiLorentzianModel

__all__ = [
    "StateStatistics",
    "DistributionFit",
    "Histogram",
    "FAMILIES",
    "extract_statistics",
    "wigner_pdf",
    "wigner_cdf",
    "chi2_family_pdf",
    "chi2_family_cdf",
    "porter_thomas_pdf",
    "estimate_chi2_dof",
    "ks_statistic",
    "fit_distribution",
    "histogram",
    "statistics_report",
    "write_histogram_csv",
]

FAMILIES = ("wigner", "chi_squared", "porter_thomas")

_DOF_RANGE = (1.0, 1000.0)


@dataclass(frozen=True)
class StateStatistics:
    widths: np.ndarray = field(repr=False)
    intervals: np.ndarray = field(repr=False)
    mean_width: float
    mean_interval: float
    ratio: float

    def to_dict(self) -> dict:
        return {
            "mean_width": self.mean_width,
            "mean_interval": self.mean_interval,
            "ratio": self.ratio,
            "widths": [float(w) for w in self.widths],
            "intervals": [float(t) for t in self.intervals],
        }


@dataclass(frozen=True)
class DistributionFit:
    family: str
    params: dict
    ks_stat: float
    sample_size: int

    def to_dict(self) -> dict:
        return {"family": self.family, "params": dict(self.params),
                "ks_stat": self.ks_stat, "sample_size": self.sample_size}


@dataclass(frozen=True)
class Histogram:
    bin_edges: np.ndarray
    counts: np.ndarray

    @property
    def bin_width(self) -> float:
        return float(self.bin_edges[1] - self.bin_edges[0])


def extract_statistics(model: MultiLorentzianModel) -> StateStatistics:
    """Widths, adjacent intervals and the ratio ``<dt>/<T>`` of a fitted model."""
    if len(model) < 2:
        raise AnalysisError(
            f"need at least 2 states for interval statistics, got {len(model)}")
    widths = model.dt
    t0 = model.t0
    intervals = np.diff(t0)
    if np.any(intervals <= 0):
        raise AnalysisError("coincident state centres give a zero interval")
    mean_width = float(np.mean(widths))
    mean_interval = float(np.mean(intervals))
    widths.flags.writeable = False
    intervals.flags.writeable = False
    return StateStatistics(widths, intervals, mean_width, mean_interval,
                           mean_width / mean_interval)


# ---------------------------------------------------------------------------
# distributions

def _nonnegative(x, name="x"):
    arr = np.asarray(x, dtype=float)
    if np.any(np.isnan(arr)) or np.any(arr < 0):
        raise ConfigError(f"{name} must be non-negative")
    return arr


def _out(arr):
    return float(arr) if arr.ndim == 0 else arr


def wigner_pdf(x):
    """Wigner surmise for spacings normalized to unit mean."""
    x = _nonnegative(x)
    return _out((math.pi / 2.0) * x * np.exp(-math.pi * x * x / 4.0))


def wigner_cdf(x):
    x = _nonnegative(x)
    return _out(-np.expm1(-math.pi * x * x / 4.0))


def _check_family(n, mean):
    if not (math.isfinite(n) and n >= 1):
        raise ConfigError(f"degrees of freedom must be >= 1, got {n}")
    if not (math.isfinite(mean) and mean > 0):
        raise ConfigError(f"mean must be positive, got {mean}")


def chi2_family_pdf(x, n: float, mean: float):
    """Chi-squared density with ``n`` degrees of freedom rescaled to mean ``mean``."""
    _check_family(n, mean)
    x = _nonnegative(x)
    k = n / 2.0
    rate = n / (2.0 * mean)
    with np.errstate(divide="ignore", invalid="ignore"):
        log_p = k * math.log(rate) - gammaln(k) + (k - 1.0) * np.log(x) - rate * x
        p = np.exp(log_p)
    # x = 0 only matters for n <= 2: finite for n = 2, divergent below
    if n == 2:
        p = np.where(x == 0, rate, p)
    elif n < 2:
        p = np.where(x == 0, np.inf, p)
    else:
        p = np.where(x == 0, 0.0, p)
    return _out(np.asarray(p, dtype=float))


def chi2_family_cdf(x, n: float, mean: float):
    _check_family(n, mean)
    x = _nonnegative(x)
    return _out(np.asarray(gammainc(n / 2.0, n * x / (2.0 * mean)), dtype=float))


def porter_thomas_pdf(x, mean: float):
    """The single-channel (``n = 2``, exponential) member of the family."""
    return chi2_family_pdf(x, 2, mean)


def estimate_chi2_dof(widths) -> tuple[float, float]:
    """Moment-matching degrees of freedom ``2 mean^2 / var``, clamped to [1, 1000].

    Returns ``(n_hat, mean)``; the variance is the population variance.
    """
    w = np.asarray(widths, dtype=float)
    if w.ndim != 1 or len(w) < 5:
        raise ConfigError("need at least 5 widths to estimate degrees of freedom")
    if np.any(~np.isfinite(w)) or np.any(w <= 0):
        raise ConfigError("widths must be positive and finite")
    mean = float(np.mean(w))
    var = float(np.var(w))
    if var <= 1e-15 * mean * mean:
        raise AnalysisError("degenerate sample: all widths are equal")
    n_hat = min(max(2.0 * mean * mean / var, _DOF_RANGE[0]), _DOF_RANGE[1])
    return n_hat, mean


def ks_statistic(sample, cdf) -> float:
    """Kolmogorov-Smirnov distance between a sample and a distribution function."""
    x = np.sort(np.asarray(sample, dtype=float))
    n = len(x)
    if n == 0:
        raise ConfigError("sample must not be empty")
    f = np.asarray(cdf(x), dtype=float)
    i = np.arange(1, n + 1)
    return float(np.max(np.maximum(i / n - f, f - (i - 1) / n)))


def fit_distribution(sample, family: str) -> DistributionFit:
    """Fit one of :data:`FAMILIES` to ``sample`` and score it by KS distance.

    ``wigner`` expects spacings and normalizes them by their mean;
    ``chi_squared`` estimates ``n`` by moment matching; ``porter_thomas``
    fixes ``n = 2``. The mean is always the sample mean.
    """
    x = np.asarray(sample, dtype=float)
    if len(x) == 0:
        raise ConfigError("sample must not be empty")
    if np.any(~np.isfinite(x)) or np.any(x <= 0):
        raise ConfigError("sample values must be positive and finite")
    mean = float(np.mean(x))
    if family == "wigner":
        ks = ks_statistic(x / mean, wigner_cdf)
        params = {"mean": mean}
    elif family == "chi_squared":
        n, mean = estimate_chi2_dof(x)
        ks = ks_statistic(x, lambda v: chi2_family_cdf(v, n, mean))
        params = {"n": n, "mean": mean}
    elif family == "porter_thomas":
        ks = ks_statistic(x, lambda v: chi2_family_cdf(v, 2, mean))
        params = {"n": 2.0, "mean": mean}
    else:
        raise ConfigError(f"unknown family {family!r}; choose from {', '.join(FAMILIES)}")
    return DistributionFit(family, params, ks, len(x))


def histogram(sample, bin_width: float) -> Histogram:
    """Counts in right-open bins ``[k w, (k+1) w)`` from zero up past the maximum."""
    if not (math.isfinite(bin_width) and bin_width > 0):
        raise ConfigError(f"bin_width must be positive, got {bin_width}")
    x = _nonnegative(sample, "sample values")
    x = np.atleast_1d(x)
    if len(x) == 0:
        return Histogram(np.array([0.0, bin_width]), np.zeros(1, dtype=int))
    idx = np.floor(x / bin_width).astype(int)
    n_bins = int(idx.max()) + 1
    counts = np.bincount(idx, minlength=n_bins)
    edges = bin_width * np.arange(n_bins + 1)
    return Histogram(edges, counts)


def statistics_report(stats: StateStatistics, fits=()) -> dict:
    """JSON-ready summary: the means, the ratio, the samples and any fits."""
    d = stats.to_dict()
    d["fits"] = [{"family": f.family, "params": dict(f.params), "ks_stat": f.ks_stat}
                 for f in fits]
    return d


def write_histogram_csv(hist: Histogram, path):
    """Two columns, ``bin_left,count``."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["bin_left", "count"])
        for left, c in zip(hist.bin_edges[:-1], hist.counts):
            w.writerow([repr(float(left)), int(c)])
    return path
