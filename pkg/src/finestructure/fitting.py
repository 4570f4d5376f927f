"""Detect resonant-like states in a band and fit them as overlapping Lorentzians.

The fitter is a damped (Levenberg-Marquardt) least-squares iteration on the
parameters ``(log m0, t0, log dt)`` of every peak plus an optional constant
baseline. Working in logarithms keeps amplitudes and widths positive without
box constraints. Times are measured from the start of the band internally,
which makes a fit independent of where the band sits on the clock.

A band produced by a moving-average cascade is a linear filter of the
underlying series, and the filter reshapes every state (the fine band, for
instance, shows each Lorentzian minus its 5-minute average). Passing that
filter as a :class:`~finestructure.timeseries.BandResponse` makes the fitter
compare the *filtered* model with the band, so the recovered parameters
describe the undistorted states.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solveh_banded
from scipy.signal import find_peaks

from .errors import AnalysisError, ConfigError
from .lorentz import MultiLorentzianModel, eval_model
from .timeseries import BandDecomposition, BandResponse, TimeSeries, window_samples

__all__ = [
    "PeakSeed",
    "FitOptions",
    "Detection",
    "FitResult",
    "BAND_MIN_SEPARATION",
    "detect_peaks",
    "fit_multi_lorentzian",
    "fit_series",
    "fit_band",
    "predict_band",
    "model_and_jacobian",
    "objective_and_gradient",
]

# Minimum separation (s) between seeds for each fittable band.
BAND_MIN_SEPARATION = {"fine": 50.0, "inter_2": 300.0, "inter_1": 1800.0}

_LAMBDA_MAX = 1e16
_LAMBDA_MIN = 1e-12
# Jacobian support radius of each peak, in widths (the Lorentzian has fallen
# to 1/401 of its peak there); the objective itself is never truncated.
SUPPORT_WIDTHS = 10.0
_BLOCK = 128
_MAX_CLEANUPS = 3
# relative RSS tolerance while searching for the number of states
_SEARCH_TOL = 1e-6
# residual stages of a band response longer than this many (median) state
# widths are left out of the Jacobian; the objective always uses all stages
_RESPONSE_JAC_WIDTHS = 20.0
# smallest noise level assumed, relative to the range of the band
_SIGMA_FLOOR = 1e-3


@dataclass(frozen=True)
class PeakSeed:
    t0_guess: float
    m0_guess: float
    dt_guess: float

    def __post_init__(self):
        if not self.m0_guess > 0:
            raise ConfigError(f"seed amplitude must be positive, got {self.m0_guess}")
        if not self.dt_guess > 0:
            raise ConfigError(f"seed width must be positive, got {self.dt_guess}")


@dataclass(frozen=True)
class FitOptions:
    max_iterations: int = 200
    rel_tol: float = 1e-8
    damping_init: float = 1e-3
    merge_fraction: float = 0.25
    free_baseline: bool = False

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ConfigError("max_iterations must be at least 1")
        if not self.rel_tol > 0:
            raise ConfigError("rel_tol must be positive")
        if not self.damping_init > 0:
            raise ConfigError("damping_init must be positive")
        if not 0 < self.merge_fraction < 1:
            raise ConfigError("merge_fraction must lie in (0, 1)")


@dataclass(frozen=True)
class Detection:
    """Seed-detection thresholds for band fits.

    ``None`` picks a default: the band-specific separation from
    :data:`BAND_MIN_SEPARATION`, a prominence of ``prominence_fraction``
    times the band's 1-99 percentile range (so thresholds follow the
    amplitude of the data), and a width limit of ``8 * min_separation``.

    After the first fit, up to ``refine_rounds`` further rounds look for
    peaks in the residual that stand ``residual_snr`` noise deviations
    above it, add them as seeds and refit; a round is kept only if it lowers
    the Bayesian information criterion. Widths are bounded by ``max_width``
    so that slower structure leaking into the band cannot pull a state
    arbitrarily wide.
    """

    min_prominence: float | None = None
    min_separation: float | None = None
    prominence_fraction: float = 0.1
    max_width: float | None = None
    refine_rounds: int = 4
    residual_snr: float = 4.0

    def __post_init__(self):
        if self.min_prominence is not None and not self.min_prominence > 0:
            raise ConfigError("min_prominence must be positive")
        if self.min_separation is not None and not self.min_separation > 0:
            raise ConfigError("min_separation must be positive")
        if not self.prominence_fraction > 0:
            raise ConfigError("prominence_fraction must be positive")
        if self.max_width is not None and not self.max_width > 0:
            raise ConfigError("max_width must be positive")
        if self.refine_rounds < 0:
            raise ConfigError("refine_rounds must be non-negative")
        if not self.residual_snr > 0:
            raise ConfigError("residual_snr must be positive")

    def resolve(self, band: TimeSeries, which: str) -> tuple[float, float]:
        """``(min_prominence, min_separation)`` for ``band``."""
        sep = self.min_separation
        if sep is None:
            if which not in BAND_MIN_SEPARATION:
                raise ConfigError(f"no default separation for band {which!r}")
            sep = BAND_MIN_SEPARATION[which]
        sep = max(sep, band.step)
        prom = self.min_prominence
        if prom is None:
            lo, hi = np.percentile(band.values, [1.0, 99.0])
            prom = self.prominence_fraction * (hi - lo)
            if not prom > 0:
                # flat band: no threshold can find anything
                prom = math.inf
        return prom, sep

    def width_limit(self, min_separation: float) -> float:
        return self.max_width if self.max_width is not None else 8.0 * min_separation


@dataclass
class FitResult:
    model: MultiLorentzianModel
    rss: float
    iterations: int
    converged: bool
    per_peak_ci: list | None = None
    rss_history: list = field(default_factory=list, repr=False)
    merged: int = 0
    # states fitted alongside ``model`` that belong to other bands
    other: MultiLorentzianModel | None = None

    def to_dict(self) -> dict:
        d = {
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
            "rss": float(self.rss),
            "model": self.model.to_dict(),
        }
        if self.per_peak_ci is not None:
            d["per_peak_ci"] = self.per_peak_ci
        if self.other is not None:
            d["other_states"] = self.other.to_dict()["peaks"]
        return d


# ---------------------------------------------------------------------------
# detection

def detect_peaks(band: TimeSeries, min_prominence: float,
                 min_separation: float) -> list[PeakSeed]:
    """Prominent local maxima, thinned to at least ``min_separation`` apart.

    Candidates are visited in order of decreasing prominence (earlier time
    first on ties) and kept when no already-kept maximum lies closer than
    ``min_separation``. Each seed's amplitude guess is its prominence, i.e.
    the height above the higher of its two bounding saddles.
    """
    if not min_prominence > 0:
        raise ConfigError("min_prominence must be positive")
    if min_separation < band.step * (1 - 1e-12):
        raise ConfigError("min_separation must be at least one sample step")
    if math.isinf(min_prominence):
        return []

    idx, props = find_peaks(band.values, prominence=min_prominence)
    if len(idx) == 0:
        return []
    prom = props["prominences"]
    order = np.lexsort((idx, -prom))
    min_gap = min_separation / band.step - 1e-9
    kept: list[int] = []
    kept_prom: list[float] = []
    for j in order:
        i = idx[j]
        if all(abs(i - k) >= min_gap for k in kept):
            kept.append(int(i))
            kept_prom.append(float(prom[j]))

    seeds = [PeakSeed(band.start_time + i * band.step, p, min_separation / 2.0)
             for i, p in zip(kept, kept_prom)]
    seeds.sort(key=lambda s: s.t0_guess)
    return seeds


# ---------------------------------------------------------------------------
# model, jacobian and objective in fit coordinates

def _unpack(params, n_peaks, free_baseline, baseline):
    p = np.asarray(params, dtype=float)
    log_m0 = p[0:3 * n_peaks:3]
    t0 = p[1:3 * n_peaks:3]
    log_dt = p[2:3 * n_peaks:3]
    b = p[3 * n_peaks] if free_baseline else baseline
    return log_m0, t0, log_dt, b


def model_and_jacobian(t, params, n_peaks: int, free_baseline: bool = False,
                       baseline: float = 0.0, jacobian: bool = True):
    """Model values and their partial derivatives in fit coordinates.

    ``params`` is ``[log m0_1, t0_1, log dt_1, ..., (baseline)]``. The
    Jacobian has one column per parameter, in the same order.
    """
    log_m0, t0, log_dt, b = _unpack(params, n_peaks, free_baseline, baseline)
    t = np.asarray(t, dtype=float)
    with np.errstate(over="ignore", invalid="ignore"):
        m0 = np.exp(log_m0)
        dt = np.exp(log_dt)
        x = (2.0 / dt) * (t[:, None] - t0[None, :])
        q = 1.0 / (1.0 + x * x)
        lor = m0 * q
        f = lor.sum(axis=1) + b
        if not jacobian:
            return f, None
        n_par = 3 * n_peaks + (1 if free_baseline else 0)
        jac = np.empty((len(t), n_par))
        jac[:, 0:3 * n_peaks:3] = lor
        jac[:, 1:3 * n_peaks:3] = lor * (4.0 * x / dt) * q
        jac[:, 2:3 * n_peaks:3] = 2.0 * lor * (x * x) * q
        if free_baseline:
            jac[:, -1] = 1.0
    return f, jac


def objective_and_gradient(band: TimeSeries, params, n_peaks: int,
                           free_baseline: bool = False, baseline: float = 0.0):
    """Residual sum of squares and its analytic gradient.

    Times in ``params`` are measured from ``band.start_time``.
    """
    tau = band.times - band.start_time
    f, jac = model_and_jacobian(tau, params, n_peaks, free_baseline, baseline)
    r = band.values - f
    return float(r @ r), -2.0 * (jac.T @ r)


def _model_values(tau, p, n_peaks, free_baseline, baseline):
    m = 3 * n_peaks
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        m0 = np.exp(p[0:m:3])
        scale = 2.0 * np.exp(-p[2:m:3])
        x = np.subtract.outer(tau, p[1:m:3])
        x *= scale
        np.square(x, out=x)
        x += 1.0
        np.divide(m0, x, out=x)
        f = x.sum(axis=1)
    f += p[m] if free_baseline else baseline
    return f


def _predict(tau, p, n_peaks, free_baseline, baseline, resp):
    f = _model_values(tau, p, n_peaks, free_baseline, baseline)
    return f if resp is None else resp.apply(f)


def _rss(y, tau, params, n_peaks, free_baseline, baseline, resp=None):
    # a runaway trial step may overflow; it is then simply rejected
    with np.errstate(over="ignore", invalid="ignore"):
        r = y - _predict(tau, params, n_peaks, free_baseline, baseline, resp)
        val = float(r @ r)
    return val if math.isfinite(val) else math.inf


def _taper(u):
    """1 up to u = 1/2, then a cos^2 roll-off reaching 0 (with zero slope) at u = 1."""
    w = np.cos(np.pi * np.clip(u - 0.5, 0.0, 0.5)) ** 2
    w[u >= 1.0] = 0.0
    return w


def _filter_rows(jb, jresp, first, total):
    """Apply ``jresp`` along the rows of ``jb``, which are samples
    ``first .. first + len(jb) - 1`` of a series of ``total`` samples.

    Rows closer to either end of ``jb`` than the summed half-windows are
    only correct where that end is also an end of the series.
    """
    rows = first + np.arange(len(jb))
    for kind, n in jresp.stages:
        h = n // 2
        c = np.concatenate([np.zeros((1, jb.shape[1])), np.cumsum(jb, axis=0)])
        i = np.arange(len(jb))
        sums = c[np.minimum(i + h + 1, len(jb))] - c[np.maximum(i - h, 0)]
        counts = np.minimum(rows + h + 1, total) - np.maximum(rows - h, 0)
        avg = sums / counts[:, None]
        jb = avg if kind == "smooth" else jb - avg
    return jb


def _normal_equations(tau, r, p, n_peaks, free_b, wide, jresp=None):
    """``J^T J``, ``J^T r`` and the bandwidth of the non-``wide`` peak block.

    Each peak's Jacobian column is confined to ``|t - t0| < SUPPORT_WIDTHS * dt``
    by a smooth taper, which makes the matrix banded when peaks are ordered by
    centre. It is assembled block by block over the samples. With a response
    ``jresp`` each block is computed over a margin of the summed half-windows
    and filtered before use.
    """
    m = 3 * n_peaks
    n_par = m + (1 if free_b else 0)
    m0 = np.exp(p[0:m:3])
    t0 = p[1:m:3]
    dt = np.exp(p[2:m:3])
    radius = SUPPORT_WIDTHS * dt
    lo, hi = t0 - radius, t0 + radius
    a = np.zeros((n_par, n_par))
    g = np.zeros(n_par)
    inner_pos = np.cumsum(~wide) - 1
    span = 0
    n = len(tau)
    margin = sum(w // 2 for _, w in jresp.stages) if jresp is not None else 0
    for s in range(0, n, _BLOCK):
        e = min(s + _BLOCK, n)
        s_ext, e_ext = max(0, s - margin), min(n, e + margin)
        tb = tau[s_ext:e_ext]
        rb = r[s:e]
        act = np.flatnonzero((hi > tb[0]) & (lo < tb[-1]))
        k = len(act)
        inner = inner_pos[act[~wide[act]]]
        if len(inner):
            span = max(span, int(inner[-1] - inner[0]))
        d = tb[:, None] - t0[act]
        x = (2.0 / dt[act]) * d
        q = 1.0 / (1.0 + x * x)
        lor = (m0[act] * q) * _taper(np.abs(d) / radius[act])
        jb = np.empty((len(tb), 3 * k + (1 if free_b else 0)))
        jb[:, 0:3 * k:3] = lor
        jb[:, 1:3 * k:3] = lor * (4.0 * x / dt[act]) * q
        jb[:, 2:3 * k:3] = 2.0 * lor * (x * x) * q
        idx = (3 * act[:, None] + np.arange(3)).ravel()
        if free_b:
            jb[:, -1] = 1.0
            idx = np.append(idx, m)
        if jresp is not None:
            jb = _filter_rows(jb, jresp, s_ext, n)[s - s_ext:e - s_ext]
        a[np.ix_(idx, idx)] += jb.T @ jb
        g[idx] += jb.T @ rb
    return a, g, 3 * span + 2


class _StepSolver:
    """Solves ``(A + lam * diag(D)) x = g`` for a sequence of damping values.

    Parameters of peaks with compact support form a banded block (peaks are
    sorted by centre). Very wide peaks and the baseline couple to almost
    everything; they form a small dense border eliminated by a Schur
    complement.
    """

    def __init__(self, a, g, wide, bandwidth):
        self.a, self.g = a, g
        d = np.diag(a).copy()
        self.d = np.maximum(d, 1e-15 * max(float(d.max()), 1e-300))
        n = len(g)
        self.inner = np.flatnonzero(~wide)
        self.border = np.flatnonzero(wide)
        m = len(self.inner)
        self.u = min(bandwidth, max(m - 1, 0))
        self.banded = m > 0 and self.u < m // 2 and len(self.border) < n // 4
        if self.banded:
            u = self.u
            # upper banded storage: ab[u + i - j, j] = a[i, j]
            cols = np.arange(m)
            offs = np.arange(u, -1, -1)[:, None]
            rows = cols - offs
            valid = rows >= 0
            inner = self.inner
            self.ab = np.where(
                valid, a[inner[np.clip(rows, 0, None)], inner[cols]], 0.0)
            self.c = a[np.ix_(self.inner, self.border)]
            self.e = a[np.ix_(self.border, self.border)]

    def solve(self, lam):
        if not self.banded:
            mat = self.a + lam * np.diag(self.d)
            return cho_solve(cho_factor(mat), self.g)
        inner, border = self.inner, self.border
        ab = self.ab.copy()
        ab[self.u] += lam * self.d[inner]
        g1 = self.g[inner]
        x = np.empty(len(self.g))
        if len(border) == 0:
            x[inner] = solveh_banded(ab, g1)
            return x
        yz = solveh_banded(ab, np.column_stack([g1, self.c]))
        y, z = yz[:, 0], yz[:, 1:]
        schur = self.e + lam * np.diag(self.d[border]) - self.c.T @ z
        xb = np.linalg.solve(schur, self.g[border] - self.c.T @ y)
        x[inner] = y - z @ xb
        x[border] = xb
        return x


def _sort_peaks(p, n_peaks):
    order = np.argsort(p[1:3 * n_peaks:3], kind="stable")
    cols = (3 * order[:, None] + np.arange(3)).ravel()
    return np.concatenate([p[cols], p[3 * n_peaks:]])


def _levenberg_marquardt(y, tau, params, n_peaks, opts: FitOptions, baseline,
                         max_iterations, resp=None, jresp=None,
                         log_dt_bounds=(-math.inf, math.inf)):
    """Damped Gauss-Newton iterations.

    Returns ``(params, rss, iterations, converged, rss_history)``; the history
    holds the RSS of every accepted step and never increases. ``resp`` filters
    the model in the objective, ``jresp`` (an approximation of it) the
    Jacobian. Log-widths are projected into ``log_dt_bounds`` (scalars or
    per-peak arrays) after every step; a width sitting on a bound that the step would push further out is
    held fixed for that iteration.
    """
    free_b = opts.free_baseline
    dt_lo, dt_hi = log_dt_bounds
    span = float(tau[-1] - tau[0])
    p = np.array(params, dtype=float)
    r = y - _predict(tau, p, n_peaks, free_b, baseline, resp)
    rss = float(r @ r)
    history = [rss]
    floor = (1e-15 * float(np.linalg.norm(y))) ** 2
    lam = opts.damping_init
    nu = 2.0
    iterations = 0
    converged = False

    while iterations < max_iterations:
        if rss <= floor:
            converged = True
            break
        iterations += 1
        p = _sort_peaks(p, n_peaks)
        wide_peaks = 2.0 * SUPPORT_WIDTHS * np.exp(p[2:3 * n_peaks:3]) > span / 4.0
        a, g, bandwidth = _normal_equations(tau, r, p, n_peaks, free_b, wide_peaks,
                                            jresp)
        wide = np.repeat(wide_peaks, 3)
        if free_b:
            wide = np.append(wide, True)
        log_dt = p[2:3 * n_peaks:3]
        g_dt = g[2:3 * n_peaks:3]
        held = (((log_dt >= dt_hi - 1e-12) & (g_dt > 0))
                | ((log_dt <= dt_lo + 1e-12) & (g_dt < 0)))
        if held.any():
            for i in 3 * np.flatnonzero(held) + 2:
                a[i, :] = 0.0
                a[:, i] = 0.0
                a[i, i] = 1.0
                g[i] = 0.0
        solver = _StepSolver(a, g, wide, bandwidth)
        accepted = stalled = False
        while lam <= _LAMBDA_MAX:
            try:
                delta = solver.solve(lam)
            except (np.linalg.LinAlgError, ValueError):
                delta = None
            if delta is not None and np.all(np.isfinite(delta)):
                if np.linalg.norm(delta) <= 1e-14 * (np.linalg.norm(p) + 1e-14):
                    stalled = True
                    break
                trial = p + delta
                np.clip(trial[2:3 * n_peaks:3], dt_lo, dt_hi, out=trial[2:3 * n_peaks:3])
                rss_trial = _rss(y, tau, trial, n_peaks, free_b, baseline, resp)
                if rss_trial < rss:
                    predicted = float(delta @ (g + lam * solver.d * delta))
                    rho = (rss - rss_trial) / predicted if predicted > 0 else 0.0
                    lam = max(lam * max(1.0 / 3.0, 1.0 - (2.0 * rho - 1.0) ** 3),
                              _LAMBDA_MIN)
                    nu = 2.0
                    accepted = True
                    break
            lam *= nu
            nu *= 2.0
        if stalled:
            # no representable step lowers the RSS: a minimum to machine precision
            converged = True
            break
        if not accepted:
            break
        improvement = (rss - rss_trial) / rss
        p, rss = trial, rss_trial
        history.append(rss)
        r = y - _predict(tau, p, n_peaks, free_b, baseline, resp)
        if improvement < opts.rel_tol:
            converged = True
            break

    return _sort_peaks(p, n_peaks), rss, iterations, converged, history


def _params_from_seeds(seeds, start, free_baseline, baseline):
    p = []
    for s in seeds:
        p.extend([math.log(s.m0_guess), s.t0_guess - start, math.log(s.dt_guess)])
    if free_baseline:
        p.append(baseline)
    return np.array(p)


def _clean_up(p, n_peaks, merge_fraction, step, span):
    """Indices of peaks that survive the post-convergence clean-up.

    Degenerate peaks are dropped first: negligible amplitude (below 1e-3 of
    the median), width at the one-sample floor, or centre
    outside the band. Then,
    of every neighbouring pair closer than ``merge_fraction * min(dt)``, the
    weaker peak is dropped.
    """
    log_m0 = p[0:3 * n_peaks:3]
    t0 = p[1:3 * n_peaks:3]
    with np.errstate(over="ignore"):
        dt = np.exp(p[2:3 * n_peaks:3])
    ok = _healthy(p, n_peaks, step, span)
    kept: list[int] = []
    for b in np.argsort(t0, kind="stable"):
        if not ok[b]:
            continue
        if kept:
            a = kept[-1]
            if t0[b] - t0[a] < merge_fraction * min(dt[a], dt[b]):
                if log_m0[b] > log_m0[a]:
                    kept[-1] = int(b)
                continue
        kept.append(int(b))
    return sorted(kept)


def _healthy(p, n_peaks, step, span):
    """Mask of peaks that are not degenerate (see :func:`_clean_up`)."""
    t0 = p[1:3 * n_peaks:3]
    with np.errstate(over="ignore"):
        m0 = np.exp(p[0:3 * n_peaks:3])
        dt = np.exp(p[2:3 * n_peaks:3])
    return (np.isfinite(p[:3 * n_peaks]).reshape(-1, 3).all(axis=1)
            & (m0 >= 1e-3 * np.median(m0)) & (m0 > 0)
            & (dt > step * (1.0 + 1e-9)) & np.isfinite(dt)
            & (t0 >= 0.0) & (t0 <= span))


def _select(p, n_peaks, kept):
    cols = np.concatenate([[3 * k, 3 * k + 1, 3 * k + 2] for k in kept])
    return np.concatenate([p[cols], p[3 * n_peaks:]])


def _confidence(tau, y, p, n_peaks, free_b, baseline, rss, resp=None):
    """One-sigma half-widths of (m0, t0, dt) from the linearised covariance."""
    n_par = 3 * n_peaks + (1 if free_b else 0)
    dof = len(y) - n_par
    if dof <= 0:
        return None
    _, jac = model_and_jacobian(tau, p, n_peaks, free_b, baseline)
    if resp is not None:
        jac = resp.apply(jac)
    m0 = np.exp(p[0:3 * n_peaks:3])
    dt = np.exp(p[2:3 * n_peaks:3])
    # convert log-parameter columns to natural parameters
    jac[:, 0:3 * n_peaks:3] /= m0
    jac[:, 2:3 * n_peaks:3] /= dt
    cov = (rss / dof) * np.linalg.pinv(jac.T @ jac)
    sd = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    return [{"m0": float(sd[3 * k]), "t0": float(sd[3 * k + 1]), "dt": float(sd[3 * k + 2])}
            for k in range(n_peaks)]


def fit_multi_lorentzian(band: TimeSeries, seeds: Sequence[PeakSeed],
                         opts: FitOptions | None = None,
                         baseline: float = 0.0, with_ci: bool = True,
                         response: BandResponse | None = None,
                         max_width: float | None = None) -> FitResult:
    """Least-squares fit of ``len(seeds)`` Lorentzians to ``band``.

    After convergence, peaks closer than ``merge_fraction`` of the smaller
    width are merged (the weaker one is dropped) and the model is refitted.
    Degenerate peaks (vanishing amplitude, width below one sample, centre
    outside the band) are dropped the same way; the clean-up repeats until
    nothing changes, at most three times. ``baseline`` is the fixed offset,
    or the starting value when ``opts.free_baseline`` is set. A fit that
    stalls returns the best model found with ``converged=False``.

    ``rss_history`` holds one list per least-squares run (the first fit and
    each refit after a clean-up); within a run the RSS never increases.

    With a ``response`` the objective is ``sum (band - response(model))**2``.
    A response that removes constants also removes the baseline, which is
    then fixed at zero.

    In a direct fit (no ``response``), seeds whose state collapses on the
    first pass are restarted once from a broadened width (see ``_rescue``).

    Widths are kept between one sample step and ``max_width`` (if given)
    during the iteration. A state pinned at the lower bound is a spike on a
    single sample and is dropped like the other degenerate ones.
    """
    opts = opts or FitOptions()
    if response is not None and not response.stages:
        response = None
    if response is not None and response.removes_constants:
        if opts.free_baseline:
            raise ConfigError(
                "the band response removes constants, so a free baseline is not "
                "identifiable; fit with free_baseline=False")
        baseline = 0.0
    seeds = list(seeds)
    if not seeds:
        raise ConfigError("at least one seed is required")
    for s in seeds:
        if not band.start_time <= s.t0_guess <= band.end_time:
            raise ConfigError(
                f"seed at t={s.t0_guess:g} s lies outside the band "
                f"[{band.start_time:g}, {band.end_time:g}]")
    if max_width is not None:
        if not max_width > band.step:
            raise ConfigError("max_width must exceed the sample step")
        seeds = [s if s.dt_guess < max_width
                 else PeakSeed(s.t0_guess, s.m0_guess, 0.5 * max_width) for s in seeds]
    n_peaks = len(seeds)
    n_par = 3 * n_peaks + (1 if opts.free_baseline else 0)
    if len(band) < 3 * n_par:
        raise ConfigError(
            f"band has {len(band)} samples; {n_par} free parameters need at least {3 * n_par}")

    result, p = _fit_core(band, seeds, opts, baseline, response, max_width)
    if with_ci:
        tau = band.times - band.start_time
        result.per_peak_ci = _confidence(tau, band.values, p, len(result.model),
                                         opts.free_baseline, baseline, result.rss,
                                         response)
    return result


def _jacobian_response(response, seeds, step):
    if response is None:
        return None
    width = float(np.median([s.dt_guess for s in seeds]))
    limit = int(_RESPONSE_JAC_WIDTHS * width / step)
    return response.local(limit)


def _fit_core(band, seeds, opts, baseline, response=None, max_width=None):
    tau = band.times - band.start_time
    y = band.values
    n_peaks = len(seeds)
    jresp = _jacobian_response(response, seeds, band.step)
    width_cap = math.inf if max_width is None else float(max_width)
    lm_args = (opts, baseline)
    lm_kw = dict(resp=response, jresp=jresp,
                 log_dt_bounds=(math.log(band.step), math.log(width_cap)))
    p = _params_from_seeds(seeds, band.start_time, opts.free_baseline, baseline)
    np.clip(p[2:3 * n_peaks:3], *lm_kw["log_dt_bounds"], out=p[2:3 * n_peaks:3])
    start = p.copy()
    p, rss, its, converged, history = _levenberg_marquardt(
        y, tau, p, n_peaks, *lm_args, opts.max_iterations, **lm_kw)
    runs = [history]
    # direct fits only: through a response the extra passes cost more than they
    # recover on full-day bands
    lost = ~_healthy(p, n_peaks, band.step, tau[-1])
    if response is None and lost.any():
        p, rss, its, converged, runs = _rescue(y, tau, start, p, lost, rss, its, converged,
                                              runs, n_peaks, lm_args, lm_kw)
    dropped = 0
    for attempt in range(_MAX_CLEANUPS + 1):
        kept = _clean_up(p, n_peaks, opts.merge_fraction, band.step, tau[-1])
        if len(kept) == n_peaks:
            break
        if not kept:
            raise AnalysisError("every fitted state degenerated; check the seeds")
        dropped += n_peaks - len(kept)
        p, n_peaks = _select(p, n_peaks, kept), len(kept)
        if attempt == _MAX_CLEANUPS:
            # out of refits: report the surviving states as they are
            rss = _rss(y, tau, p, n_peaks, opts.free_baseline, baseline, response)
            converged = False
            break
        budget = max(opts.max_iterations - its, 1)
        p, rss, its2, converged, history = _levenberg_marquardt(
            y, tau, p, n_peaks, *lm_args, budget, **lm_kw)
        its += its2
        runs.append(history)
        converged = converged and its <= opts.max_iterations

    log_m0, t0, log_dt, b = _unpack(p, n_peaks, opts.free_baseline, baseline)
    model = MultiLorentzianModel.from_arrays(
        np.exp(log_m0), t0 + band.start_time, np.exp(log_dt), float(b))
    result = FitResult(model=model, rss=rss, iterations=its, converged=converged,
                       rss_history=runs, merged=dropped)
    return result, p


def _rescue(y, tau, start, p, lost, rss, its, converged, runs, n_peaks, lm_args, lm_kw):
    """Refit states that collapsed from a seed far from their peak.

    A seed several widths away from the structure it should describe sees
    almost no overlap with it, and the fit shrinks its amplitude to nothing
    before the centre can move. Restarting those seeds with their widths held
    at two or more times the seed width gives them that overlap; a second
    pass then releases the bound. The rescue is kept only if it lowers the RSS.
    """
    opts = lm_args[0]
    dt_lo, dt_hi = lm_kw["log_dt_bounds"]
    q = p.copy()
    idx = 3 * np.flatnonzero(lost)
    for k in (0, 1, 2):
        q[idx + k] = start[idx + k]
    floor = np.full(n_peaks, dt_lo)
    floor[lost] = np.minimum(start[idx + 2] + math.log(2.0), dt_hi)
    np.maximum(q[2:3 * n_peaks:3], floor, out=q[2:3 * n_peaks:3])
    broad = dict(lm_kw, log_dt_bounds=(floor, dt_hi))
    q, _, its1, _, h1 = _levenberg_marquardt(y, tau, q, n_peaks, *lm_args,
                                             opts.max_iterations, **broad)
    q, rss2, its2, conv2, h2 = _levenberg_marquardt(y, tau, q, n_peaks, *lm_args,
                                                    opts.max_iterations, **lm_kw)
    if rss2 < rss:
        # the collapsed first attempt is discarded, history and iterations alike
        n_its = its1 + its2
        return q, rss2, n_its, conv2 and n_its <= opts.max_iterations, [h1, h2]
    return p, rss, its, converged, runs


def _noise_sigma(resid):
    """Robust white-noise level from first differences (MAD / sqrt 2)."""
    d = np.diff(resid)
    return 1.4826 * float(np.median(np.abs(d - np.median(d)))) / math.sqrt(2.0)


def _bic(result: FitResult, n: int, free_baseline: bool, sigma2: float) -> float:
    """Bayesian information criterion at a known noise variance ``sigma2``."""
    k = 3 * len(result.model) + (1 if free_baseline else 0)
    return result.rss / sigma2 + k * math.log(n)


def _insignificant(model: MultiLorentzianModel, band: TimeSeries, sigma2: float,
                   response=None) -> np.ndarray:
    """States whose removal would raise the RSS by less than their BIC cost.

    At a least-squares optimum the residual is orthogonal to each state's
    profile, so removing state ``k`` without refitting raises the RSS by
    exactly ``||response(L_k)||**2``; refitting the rest can only lower
    that. States below ``3 ln(n)`` noise variances do not pay for their
    three parameters.
    """
    n = len(band)
    cost = 3.0 * math.log(n) * sigma2
    tau = band.times
    out = np.zeros(len(model), dtype=bool)
    for k, p in enumerate(model.peaks):
        x = (2.0 / p.dt) * (tau - p.t0)
        prof = p.m0 / (1.0 + x * x)
        if response is not None:
            prof = response.apply(prof)
        out[k] = float(prof @ prof) < cost
    return out


def _seeds_from(model: MultiLorentzianModel, band: TimeSeries):
    lo, hi = band.start_time, band.end_time
    return [PeakSeed(min(max(p.t0, lo), hi), p.m0, p.dt) for p in model.peaks]


def fit_series(band: TimeSeries, which: str = "fine", opts: FitOptions | None = None,
               det: Detection | None = None,
               response: BandResponse | None = None) -> FitResult:
    """Detect states in ``band`` and fit them, iterating on the residual.

    ``which`` selects the band-specific defaults. ``response`` is the filter
    that produced the band, if any (see :func:`fit_multi_lorentzian`).
    The baseline stays at zero unless ``opts.free_baseline`` is set: the
    summed tails of many states look much like a constant, so a free
    baseline trades off against the widths. The search rounds stop at a
    relative tolerance of at most 1e-6; the selected model is then polished
    with ``opts``.
    """
    if response is not None and not response.stages:
        response = None
    opts = opts or FitOptions()
    det = det or Detection()
    prom, sep = det.resolve(band, which)
    max_width = det.width_limit(sep)
    seeds = detect_peaks(band, prom, sep)
    if not seeds:
        raise AnalysisError(
            f"no states detected in the {which} band; lower min_prominence "
            f"(currently {prom:g})")
    baseline = float(np.median(band.values)) if opts.free_baseline else 0.0
    coarse = replace(opts, rel_tol=max(opts.rel_tol, _SEARCH_TOL))
    res = fit_multi_lorentzian(band, seeds, coarse, baseline, with_ci=False,
                               response=response, max_width=max_width)

    n = len(band)
    # model comparisons use one noise level, estimated robustly so that
    # structure the first fit missed does not inflate it
    # (floored so that noise-free data does not turn rounding into states)
    floor = _SIGMA_FLOOR * float(np.ptp(band.values))
    sigma2 = max(_noise_sigma(band.values - predict_band(res.model, band, response)),
                 floor) ** 2
    if not sigma2 > 0:
        sigma2 = max(res.rss / n, 1e-300)
    score = _bic(res, n, opts.free_baseline, sigma2)
    for _ in range(det.refine_rounds):
        resid = band.values - predict_band(res.model, band, response)
        sigma = max(_noise_sigma(resid), floor)
        if not sigma > 0:
            break
        # a state spans several samples: look for them in a lightly smoothed
        # residual, where single-sample noise spikes are suppressed
        w = max(window_samples(sep / 2.0, band.step), 1)
        smooth = band.with_values(BandResponse((("smooth", w),)).apply(resid))
        extra = detect_peaks(smooth, det.residual_snr * sigma / math.sqrt(w), sep)
        # seeds on top of a fitted state would only be merged back into it
        t0, dt = res.model.t0, res.model.dt
        extra = [e for e in extra
                 if np.all(np.abs(t0 - e.t0_guess) >= opts.merge_fraction * dt)]
        # the most prominent ones first if the sample budget cannot take them all
        room = (n // 3 - int(opts.free_baseline)) // 3 - len(res.model)
        extra = sorted(extra, key=lambda e: -e.m0_guess)[:max(room, 0)]
        if not extra:
            break
        seeds = _seeds_from(res.model, band) + extra
        try:
            trial = fit_multi_lorentzian(band, seeds, coarse, res.model.baseline,
                                         with_ci=False, response=response,
                                         max_width=max_width)
        except (ConfigError, AnalysisError):
            break
        trial_score = _bic(trial, n, opts.free_baseline, sigma2)
        if trial_score >= score:
            break
        res, score = trial, trial_score

    weak = _insignificant(res.model, band, sigma2, response)
    if weak.any() and not weak.all():
        keep = MultiLorentzianModel(
            tuple(p for p, w in zip(res.model.peaks, weak) if not w), res.model.baseline)
        trial = fit_multi_lorentzian(band, _seeds_from(keep, band), coarse,
                                     res.model.baseline, with_ci=False,
                                     response=response, max_width=max_width)
        trial.merged += res.merged + int(weak.sum())
        res = trial

    final = fit_multi_lorentzian(band, _seeds_from(res.model, band), opts,
                                 res.model.baseline, response=response,
                                 max_width=max_width)
    final.merged += res.merged
    return final


def predict_band(model: MultiLorentzianModel, band: TimeSeries,
                 response: BandResponse | None = None) -> np.ndarray:
    """The model on the band's sample times, passed through ``response``."""
    f = np.atleast_1d(eval_model(model, band.times))
    return f if response is None else response.apply(f)


def fit_band(decomp: BandDecomposition, which: str = "fine",
             opts: FitOptions | None = None, det: Detection | None = None,
             through_response: bool = True) -> FitResult:
    """Fit one structural band of a decomposition.

    By default the states are fitted through the band's response, so they
    describe the structure before the moving averages reshaped it; the
    baseline is then zero. ``through_response=False`` fits the band values
    directly with a free baseline.

    Moving averages do not separate time scales sharply, so every band
    carries some structure of its neighbours. States are fitted to all of
    it, and those whose width falls outside the band's range (see
    :meth:`BandDecomposition.width_range`) are moved from ``model`` to
    ``other``; the RSS refers to both together. The gross band is background
    and is not fitted.
    """
    if which == "gross":
        raise ConfigError("the gross band is background; fit fine, inter_2 or inter_1")
    band = decomp.band(which)
    response = decomp.response(which) if through_response else None
    lo, hi = decomp.width_range(which)
    res = fit_series(band, which, opts, det, response)
    inside = (res.model.dt >= lo) & (res.model.dt < hi)
    if inside.all():
        return res
    if not inside.any():
        raise AnalysisError(
            f"no fitted state has a width in the {which} range [{lo:g}, {hi:g}) s")
    keep = [p for p, k in zip(res.model.peaks, inside) if k]
    rest = [p for p, k in zip(res.model.peaks, inside) if not k]
    res.model = MultiLorentzianModel(tuple(keep), res.model.baseline)
    res.other = MultiLorentzianModel(tuple(rest))
    if res.per_peak_ci is not None:
        res.per_peak_ci = [c for c, k in zip(res.per_peak_ci, inside) if k]
    return res
