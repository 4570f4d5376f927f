"""Command-line interface: ``finestructure {synth,decompose,fit,report,predict}``.

Every command writes its outputs and a ``manifest.json`` to ``--out-dir``
(default ``./out``). Options may also come from a JSON file given with
``--config``; its keys are the option names with underscores
(``fine_mean_spacing``), and flags on the command line win. Exit codes:
0 success, 2 configuration error, 3 data error, 4 analysis error. Errors are
reported on stderr as one line, ``<error_class>: <message>``.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from dataclasses import fields
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path

import numpy as np

from .errors import AnalysisError, ConfigError, DataError, FineStructureError
from .fitting import Detection, FitOptions, fit_band, fit_series, predict_band
from .lorentz import MultiLorentzianModel
from .predictor import predict_and_score, write_track_csv, write_track_json
from .stats import (
    extract_statistics,
    fit_distribution,
    histogram,
    statistics_report,
    write_histogram_csv,
)
from .synth import SynthConfig, generate_session
from .timeseries import BANDS, DecompositionConfig, decompose, load_csv, write_csv

__all__ = ["main", "build_parser"]

EXIT_CODES = {"config_error": 2, "data_error": 3, "analysis_error": 4}


def tool_version() -> str:
    try:
        return version("artifact")
    except PackageNotFoundError:  # running from a source tree
        return "0.1.0"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


# option name -> (type, default, help); defaults are materialized into the manifest
_DECOMP_OPTS = {
    "gross_window": (float, 10800.0, "gross moving-average window (s)"),
    "inter1_window": (float, 1800.0, "intermediate-I window (s)"),
    "inter2_window": (float, 300.0, "intermediate-II window (s)"),
}

_FIT_OPTS = {
    "max_iterations": (int, 200, "Levenberg-Marquardt iteration cap"),
    "rel_tol": (float, 1e-8, "relative RSS tolerance"),
    "damping_init": (float, 1e-3, "initial damping"),
    "merge_fraction": (float, 0.25, "merge states closer than this fraction of the smaller width"),
    "free_baseline": (bool, False, "fit a constant offset as well (direct fits only)"),
    "min_prominence": (float, None, "detection prominence (default: scaled to the band)"),
    "min_separation": (float, None, "minimum seed separation (s)"),
    "max_width": (float, None, "largest admissible width (s)"),
    "refine_rounds": (int, 4, "residual search rounds"),
    "residual_snr": (float, 4.0, "residual detection threshold in noise deviations"),
}


def _synth_opts():
    out = {}
    for f in fields(SynthConfig):
        if f.name in ("trend", "fine_width_change"):
            continue
        typ = int if isinstance(f.default, int) else float
        out[f.name] = (typ, f.default, f"synth parameter {f.name}")
    return out


_SYNTH_OPTS = _synth_opts()


def _add(parser, table):
    for name, (typ, _, text) in table.items():
        if typ is bool:
            parser.add_argument(_flag(name), dest=name, action="store_true", help=text,
                                default=argparse.SUPPRESS)
        else:
            parser.add_argument(_flag(name), dest=name, type=typ, help=text,
                                default=argparse.SUPPRESS)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="finestructure",
                description="Lorentzian fine-structure analysis of intraday series.")
    p.add_argument("--version", action="version", version=tool_version())
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--out-dir", default="out", help="output directory (default ./out)")
        sp.add_argument("--config", help="JSON file with option values")

    sp = sub.add_parser("synth", help="generate a synthetic session with ground truth")
    common(sp)
    _add(sp, _SYNTH_OPTS)
    sp.add_argument("--seed", dest="rng_seed", type=int, default=argparse.SUPPRESS,
                    help="alias of --rng-seed")
    sp.add_argument("--midday-width-factor", dest="midday_width_factor", type=float,
                    default=argparse.SUPPRESS,
                    help="multiply fine widths after mid-session by this factor")

    sp = sub.add_parser("decompose", help="split a series into its four bands")
    common(sp)
    sp.add_argument("input", help="time,value CSV")
    _add(sp, _DECOMP_OPTS)

    sp = sub.add_parser("fit", help="fit Lorentzian states to a band")
    common(sp)
    sp.add_argument("input", help="band CSV, or a raw series with --decompose")
    sp.add_argument("--band", choices=[b for b in BANDS if b != "gross"], default="fine")
    sp.add_argument("--decompose", action="store_true",
                    help="input is a raw series: decompose it and fit the band "
                         "through its moving-average response")
    _add(sp, _FIT_OPTS)
    _add(sp, _DECOMP_OPTS)

    sp = sub.add_parser("report", help="state statistics and distribution fits")
    common(sp)
    sp.add_argument("model", help="model JSON written by fit")
    sp.add_argument("--truth", help="truth JSON written by synth")
    sp.add_argument("--band", choices=[b for b in BANDS if b != "gross"], default="fine",
                    help="truth band to compare with")
    sp.add_argument("--width-bin", dest="width_bin", type=float, default=argparse.SUPPRESS,
                    help="width histogram bin (s; default: a quarter of the mean)")
    sp.add_argument("--interval-bin", dest="interval_bin", type=float,
                    default=argparse.SUPPRESS,
                    help="interval histogram bin (s; default: a quarter of the mean)")
    sp.add_argument("--match-tolerance", dest="match_tolerance", type=float,
                    default=argparse.SUPPRESS,
                    help="pairing tolerance for the truth table (s; default: the sample step)")

    sp = sub.add_parser("predict", help="early-session ratio forecast and its score")
    common(sp)
    sp.add_argument("input", help="raw time,value CSV")
    sp.add_argument("--early-hours", dest="early_hours", type=float, default=argparse.SUPPRESS)
    sp.add_argument("--window", type=float, default=argparse.SUPPRESS,
                    help="scoring window (s)")
    sp.add_argument("--threshold", type=float, default=argparse.SUPPRESS,
                    help="largest admissible deviation from the early estimate")
    sp.add_argument("--pad", type=float, default=argparse.SUPPRESS,
                    help="context fitted on each side of a window (s)")
    _add(sp, _FIT_OPTS)
    _add(sp, _DECOMP_OPTS)
    return p


# ---------------------------------------------------------------------------
# helpers

def _resolve(args, defaults: dict) -> dict:
    """defaults <- --config file <- explicit flags."""
    cfg = dict(defaults)
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                loaded = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {args.config} is not valid JSON: {exc}") from None
        if not isinstance(loaded, dict):
            raise ConfigError("config file must hold a JSON object")
        unknown = set(loaded) - set(defaults)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(loaded)
    for k in defaults:
        if k in vars(args):
            cfg[k] = getattr(args, k)
    return cfg


def _defaults(*tables) -> dict:
    return {k: v[1] for t in tables for k, v in t.items()}


def _named_error(exc: ConfigError, names) -> ConfigError:
    """Add the flag spelling to a configuration error that mentions an option."""
    msg = str(exc)
    for n in sorted(names, key=len, reverse=True):
        if n in msg:
            return ConfigError(f"{_flag(n)}: {msg}")
    return exc


def _load_series(path):
    try:
        return load_csv(path)
    except FileNotFoundError:
        raise DataError(f"{path}: no such file") from None
    except OSError as exc:
        raise DataError(f"{path}: {exc.strerror}") from None


def _load_json(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise DataError(f"{path}: no such file") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: not valid JSON ({exc})") from None


def _dump(obj, path: Path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")
    return path


def _manifest(out: Path, command, inputs, config, outputs, rng_seed=None, **extra):
    m = {
        "command": command,
        "tool_version": tool_version(),
        "inputs": [str(p) for p in inputs],
        "config": config,
        "outputs": sorted(str(p) for p in outputs),
        "rng_seed": rng_seed,
    }
    m.update(extra)
    return _dump(m, out / "manifest.json")


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"--out-dir {out}: {exc.strerror}") from None
    return out


def _decomp_config(cfg) -> DecompositionConfig:
    try:
        return DecompositionConfig(cfg["gross_window"], cfg["inter1_window"],
                                   cfg["inter2_window"])
    except ConfigError as exc:
        raise _named_error(exc, _DECOMP_OPTS) from None


def _fit_config(cfg):
    try:
        det = Detection(min_prominence=cfg["min_prominence"],
                        min_separation=cfg["min_separation"],
                        max_width=cfg["max_width"],
                        refine_rounds=cfg["refine_rounds"],
                        residual_snr=cfg["residual_snr"])
        kw = dict(max_iterations=cfg["max_iterations"], rel_tol=cfg["rel_tol"],
                  damping_init=cfg["damping_init"], merge_fraction=cfg["merge_fraction"])
    except ConfigError as exc:
        raise _named_error(exc, _FIT_OPTS) from None

    def opts(free_baseline):
        try:
            return FitOptions(free_baseline=bool(free_baseline), **kw)
        except ConfigError as exc:
            raise _named_error(exc, _FIT_OPTS) from None
    return opts, det


# ---------------------------------------------------------------------------
# commands

def cmd_synth(args) -> int:
    defaults = _defaults(_SYNTH_OPTS)
    defaults["midday_width_factor"] = None
    cfg = _resolve(args, defaults)
    factor = cfg.pop("midday_width_factor")
    try:
        scfg = SynthConfig(**cfg, fine_width_change=(
            None if factor is None else (cfg.get("session_length") / 2.0, factor)))
    except ConfigError as exc:
        raise _named_error(exc, list(_SYNTH_OPTS) + ["midday_width_factor"]) from None
    session = generate_session(scfg)
    out = _out_dir(args)
    series = write_csv(session.series, out / "series.csv")
    truth = _dump({b: session.truth(b).to_dict() for b in ("fine", "inter_2", "inter_1")},
                  out / "truth.json")
    resolved = scfg.to_dict()
    _manifest(out, "synth", [], resolved, [series, truth], rng_seed=scfg.rng_seed,
              true_ratio={b: session.true_ratio(b) for b in ("fine", "inter_2", "inter_1")})
    return 0


def cmd_decompose(args) -> int:
    cfg = _resolve(args, _defaults(_DECOMP_OPTS))
    dcfg = _decomp_config(cfg)
    ts = _load_series(args.input)
    d = decompose(ts, dcfg)
    out = _out_dir(args)
    paths = [write_csv(d.band(b), out / f"{b}.csv") for b in BANDS]
    scale = max(float(np.max(np.abs(ts.values))), 1e-300)
    residual = float(np.max(np.abs(d.total().values - ts.values)))
    _manifest(out, "decompose", [args.input], cfg, paths,
              max_reconstruction_residual=residual,
              relative_reconstruction_residual=residual / scale,
              band_stdev={b: float(np.std(d.band(b).values)) for b in BANDS})
    return 0


def cmd_fit(args) -> int:
    cfg = _resolve(args, _defaults(_FIT_OPTS, _DECOMP_OPTS))
    make_opts, det = _fit_config(cfg)
    if args.decompose and cfg["free_baseline"]:
        raise ConfigError("--free-baseline cannot be combined with --decompose: the "
                          "band filter removes constants")
    ts = _load_series(args.input)
    if args.decompose:
        d = decompose(ts, _decomp_config(cfg))
        band = d.band(args.band)
        res = fit_band(d, args.band, make_opts(False), det)
        response = d.response(args.band)
        fitted = predict_band(res.model, band, response)
        if res.other is not None:
            fitted = fitted + predict_band(res.other, band, response)
    else:
        band = ts
        res = fit_series(band, args.band, make_opts(cfg["free_baseline"]), det)
        fitted = predict_band(res.model, band)
    out = _out_dir(args)
    doc = res.to_dict()
    doc["band"] = args.band
    doc["step"] = band.step
    model_path = _dump(doc, out / "model.json")
    resid_path = write_csv(band.with_values(band.values - fitted), out / "residual.csv",
                           header=("time", "residual"))
    cfg = dict(cfg, band=args.band, decompose=bool(args.decompose))
    _manifest(out, "fit", [args.input], cfg, [model_path, resid_path],
              converged=bool(res.converged), n_states=len(res.model), rss=float(res.rss))
    return 0


def _read_model(doc) -> tuple[MultiLorentzianModel, float | None]:
    if not isinstance(doc, dict):
        raise DataError("model JSON must hold an object")
    step = doc.get("step")
    if "model" in doc:
        doc = doc["model"]
    try:
        return MultiLorentzianModel.from_dict(doc), step
    except ConfigError as exc:
        raise DataError(f"bad model: {exc}") from None


def match_peaks(fitted: MultiLorentzianModel, truth: MultiLorentzianModel,
                tolerance: float) -> list:
    """Greedy nearest pairing of centres within ``tolerance``.

    Candidate pairs are taken in order of increasing ``|dt0|``; each state
    is used at most once. Returns ``(fit index, truth index)`` pairs sorted
    by truth index.
    """
    a, b = fitted.t0, truth.t0
    if len(a) == 0 or len(b) == 0:
        return []
    dist = np.abs(a[:, None] - b[None, :])
    i, j = np.nonzero(dist <= tolerance)
    order = np.lexsort((j, i, dist[i, j]))
    used_a, used_b, pairs = set(), set(), []
    for k in order:
        if i[k] in used_a or j[k] in used_b:
            continue
        used_a.add(i[k])
        used_b.add(j[k])
        pairs.append((int(i[k]), int(j[k])))
    return sorted(pairs, key=lambda p: p[1])


def cmd_report(args) -> int:
    cfg = _resolve(args, {"width_bin": None, "interval_bin": None, "match_tolerance": None})
    model, step = _read_model(_load_json(args.model))
    stats = extract_statistics(model)
    fits, skipped = [], {}
    samples = {"wigner": stats.intervals, "chi_squared": stats.widths,
               "porter_thomas": stats.widths}
    for family, sample in samples.items():
        try:
            fits.append(fit_distribution(sample, family))
        except (ConfigError, AnalysisError) as exc:
            skipped[family] = str(exc)
    out = _out_dir(args)
    outputs = [_dump(statistics_report(stats, fits), out / "statistics.json")]
    wbin = cfg["width_bin"] or stats.mean_width / 4.0
    ibin = cfg["interval_bin"] or stats.mean_interval / 4.0
    outputs.append(write_histogram_csv(histogram(stats.widths, wbin),
                                       out / "width_histogram.csv"))
    outputs.append(write_histogram_csv(histogram(stats.intervals, ibin),
                                       out / "interval_histogram.csv"))
    table = out / "distribution_fits.csv"
    with open(table, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["family", "n", "mean", "ks_stat", "sample_size"])
        for f in fits:
            w.writerow([f.family, f.params.get("n", ""), repr(f.params["mean"]),
                        repr(f.ks_stat), f.sample_size])
    outputs.append(table)

    extra = {"ratio": stats.ratio, "n_states": len(model), "skipped_fits": skipped}
    inputs = [args.model]
    if args.truth:
        inputs.append(args.truth)
        tdoc = _load_json(args.truth)
        if isinstance(tdoc, dict) and args.band in tdoc:
            tdoc = tdoc[args.band]
        truth, _ = _read_model(tdoc)
        tol = cfg["match_tolerance"] or step
        if tol is None:
            raise ConfigError("the model JSON has no sample step; pass --match-tolerance")
        pairs = match_peaks(model, truth, tol)
        mpath = out / "matched_peaks.csv"
        with open(mpath, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["fit_t0", "true_t0", "fit_dt", "true_dt", "fit_m0", "true_m0"])
            for i, j in pairs:
                p, q = model.peaks[i], truth.peaks[j]
                w.writerow([repr(p.t0), repr(q.t0), repr(p.dt), repr(q.dt),
                            repr(p.m0), repr(q.m0)])
        outputs.append(mpath)
        extra.update(matched=len(pairs), n_truth=len(truth), match_tolerance=tol)
        cfg = dict(cfg, match_tolerance=tol)
    cfg = dict(cfg, width_bin=wbin, interval_bin=ibin, band=args.band)
    _manifest(out, "report", inputs, cfg, outputs, **extra)
    return 0


def cmd_predict(args) -> int:
    defaults = _defaults(_FIT_OPTS, _DECOMP_OPTS)
    defaults.update(early_hours=1.5, window=3600.0, threshold=0.03, pad=900.0)
    cfg = _resolve(args, defaults)
    make_opts, det = _fit_config(cfg)
    ts = _load_series(args.input)
    d = decompose(ts, _decomp_config(cfg))
    try:
        track = predict_and_score(d.fine, cfg["early_hours"], cfg["window"],
                                  make_opts(cfg["free_baseline"]),
                                  det=det, threshold=cfg["threshold"],
                                  response=d.response("fine"), pad=cfg["pad"],
                                  width_range=d.width_range("fine"))
    except ConfigError as exc:
        raise _named_error(exc, ["early_hours", "window", "threshold", "pad"]) from None
    out = _out_dir(args)
    paths = [write_track_json(track, out / "track.json"),
             write_track_csv(track, out / "track.csv")]
    dev = track.max_abs_deviation
    _manifest(out, "predict", [args.input], cfg, paths,
              early_estimate=track.early_estimate, passed=track.passed,
              max_abs_deviation=None if math.isnan(dev) else dev)
    return 0


COMMANDS = {"synth": cmd_synth, "decompose": cmd_decompose, "fit": cmd_fit,
            "report": cmd_report, "predict": cmd_predict}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return COMMANDS[args.command](args)
    except FineStructureError as exc:
        msg = str(exc).replace("\n", " ")
        if isinstance(exc, AnalysisError) and "no states detected" in msg:
            msg += "; or pass --min-prominence explicitly"
        print(f"{exc.kind}: {msg}", file=sys.stderr)
        return EXIT_CODES.get(exc.kind, 1)


if __name__ == "__main__":
    sys.exit(main())
