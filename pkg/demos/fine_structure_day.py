"""Synthesize one trading day, split it into bands and measure the fine structure.

Run with ``python3 demos/fine_structure_day.py [seed]``. Prints the recovered
ratio <dt>/<T> next to the generator's truth, and how well the width and
spacing samples follow the reference distributions.
"""

import sys

from finestructure import (
    SynthConfig,
    decompose,
    extract_statistics,
    fit_band,
    fit_distribution,
    generate_session,
)


def main(seed=0):
    session = generate_session(SynthConfig(rng_seed=seed))
    bands = decompose(session.series)
    res = fit_band(bands, "fine")
    stats = extract_statistics(res.model)
    truth = extract_statistics(session.truth("fine"))

    print(f"seed {seed}: {len(session.series)} samples at {session.series.step:g} s")
    print(f"{'':14s}{'fitted':>10s}{'truth':>10s}")
    print(f"{'states':14s}{len(res.model):10d}{len(session.truth('fine')):10d}")
    print(f"{'<dt> (s)':14s}{stats.mean_width:10.1f}{truth.mean_width:10.1f}")
    print(f"{'<T> (s)':14s}{stats.mean_interval:10.1f}{truth.mean_interval:10.1f}")
    print(f"{'<dt>/<T>':14s}{stats.ratio:10.3f}{truth.ratio:10.3f}")
    if res.other is not None:
        print(f"({len(res.other)} wider states left to the slower bands)")

    print("\nKS distance of the fitted samples:")
    fits = [("spacings", "wigner", stats.intervals),
            ("widths", "chi_squared", stats.widths),
            ("widths", "porter_thomas", stats.widths)]
    for label, family, sample in fits:
        f = fit_distribution(sample, family)
        extra = f"  n = {f.params['n']:.1f}" if family == "chi_squared" else ""
        print(f"  {label:9s} vs {family:14s} {f.ks_stat:.3f}{extra}")


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 0)
