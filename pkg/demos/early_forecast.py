"""Does the ratio measured early in the day hold for the rest of it?

Compares a stationary synthetic day with one whose fine widths grow by half
at midday. Run with ``python3 demos/early_forecast.py [seed]``; it takes a
few seconds per day.
"""

import sys

from finestructure import SynthConfig, decompose, generate_session, predict_and_score


def track(cfg):
    bands = decompose(generate_session(cfg).series)
    return predict_and_score(bands.fine, response=bands.response("fine"),
                             width_range=bands.width_range("fine"))


def show(title, tr):
    print(f"{title}: early estimate {tr.early_estimate:.3f} from {tr.early_count} states")
    for w in tr.window_ratios:
        ratio = f"{w.ratio:.3f}" if w.sufficient else "  -  "
        print(f"  {w.start / 3600:4.1f}-{w.stop / 3600:4.1f} h  {ratio}  ({w.count} states)")
    verdict = "holds" if tr.passed else "breaks"
    print(f"  largest deviation {tr.max_abs_deviation:.3f}: forecast {verdict} "
          f"at threshold {tr.threshold}\n")


def main(seed=0):
    show("stationary day", track(SynthConfig(rng_seed=seed)))
    show("widths x1.5 after midday",
         track(SynthConfig(rng_seed=seed, fine_width_change=(11700.0, 1.5))))


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 0)
