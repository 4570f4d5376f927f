import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from finestructure.errors import ConfigError
from finestructure.lorentz import (
    LorentzianPeak,
    MultiLorentzianModel,
    area,
    eval_model,
    eval_peak,
    model_mean,
)

pos = st.floats(1e-3, 1e3)
centre = st.floats(-1e4, 1e4)


def test_peak_value_and_half_maximum():
    p = LorentzianPeak(2.0, 0.0, 4.0)
    assert eval_peak(p, 0.0) == 2.0
    assert eval_peak(p, 2.0) == 1.0
    assert eval_peak(p, -2.0) == 1.0


def test_value_at_x_equal_two():
    assert eval_peak(LorentzianPeak(1.0, 100.0, 10.0), 110.0) == pytest.approx(0.2, abs=1e-15)


@pytest.mark.parametrize("m0, t0, dt", [(0.0, 0.0, 1.0), (-1.0, 0.0, 1.0), (1.0, 0.0, 0.0),
                                        (1.0, math.nan, 1.0), (math.inf, 0.0, 1.0)])
def test_peak_invariants(m0, t0, dt):
    with pytest.raises(ConfigError):
        LorentzianPeak(m0, t0, dt)


def test_vector_evaluation_matches_scalar():
    p = LorentzianPeak(1.5, 3.0, 7.0)
    t = np.linspace(-20, 20, 11)
    assert np.array_equal(eval_peak(p, t), np.array([eval_peak(p, x) for x in t]))


def test_model_single_peak_and_duplicates():
    p = LorentzianPeak(1.0, 5.0, 3.0)
    t = np.linspace(-10, 20, 31)
    assert np.array_equal(eval_model(MultiLorentzianModel((p,)), t), eval_peak(p, t))
    np.testing.assert_allclose(eval_model(MultiLorentzianModel((p, p)), t), 2 * eval_peak(p, t))


def test_far_separated_peaks():
    a, b = LorentzianPeak(1.0, 0.0, 10.0), LorentzianPeak(2.0, 100.0, 10.0)
    m = MultiLorentzianModel((a, b), baseline=0.5)
    assert eval_model(m, 0.0) == pytest.approx(1.5, rel=0.05)
    assert eval_model(m, 100.0) == pytest.approx(2.5, rel=0.05)


def test_model_sorted_and_round_trip():
    m = MultiLorentzianModel((LorentzianPeak(1, 50, 2), LorentzianPeak(2, 10, 3)), 0.25)
    assert list(m.t0) == [10.0, 50.0]
    d = json.loads(json.dumps(m.to_dict()))
    assert MultiLorentzianModel.from_dict(d) == m


def test_from_dict_malformed():
    with pytest.raises(ConfigError):
        MultiLorentzianModel.from_dict({"peaks": [{"m0": 1}]})


def test_area_values():
    assert area(LorentzianPeak(2.0, 0.0, 4.0)) == pytest.approx(4 * math.pi)
    assert area(LorentzianPeak(1.0, 0.0, 1.0)) == pytest.approx(math.pi / 2)


def test_area_against_quadrature(rng):
    for _ in range(20):
        p = LorentzianPeak(rng.uniform(0.1, 5), rng.uniform(-100, 100), rng.uniform(1, 100))
        t = np.linspace(p.t0 - 1000 * p.dt, p.t0 + 1000 * p.dt, 400_001)
        assert np.trapezoid(eval_peak(p, t), t) == pytest.approx(area(p), rel=1e-3)


def test_model_mean_examples():
    assert model_mean(MultiLorentzianModel((), 3.0), (0, 10)).mean == pytest.approx(3.0)
    p = LorentzianPeak(1.0, 0.0, 2.0)
    span = (-2000.0, 2000.0)
    mm = model_mean(MultiLorentzianModel((p,)), span, panels=400_000)
    assert mm.mean == pytest.approx(area(p) / 4000.0, rel=2e-3)


def test_model_mean_ratio_approximation():
    peaks = tuple(LorentzianPeak(1.0, 110.0 * k, 55.0) for k in range(20))
    mm = model_mean(MultiLorentzianModel(peaks), (-55.0, 20 * 110.0 - 55.0))
    # one area pi*m0*dt/2 per interval: mean/m0 = (pi/2) * dt/T
    assert mm.relative_mean == pytest.approx(math.pi / 2 * 0.5, rel=0.15)
    assert mm.implied_ratio == pytest.approx(0.5, rel=0.15)


def test_model_mean_bad_span():
    with pytest.raises(ConfigError):
        model_mean(MultiLorentzianModel(), (1.0, 1.0))


@given(pos, st.integers(-10**4, 10**4), pos, st.integers(0, 10**7))
def test_symmetry(m0, t0, dt, k):
    # dyadic offsets keep t0 +- delta exact, so the comparison can be exact too
    delta = k / 1024.0
    p = LorentzianPeak(m0, t0, dt)
    assert eval_peak(p, t0 + delta) == eval_peak(p, t0 - delta)


@given(pos, pos, st.floats(0, 1e3), st.floats(1e-6, 1e3))
def test_decreasing_away_from_centre(m0, dt, a, gap):
    p = LorentzianPeak(m0, 0.0, dt)
    assert eval_peak(p, a + gap) <= eval_peak(p, a)


@given(pos, centre, pos, st.floats(1e-3, 1e3))
def test_amplitude_linearity(m0, t0, dt, c):
    p = LorentzianPeak(m0, t0, dt)
    t = t0 + dt * np.array([-3.0, -0.5, 0.0, 0.7, 5.0])
    np.testing.assert_allclose(eval_peak(p.scaled(c), t), c * eval_peak(p, t), rtol=1e-12)
    assert area(p.scaled(c)) == pytest.approx(c * area(p), rel=1e-12)
