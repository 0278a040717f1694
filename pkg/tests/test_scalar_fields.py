import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from channel_lab.errors import ConfigError
from channel_lab.scalar_fields import (
    FieldSeries1D,
    FieldSeries2D,
    average_over_phi,
    eval_field,
    eval_partials,
    fit_series2d,
    random_series2d,
)


def naive_eval(f, r, phi):
    total = 0.0
    for k, m, s, v in f.terms:
        trig = math.sin(2 * math.pi * m * phi) if s else math.cos(2 * math.pi * m * phi)
        total += v * r**k * trig
    return total


unit = st.floats(0.0, 1.0, allow_nan=False)
phis = st.floats(-3.0, 3.0, allow_nan=False)


def test_constant_field():
    assert FieldSeries1D.constant(3.0)(0.7) == 3.0
    assert eval_field(FieldSeries2D.constant(3.0), (0.7, 0.2)) == 3.0


def test_one_plus_sine():
    f = FieldSeries2D(((0, 0, 0, 1.0), (0, 1, 1, 1.0)))
    assert eval_field(f, (0.5, 0.25)) == pytest.approx(2.0, abs=1e-15)


def test_random_series_matches_naive_sum():
    rng = np.random.default_rng(1)
    f = random_series2d(rng, 4, 4)
    r = rng.uniform(0, 1, 100)
    phi = rng.uniform(0, 1, 100)
    vec = eval_field(f, (r, phi))
    ref = np.array([naive_eval(f, a, b) for a, b in zip(r, phi)])
    assert np.max(np.abs(vec - ref)) <= 1e-12
    assert all(abs(eval_field(f, (a, b)) - c) <= 1e-12 for a, b, c in zip(r[:10], phi[:10], ref))


def test_partials_examples():
    assert eval_partials(FieldSeries2D.constant(2.0), (0.3, 0.4)) == (0.0, 0.0)
    f = FieldSeries2D(((2, 1, 0, 1.0),))
    dr, dp = eval_partials(f, (0.5, 0.0))
    assert dr == pytest.approx(1.0, abs=1e-15)
    assert dp == pytest.approx(0.0, abs=1e-15)


def test_partials_vs_central_differences():
    rng = np.random.default_rng(2)
    h = 1e-5
    for _ in range(5):
        f = random_series2d(rng, 4, 3)
        r = rng.uniform(0.1, 0.9, 50)
        p = rng.uniform(0, 1, 50)
        dr, dp = eval_partials(f, (r, p))
        fr = (eval_field(f, (r + h, p)) - eval_field(f, (r - h, p))) / (2 * h)
        fp = (eval_field(f, (r, p + h)) - eval_field(f, (r, p - h))) / (2 * h)
        scale_r = np.maximum(np.abs(dr), 1.0)
        scale_p = np.maximum(np.abs(dp), 1.0)
        assert np.max(np.abs(fr - dr) / scale_r) <= 1e-6
        assert np.max(np.abs(fp - dp) / scale_p) <= 1e-6


def test_average_examples():
    f = FieldSeries2D(((0, 0, 0, 1.0), (0, 1, 1, 1.0)))
    assert average_over_phi(f).coeffs == (1.0,)
    assert average_over_phi(FieldSeries2D.constant(5.0)).coeffs == (5.0,)


def test_average_vs_trapezoid():
    rng = np.random.default_rng(3)
    f = random_series2d(rng, 3, 4)
    avg = average_over_phi(f)
    phi = np.arange(10000) / 10000
    for r in (0.0, 0.37, 1.0):
        quad = float(np.mean(eval_field(f, (np.full_like(phi, r), phi))))
        assert abs(avg(r) - quad) <= 1e-10


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), unit, phis)
def test_periodicity_exact(seed, r, phi):
    f = random_series2d(np.random.default_rng(seed), 3, 3)
    assert eval_field(f, (r, phi)) == pytest.approx(eval_field(f, (r, phi + 1.0)), abs=1e-12)


def test_periodicity_bitwise_on_grid():
    rng = np.random.default_rng(4)
    f = random_series2d(rng, 3, 5)
    r = rng.uniform(0, 1, 100)
    phi = rng.integers(0, 8, 100) / 8.0
    assert np.array_equal(eval_field(f, (r, phi)), eval_field(f, (r, phi + 1.0)))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-3, 3), st.floats(-3, 3), unit, unit)
def test_linearity(seed, a, b, r, phi):
    rng = np.random.default_rng(seed)
    F = random_series2d(rng, 2, 2)
    G = random_series2d(rng, 2, 2)
    lhs = eval_field(F * a + G * b, (r, phi))
    rhs = a * eval_field(F, (r, phi)) + b * eval_field(G, (r, phi))
    assert abs(lhs - rhs) <= 1e-14 * max(1.0, abs(lhs)) * 100


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-2, 2))
def test_average_shift_invariant(seed, delta):
    f = random_series2d(np.random.default_rng(seed), 2, 3)
    a = average_over_phi(f)
    b = average_over_phi(f.shift_phi(delta))
    assert np.allclose(a.coeffs, b.coeffs, atol=1e-14)


def test_role_sign_checks():
    FieldSeries1D((1.0, 0.5), role="p")
    with pytest.raises(ConfigError):
        FieldSeries1D((1.0, -2.0), role="p")
    with pytest.raises(ConfigError):
        FieldSeries1D((-1.0, 1.5), role="sigma")
    with pytest.raises(ConfigError):
        FieldSeries1D((1.0,), role="velocity")


def test_degree_caps():
    with pytest.raises(ConfigError):
        FieldSeries1D(tuple(range(10)))
    with pytest.raises(ConfigError):
        FieldSeries2D(((0, 9, 0, 1.0),))


def test_json_round_trip():
    rng = np.random.default_rng(5)
    f = random_series2d(rng, 2, 2)
    g = FieldSeries2D.from_json(json.loads(json.dumps(f.to_json())))
    assert g == f
    p = FieldSeries1D((1.0, 0.25), role="p")
    assert FieldSeries1D.from_json(p.to_json(), "p") == p
    with pytest.raises(ConfigError):
        FieldSeries2D.from_json({"kind": "series2d", "coeffs": [], "extra": 1})


def test_fit_recovers_series():
    rng = np.random.default_rng(6)
    f = random_series2d(rng, 3, 2)
    g, resid = fit_series2d(lambda R, P: eval_field(f, (R, P)))
    assert resid < 1e-10
    r = rng.uniform(0, 1, 20)
    p = rng.uniform(0, 1, 20)
    assert np.max(np.abs(eval_field(g, (r, p)) - eval_field(f, (r, p)))) < 1e-9
