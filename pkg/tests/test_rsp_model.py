import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from channel_lab import rsp_model as rsp
from channel_lab.errors import ConfigError
from channel_lab.ode_engine import IntegratorConfig, integrate

eps = st.floats(-0.9, 0.9, allow_nan=False)


def full_velocity(params, u):
    v = rsp.vector_field(params, u)
    return np.array([v[0], v[1], -v[0] - v[1]]), np.array([v[2], v[3], -v[2] - v[3]])


def random_interior(rng):
    x = rng.dirichlet(np.ones(3))
    y = rng.dirichlet(np.ones(3))
    return np.array([x[0], x[1], y[0], y[1]])


def test_symmetric_interior_point_is_rest():
    for ex, ey in ((0.0, 0.0), (0.5, -0.25), (-0.8, 0.7)):
        v = rsp.vector_field(rsp.GameParams(ex, ey), np.full(4, 1 / 3))
        assert np.max(np.abs(v)) <= 1e-15


def test_zb_residual():
    p = rsp.GameParams(0.5, -0.25)
    zb = np.array([0.0, (1 - 0.25) / (3 - 0.25), (1 - 0.5) / (3 - 0.5), 0.0])
    assert np.linalg.norm(rsp.vector_field(p, zb)) <= 1e-12
    assert np.allclose(rsp.equilibrium(p, "b").point.as_array(), zb, atol=1e-15)


def test_zero_coordinate_stays_zero():
    rng = np.random.default_rng(0)
    p = rsp.GameParams(0.3, 0.1)
    for _ in range(20):
        u = random_interior(rng)
        u[0] = 0.0
        assert rsp.vector_field(p, u)[0] == 0.0


def test_equilibria_at_zero():
    eq = {e.face: e.point.as_array() for e in rsp.equilibria(rsp.GameParams(0.0, 0.0))}
    assert np.allclose(eq["a"], [0, 2 / 3, 1 / 3, 2 / 3], atol=1e-15)
    assert np.allclose(eq["c"], [1 / 3, 0, 0, 1 / 3], atol=1e-15)


def test_equilibria_random_params():
    rng = np.random.default_rng(1)
    for _ in range(100):
        p = rsp.GameParams(*rng.uniform(-0.95, 0.95, 2))
        for e in rsp.equilibria(p):
            assert np.max(np.abs(rsp.vector_field(p, e.point.as_array()))) <= 1e-12


def test_equilibria_grid():
    g = np.round(np.arange(-9, 10) * 0.1, 12)
    for ex in g:
        for ey in g:
            p = rsp.GameParams(ex, ey)
            for e in rsp.equilibria(p):
                assert np.max(np.abs(rsp.vector_field(p, e.point.as_array()))) <= 1e-12


def test_face_b_affine_parts():
    rng = np.random.default_rng(2)
    for _ in range(5):
        ex, ey = rng.uniform(-0.9, 0.9, 2)
        p = rsp.GameParams(ex, ey)
        red = rsp.face_reduced_field(p, "b")
        y = rng.uniform(0, 1, 50)
        x = rng.uniform(0, 1, 50)
        assert np.allclose(red.f(y), (1 - ex) - (3 - ex) * y, atol=1e-13)
        assert np.allclose(red.g(x), (3 + ey) * x - (1 + ey), atol=1e-13)
        zb = rsp.equilibrium(p, "b").point
        assert red.center == pytest.approx((zb.x2, zb.y1), abs=1e-15)


def test_reduced_field_matches_full_field():
    rng = np.random.default_rng(3)
    for tag in rsp.FACE_TAGS:
        p = rsp.GameParams(*rng.uniform(-0.9, 0.9, 2))
        red = rsp.face_reduced_field(p, tag)
        face = rsp.FaceId(tag)
        for _ in range(200):
            xf, yf = rng.uniform(0.01, 0.99, 2)
            u = rsp.from_face_coords(face, xf, yf)
            x_dot, y_dot = full_velocity(p, u)
            v = red.rhs(0.0, np.array([xf, yf]))
            assert abs(x_dot[face.x_pair[0]] - v[0]) <= 1e-12
            assert abs(y_dot[face.y_pair[0]] - v[1]) <= 1e-12


def test_face_invariance():
    rng = np.random.default_rng(4)
    p = rsp.GameParams(0.2, -0.4)
    for tag in rsp.FACE_TAGS:
        face = rsp.FaceId(tag)
        i0, j0 = face.zeroed
        for _ in range(20):
            u = rsp.from_face_coords(face, *rng.uniform(0, 1, 2))
            x, y = rsp._full(u)
            x_dot, y_dot = rsp.vector_field_full(p, x, y)
            assert x_dot[i0] == 0.0 and y_dot[j0] == 0.0
            # the reduced 4-vector keeps the implied coordinate fixed to roundoff
            x4, y4 = full_velocity(p, u)
            assert abs(x4[i0]) <= 1e-15 and abs(y4[j0]) <= 1e-15


@settings(max_examples=50, deadline=None)
@given(eps, eps, st.integers(0, 2**32 - 1))
def test_relabeling_commutes(ex, ey, seed):
    p = rsp.GameParams(ex, ey)
    u = random_interior(np.random.default_rng(seed))
    x_dot, y_dot = full_velocity(p, u)
    lhs = rsp.vector_field(p, rsp.relabel(u))
    rhs = np.array([x_dot[1], x_dot[2], y_dot[1], y_dot[2]])
    assert np.max(np.abs(lhs - rhs)) <= 1e-13


def test_relabel_permutes_faces():
    p = rsp.GameParams(0.3, -0.2)
    for e in rsp.equilibria(p):
        moved = rsp.relabel(e.point.as_array())
        target = rsp.relabel_face(e.face)
        assert rsp.face_distance(target, moved) == 0.0


def test_energy_at_center_and_gradient():
    p = rsp.GameParams(0.4, 0.1)
    for tag in rsp.FACE_TAGS:
        xs, ys = rsp.face_reduced_field(p, tag).center
        assert rsp.face_energy(p, tag, (xs, ys)) == pytest.approx(0.0, abs=1e-15)
        h = 1e-6
        gx = (rsp.face_energy(p, tag, (xs + h, ys)) - rsp.face_energy(p, tag, (xs - h, ys))) / (2 * h)
        gy = (rsp.face_energy(p, tag, (xs, ys + h)) - rsp.face_energy(p, tag, (xs, ys - h))) / (2 * h)
        assert abs(gx) < 1e-8 and abs(gy) < 1e-8
        assert rsp.face_energy(p, tag, (xs + 0.1, ys)) > 0


def test_energy_conserved_along_face_orbit():
    p = rsp.GameParams(0.5, -0.25)
    cfg = IntegratorConfig(rel_tol=1e-10, abs_tol=1e-12, max_time=100.0)
    for tag in ("b", "f"):
        red = rsp.face_reduced_field(p, tag)
        xs, ys = red.center
        u0 = np.array([xs + 0.15, ys])
        rec = integrate(red.rhs, u0, cfg, [], t_end=100.0)
        E = rsp.face_energy(p, tag, (rec.y[:, 0], rec.y[:, 1]))
        assert np.max(np.abs(E - E[0])) <= 1e-8


def test_energy_derivative_vanishes():
    rng = np.random.default_rng(5)
    p = rsp.GameParams(-0.3, 0.6)
    red = rsp.face_reduced_field(p, "c")
    h = 1e-6
    for _ in range(20):
        x, y = rng.uniform(0.05, 0.95, 2)
        v = red.rhs(0.0, np.array([x, y]))
        ex = (rsp.face_energy(p, "c", (x + h, y)) - rsp.face_energy(p, "c", (x - h, y))) / (2 * h)
        ey = (rsp.face_energy(p, "c", (x, y + h)) - rsp.face_energy(p, "c", (x, y - h))) / (2 * h)
        assert abs(ex * v[0] + ey * v[1]) <= 1e-7


def test_linear_frequency_matches_eigenvalues():
    rng = np.random.default_rng(6)
    for _ in range(10):
        p = rsp.GameParams(*rng.uniform(-0.9, 0.9, 2))
        for tag in rsp.FACE_TAGS:
            red = rsp.face_reduced_field(p, tag)
            lam = np.linalg.eigvals(red.jacobian(*red.center))
            assert np.max(np.abs(lam.real)) <= 1e-12
            assert np.max(np.abs(lam.imag)) == pytest.approx(red.omega_lin, rel=1e-10)


def test_cycle_successor_exhaustive():
    seq = ["a"]
    for _ in range(12):
        seq.append(rsp.successor(seq[-1]))
    assert "".join(seq) == "adcefbadcefba"


def test_invalid_inputs():
    with pytest.raises(ConfigError):
        rsp.GameParams(1.0, 0.0)
    with pytest.raises(ConfigError):
        rsp.FaceId("g")
    with pytest.raises(ConfigError):
        rsp.SimplexState(0.8, 0.5, 0.2, 0.2).validate()
