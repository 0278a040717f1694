import math

import numpy as np
import pytest

from channel_lab.cone_field import jacobian_field
from channel_lab.errors import ConfigError, DivergenceError, HypothesisViolation
from channel_lab.foliation import (
    ExtendedMap,
    GridSpec,
    HyperplaneFieldGrid,
    contraction_probe,
    fixed_point_field,
    gamma_v_apply,
    integrate_leaf,
    jacobian_blocks,
    leaf_correspondence_check,
    mu_recursive,
)
from channel_lab.scalar_fields import FieldSeries2D as F2
from channel_lab.toy_return_map import ZMapCoeffs, z_return_map

from models import remainder_model

TOL = 1e-10


@pytest.fixture(scope="module")
def converged():
    emap = remainder_model(1e-3)
    grid, bounds = fixed_point_field(emap, GridSpec(), tol=TOL)
    return emap, grid, bounds


def random_starts(rng, n, y0=2.0**-13):
    y = np.exp(rng.uniform(math.log(1e-8), math.log(y0), n))
    return np.column_stack([y, rng.uniform(0, 1, n), rng.uniform(0.1, 0.9, n), rng.uniform(0, 1, n)])


def test_truncated_blocks_closed_form():
    emap = remainder_model(0.0)
    a1, h, G = math.sqrt(0.1), 0.1, 2.0
    for y in (1e-3, 1e-6, 1e-9):
        jb = jacobian_blocks(emap, (y, 0.3, 0.4, 0.7))
        assert np.array_equal(jb.B, np.zeros(3))
        assert np.array_equal(jb.C, np.zeros(3))
        assert jb.D == pytest.approx(G * (a1 / h) ** G * y ** (G - 1) * h, rel=1e-12)
        # the D-weight is constant across levels
        assert jb.weights["D2"] == pytest.approx(G * (a1 / h) ** G * h, rel=1e-12)


def test_A_matches_truncated_jacobian():
    emap = remainder_model(0.0)
    rng = np.random.default_rng(0)
    x = rng.uniform(0, 1, (50, 3))
    A, _, _, _ = emap.blocks(np.full(50, math.log(1e-5)), x)
    J = jacobian_field(emap.coeffs, x[:, 1], x[:, 2])
    assert np.max(np.abs(A - J)) <= 1e-12


def test_blocks_vs_differences():
    emap = remainder_model(1e-2)
    rng = np.random.default_rng(1)
    h = 1e-7
    for _ in range(5):
        ly = math.log(rng.uniform(1e-4, 1e-3))
        x = rng.uniform([0.2, 0.2, 0.2], [0.8, 0.8, 0.8])
        A, B, C, D = emap.blocks(ly, x)
        num_A = np.empty((3, 3))
        num_C = np.empty(3)
        for j in range(3):
            e = np.zeros(3)
            e[j] = h
            lp, xp = emap.step(ly, x + e)
            lm, xm = emap.step(ly, x - e)
            num_A[:, j] = (xp - xm) / (2 * h)
            num_C[j] = (math.exp(lp) - math.exp(lm)) / (2 * h)
        y = math.exp(ly)
        dy = 1e-4 * y
        lp, xp = emap.step(math.log(y + dy), x)
        lm, xm = emap.step(math.log(y - dy), x)
        assert np.max(np.abs(A - num_A)) <= 1e-6
        assert np.max(np.abs(B - (xp - xm) / (2 * dy))) <= 1e-6 * max(1.0, np.abs(B).max())
        assert np.max(np.abs(C - num_C)) <= 1e-6
        assert D == pytest.approx((math.exp(lp) - math.exp(lm)) / (2 * dy), rel=1e-6)


def test_truncated_step_matches_return_map():
    emap = remainder_model(0.0)
    rng = np.random.default_rng(2)
    for x in rng.uniform(0, 1, (20, 3)):
        mine = emap.truncated(x[None, :])[0]
        ref = z_return_map(emap.coeffs, tuple(x)).as_tuple()
        d = np.asarray(mine) - np.asarray(ref)
        d[[0, 2]] -= np.round(d[[0, 2]])
        assert np.max(np.abs(d)) <= 1e-14


def test_constant_b0_violates_det_floor():
    k = F2.constant
    co = ZMapCoeffs(k(0.3), k(2.0), k(0.5), F2(((0, 1, 1, 0.1),)), z_mod_one=True)
    emap = ExtendedMap(co, a1=math.sqrt(0.1), h=0.1)
    with pytest.raises(HypothesisViolation):
        jacobian_blocks(emap, (1e-5, 0.1, 0.2, 0.3))
    with pytest.raises(HypothesisViolation):
        fixed_point_field(emap)


def test_extended_map_validation():
    k = F2.constant
    with pytest.raises(ConfigError):
        ExtendedMap(ZMapCoeffs(k(0.0), k(2.5), k(0.5), k(0.0)))
    with pytest.raises(ConfigError):
        ExtendedMap(ZMapCoeffs(k(0.0), k(2.0), k(0.5), k(0.0)), h=0.7)
    with pytest.raises(ConfigError):
        GridSpec(y0=1e-13)


def test_zero_field_is_fixed_in_truncated_mode():
    emap = remainder_model(0.0)
    grid = HyperplaneFieldGrid(GridSpec(), emap)
    assert np.array_equal(gamma_v_apply(grid, emap, (1e-5, 0.2, 0.5, 0.1)), np.zeros(3))
    mu0, b = fixed_point_field(emap)
    assert b.sweeps == 1
    assert not np.any(mu0.mu)
    assert b.residual == 0.0


def test_extended_convergence(converged):
    emap, grid, b = converged
    assert b.sweeps <= 50
    assert b.q < 1
    assert b.residual <= 2 * TOL
    assert b.ball_ratio <= 1.1
    assert b.det_min >= emap.det_floor
    assert b.y_star == GridSpec().y0
    for v in (b.A3, b.B2, b.C2, b.D2):
        assert v >= 0 and np.isfinite(v)


def test_contraction_probe(converged):
    _, grid, b = converged
    ratios = contraction_probe(grid, np.random.default_rng(3), b.ball_bound)
    assert max(ratios) < 1


def test_grid_field_matches_orbit_recursion():
    emap = remainder_model(1e-3)
    spec = GridSpec(12, 7, 12, interp="spectral")
    grid, _ = fixed_point_field(emap, spec, tol=TOL)
    rng = np.random.default_rng(4)
    for k in (0, 5, 20):
        for i, j, l in rng.integers(0, [spec.nz, spec.nr, spec.nphi], (4, 3)):
            x = np.array([grid.z[i], grid.r[j], grid.phi[l]])
            ref = mu_recursive(emap, grid.ly[k], x)
            assert np.linalg.norm(ref - grid.mu[k, i, j, l]) / abs(grid.ly[k]) <= 1e-6


def test_no_convergence_reported():
    with pytest.raises(DivergenceError):
        fixed_point_field(remainder_model(1e-3), tol=1e-300, max_iters=2)


def test_zero_field_leaf_is_vertical():
    emap = remainder_model(0.0)
    grid = HyperplaneFieldGrid(GridSpec(), emap)
    leaf = integrate_leaf(grid, (1e-4, 0.2, 0.5, 0.6))
    assert np.array_equal(leaf.endpoint, [0.2, 0.5, 0.6])
    assert np.all(leaf.x == leaf.x[0])
    assert not leaf.exited


def test_leaf_endpoint_stability(converged):
    _, grid, _ = converged
    for start in random_starts(np.random.default_rng(5), 5):
        a = integrate_leaf(grid, start, rel_tol=1e-11, abs_tol=1e-13).endpoint
        b = integrate_leaf(grid, start, rel_tol=5e-12, abs_tol=5e-14).endpoint
        assert np.max(np.abs(a - b)) <= 1e-8


def test_leaf_endpoints_injective(converged):
    _, grid, _ = converged
    rng = np.random.default_rng(6)
    gaps = []
    for _ in range(100):
        y = math.exp(rng.uniform(math.log(1e-8), math.log(2.0**-13)))
        x1 = rng.uniform([0, 0.1, 0], [1, 0.9, 1])
        x2 = rng.uniform([0, 0.1, 0], [1, 0.9, 1])
        e1 = integrate_leaf(grid, (y, *x1)).endpoint
        e2 = integrate_leaf(grid, (y, *x2)).endpoint
        gaps.append(np.linalg.norm(e1 - e2))
    assert min(gaps) > 0


def test_correspondence_truncated_gap_zero():
    emap = remainder_model(0.0)
    grid = HyperplaneFieldGrid(GridSpec(), emap)
    rep = leaf_correspondence_check(emap, grid, random_starts(np.random.default_rng(7), 5), 10)
    assert np.all(rep.gaps == 0.0)
    assert np.max(rep.defects) <= 1e-14
    assert rep.v2_decreasing


def test_correspondence_extended(converged):
    emap, grid, _ = converged
    rep = leaf_correspondence_check(emap, grid, random_starts(np.random.default_rng(8), 20), 30)
    assert rep.v2_decreasing and not rep.truncated
    assert np.all(np.diff(rep.log_v2, axis=1) < 0)
    assert np.isfinite(rep.const) and rep.const > 0
    # leaf offsets shrink with v2 once it is small
    assert rep.max_gap_by_step[-1] < rep.max_gap_by_step[0]


def test_spectral_refinement_within_five_tol():
    Om = F2(((0, 0, 0, 0.3), (1, 0, 0, 0.02)))
    b0 = F2(((0, 0, 0, 0.5), (0, 1, 0, 0.2), (1, 1, 0, 0.1)))
    c = F2(((0, 1, 1, 0.2), (1, 1, 1, 0.1)))
    co = ZMapCoeffs(Om, F2.constant(2.0), b0, c, mode="extended", z_mod_one=True, eps=(1e-3,) * 3)
    emap = ExtendedMap(co, a1=math.sqrt(0.1), h=0.1)
    spec = GridSpec(12, 7, 12, interp="spectral")
    g1, _ = fixed_point_field(emap, spec, tol=TOL)
    g2, _ = fixed_point_field(emap, spec.refined(), tol=TOL)
    common = g2.mu[:, ::2, ::2, ::2]
    W = np.abs(g1.ly)[:, None, None, None]
    assert np.max(np.linalg.norm(g1.mu - common, axis=-1) / W) <= 5 * TOL
