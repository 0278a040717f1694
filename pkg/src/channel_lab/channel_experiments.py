"""Numerical experiments around the heteroclinic channel of the RSP system.

* transverse rate integrals along periodic face orbits,
* scattering-map estimates between consecutive faces,
* the shadowing sweep over the tie-reward parameter plane.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from . import rsp_model as rsp
from .errors import ConfigError, NumericError
from .ode_engine import EventSpec, FacePeriodicOrbit, IntegratorConfig, integrate, periodic_orbit_on_face

MASK_THRESHOLDS = ((0.01, 60), (0.01, 12), (0.10, 6), (0.25, 6))


# ---------------------------------------------------------------------------
# rates


@dataclass(frozen=True)
class RateResult:
    face: str
    energy: float
    period: float
    rate: float
    degenerate: bool = False

    def __post_init__(self):
        if not (self.period > 0 and math.isfinite(self.rate)):
            raise NumericError("rate result must have positive period and finite rate")


def transverse_rate_integral(params: rsp.GameParams, face, orbit: FacePeriodicOrbit, nodes: int = 6) -> RateResult:
    """``int_0^T (V1 + V2) dt`` along a closed face orbit.

    Gauss-Legendre quadrature with ``nodes`` points on each step of the
    dense output.
    """
    face = rsp.FaceId(face)
    if orbit.degenerate:
        xs, ys = rsp.face_reduced_field(params, face).center
        v1, v2 = rsp.transverse_rates_face(params, face, xs, ys)
        return RateResult(face.tag, 0.0, orbit.period, orbit.period * float(v1 + v2), True)
    rec = orbit.orbit
    if orbit.closure_defect > 1e-7:
        raise ConfigError(f"orbit is not closed (defect {orbit.closure_defect:.3e})")
    gx, gw = np.polynomial.legendre.leggauss(nodes)
    th = 0.5 * (gx + 1.0)
    powers = np.stack([th, th**2, th**3, th**4])
    total = 0.0
    for k in range(len(rec.t) - 1):
        t0, t1, y0, Q = rec.segment(k)
        h = t1 - t0
        pts = y0[:, None] + h * (Q @ powers)
        v1, v2 = rsp.transverse_rates_face(params, face, pts[0], pts[1])
        total += 0.5 * h * float(gw @ (v1 + v2))
    return RateResult(face.tag, orbit.energy, orbit.period, total)


def seed_at_energy(params: rsp.GameParams, face, energy: float) -> tuple[float, float]:
    """Point with the given face energy on the ray ``x > x*``, ``y = y*``."""
    if energy < 0:
        raise ConfigError("face energy is non-negative")
    red = rsp.face_reduced_field(params, face)
    xs, ys = red.center
    if energy == 0:
        return (xs, ys)
    fn = lambda x: rsp.face_energy(params, face, (x, ys)) - energy
    hi = 1.0 - 1e-15
    if fn(hi) < 0:
        raise ConfigError(f"energy {energy} exceeds the range reachable on the face")
    return (brentq(fn, xs, hi, xtol=1e-15, rtol=1e-15), ys)


def face_rates(params: rsp.GameParams, energy: float, config: IntegratorConfig | None = None) -> list[RateResult]:
    out = []
    for tag in rsp.CYCLE:
        orb = periodic_orbit_on_face(params, tag, seed_at_energy(params, tag, energy), config)
        out.append(transverse_rate_integral(params, tag, orb))
    return out


# ---------------------------------------------------------------------------
# scattering


@dataclass(frozen=True)
class ScatterSample:
    source_face: str
    source_energy: float
    phase: float
    delta: float
    target_face: str
    target_energy: float
    flight_time: float
    failed: bool = False
    reason: str = ""


def unstable_direction(params: rsp.GameParams, face, u) -> tuple[np.ndarray, float]:
    """Eigenvector of the 4-D Jacobian at a face point for the unstable coordinate.

    Scaled so that the unstable zeroed coordinate grows by exactly 1 along it.
    Returns the vector and its eigenvalue (the transverse rate ``V_u``).
    """
    face = rsp.FaceId(face)
    kind, idx = face.unstable_coordinate
    v1, v2 = rsp.transverse_rates(params, face, u)
    lam = float(v1 if kind == "x" else v2)
    J = rsp.jacobian(params, u)
    # coordinate functional for the unstable coordinate in (x1, x2, y1, y2)
    ell = np.zeros(4)
    base = 0 if kind == "x" else 2
    if idx < 2:
        ell[base + idx] = 1.0
    else:
        ell[base:base + 2] = -1.0
    # solve (J - lam I) v = 0 with ell . v = 1 in the least-squares sense
    M = np.vstack([J - lam * np.eye(4), ell])
    rhs = np.zeros(5)
    rhs[4] = 1.0
    v, *_ = np.linalg.lstsq(M, rhs, rcond=None)
    return v, lam


class _CumulativeRate:
    """``I(t) = int_0^t V_u`` along a closed face orbit, extended periodically."""

    def __init__(self, params, face, orb: FacePeriodicOrbit, nodes: int = 6):
        self.params, self.face, self.orb = params, rsp.FaceId(face), orb
        kind, _ = self.face.unstable_coordinate
        self._which = 0 if kind == "x" else 1
        self._gx, self._gw = np.polynomial.legendre.leggauss(nodes)
        rec = orb.orbit
        acc = [0.0]
        for k in range(len(rec.t) - 1):
            acc.append(acc[-1] + self._piece(k, rec.t[k + 1]))
        self._acc = np.array(acc)
        self.per_period = float(self._acc[-1])

    def _piece(self, k, t):
        t0, t1, y0, Q = self.orb.orbit.segment(k)
        h = t1 - t0
        if t <= t0:
            return 0.0
        th = (0.5 * (self._gx + 1.0)) * (t - t0) / h
        pts = y0[:, None] + h * (Q @ np.stack([th, th**2, th**3, th**4]))
        v = rsp.transverse_rates_face(self.params, self.face, pts[0], pts[1])[self._which]
        return 0.5 * (t - t0) * float(self._gw @ v)

    def __call__(self, t: float) -> float:
        T = self.orb.period
        n = math.floor(t / T)
        tr = t - n * T
        rec = self.orb.orbit
        k = min(max(int(np.searchsorted(rec.t, tr, side="right")) - 1, 0), len(rec.t) - 2)
        return n * self.per_period + self._acc[k] + self._piece(k, tr)


def fiber_start_time(cum: _CumulativeRate, t_phase: float, delta: float, delta_ref: float) -> float:
    """Time ``t_phase - tau`` at which a linearized offset ``delta`` grows to
    ``delta_ref`` exactly when the base orbit reaches ``t_phase``."""
    target = math.log(delta_ref / delta)
    if target <= 0:
        return t_phase
    if cum.per_period <= 0:
        raise NumericError("source orbit is not transversally unstable over one period")
    g = lambda tau: cum(t_phase) - cum(t_phase - tau) - target
    hi = cum.orb.period
    while g(hi) < 0:
        hi *= 2.0
    return t_phase - brentq(g, 0.0, hi, xtol=1e-13)


def scattering_map_estimate(
    params: rsp.GameParams,
    source,
    energies,
    phases,
    delta: float,
    rho: float = 0.05,
    config: IntegratorConfig | None = None,
    delta_ref: float = 1e-2,
    fiber_phase: bool = True,
) -> list[ScatterSample]:
    """Target-orbit energies reached from a displaced source orbit.

    For each ``(energy, phase)`` a point of the source orbit is pushed by
    ``delta`` along the unstable transverse eigenvector and the full system
    is integrated until both zeroed coordinates of the successor face drop
    below ``rho``.

    With ``fiber_phase`` the displaced point is taken earlier along the
    source orbit, so that the linearized offset reaches ``delta_ref`` at the
    requested phase.  Without it, the estimate oscillates in ``ln(delta)``
    because halving ``delta`` only delays the departure; with it the
    estimates converge as ``delta -> 0``.
    """
    if not (0.0 < delta <= 1e-2):
        raise ConfigError("delta must lie in (0, 1e-2]; delta = 0 stays on the invariant face")
    energies = list(energies)
    phases = list(phases)
    if not energies or not phases:
        raise ConfigError("energy and phase grids must be nonempty")
    source = rsp.FaceId(source)
    target = source.successor
    cfg = config or IntegratorConfig(max_time=2e3)
    i0, j0 = target.zeroed

    def arrive(t, u):
        x, y = rsp._full(u)
        return max(x[i0], y[j0]) - rho

    def escape(t, u):
        x, y = rsp._full(u)
        return min(x.min(), y.min()) + 1e-9

    events = [EventSpec("arrive", arrive, -1, terminal=True), EventSpec("escape", escape, -1, terminal=True)]
    rhs = lambda t, u: rsp.vector_field(params, u)
    out = []
    for energy in energies:
        orb = periodic_orbit_on_face(params, source, seed_at_energy(params, source, energy), cfg)
        cum = None if orb.degenerate or not fiber_phase else _CumulativeRate(params, source, orb)
        for phase in phases:
            if orb.degenerate:
                xf, yf = orb.seed
            else:
                t_start = (phase % 1.0) * orb.period
                if fiber_phase:
                    t_start = fiber_start_time(cum, t_start, delta, delta_ref) % orb.period
                xf, yf = orb.orbit(t_start)
            u = rsp.from_face_coords(source, xf, yf)
            v, _ = unstable_direction(params, source, u)
            start = u + delta * v
            try:
                rec = integrate(rhs, start, cfg, events)
            except NumericError as exc:
                out.append(ScatterSample(source, energy, phase, delta, target, math.nan, math.nan, True, str(exc)))
                continue
            hit = [e for e in rec.events if e.name == "arrive"]
            if rec.status != "terminated" or not hit:
                reason = "escaped" if rec.events else "max_time"
                out.append(ScatterSample(source, energy, phase, delta, target, math.nan, rec.t_final, True, reason))
                continue
            x, y = rsp._full(hit[0].state)
            ia, ib = target.x_pair
            ja, jb = target.y_pair
            px = x[ia] / (x[ia] + x[ib])
            py = y[ja] / (y[ja] + y[jb])
            e_t = rsp.face_energy(params, target, (px, py))
            out.append(ScatterSample(source, energy, phase, delta, target, float(e_t), hit[0].t))
    return out


# ---------------------------------------------------------------------------
# shadowing sweep


@dataclass
class ShadowGridCell:
    eps_x: float
    eps_y: float
    n: int
    delta: float
    rho: float
    fractions: list
    reasons: dict = field(default_factory=dict)

    def mask(self, threshold: float, k: int) -> bool:
        return k < len(self.fractions) and self.fractions[k] >= threshold


@dataclass(frozen=True)
class SweepConfig:
    n: int = 1000
    delta: float = 1e-4
    rho: float = 0.05
    kmax: int = 60
    max_time: float = 1e4
    rel_tol: float = 1e-8
    abs_tol: float = 1e-8
    max_steps: int = 10_000_000
    start_face: str = "a"
    leave: str = "channel"  # channel | faces

    def __post_init__(self):
        if self.n < 1:
            raise ConfigError("N must be at least 1")
        if not (0.0 < self.delta < self.rho < 0.5):
            raise ConfigError("need 0 < delta < rho < 0.5")
        if self.kmax < 1:
            raise ConfigError("kmax must be at least 1")
        if self.leave not in ("channel", "faces"):
            raise ConfigError("leave must be 'channel' or 'faces'")
        rsp.FaceId(self.start_face)


def sample_starts(cell_index: int, n: int, cfg: SweepConfig, seed: int) -> np.ndarray:
    """Log-coordinate starts for one grid cell, one RNG stream per sample."""
    face = rsp.FaceId(cfg.start_face)
    out = np.empty((n, 6))
    for s in range(n):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(cell_index, s)))
        xf, yf = rng.uniform(cfg.rho, 1.0 - cfg.rho, 2)
        dx, dy = rng.uniform(0.0, cfg.delta, 2)
        while dx == 0.0 or dy == 0.0:
            dx, dy = rng.uniform(0.0, cfg.delta, 2)
        u = rsp.from_face_coords(face, xf, yf, dx, dy)
        x, y = rsp._full(u)
        out[s, :3] = np.log(x)
        out[s, 3:] = np.log(y)
    return out


def run_cell(eps_x: float, eps_y: float, cell_index: int, cfg: SweepConfig, seed: int):
    """Visit counts and termination reasons for every sample of one cell."""
    from . import _sweep_kernel as K

    params = rsp.GameParams(eps_x, eps_y)
    starts = sample_starts(cell_index, cfg.n, cfg, seed)
    ks = np.zeros(cfg.n, dtype=np.int64)
    reasons = np.zeros(cfg.n, dtype=np.int64)
    times = np.zeros(cfg.n)
    mode = K.LEAVE_CHANNEL if cfg.leave == "channel" else K.LEAVE_FACES
    K.run_batch(
        starts, params.A, params.B, cfg.rho, cfg.max_time, cfg.kmax, cfg.rel_tol, cfg.abs_tol,
        cfg.max_steps, mode, rsp.CYCLE.index(cfg.start_face), ks, reasons, times,
    )
    return ks, reasons, times


def fractions_from_counts(ks: np.ndarray, kmax: int) -> list:
    n = len(ks)
    return [float(np.count_nonzero(ks >= k)) / n for k in range(kmax + 1)]


def grid_values(gmin: float = -0.9, gmax: float = 0.9, step: float = 0.1) -> np.ndarray:
    m = int(round((gmax - gmin) / step))
    return np.round(gmin + step * np.arange(m + 1), 12)


def shadowing_sweep(
    eps_x_values,
    eps_y_values,
    cfg: SweepConfig | None = None,
    seed: int = 0,
    threads: int | None = None,
    subsample: tuple = (),
):
    """Fractions of starts that follow the face cycle for ``k`` visits.

    Parameters
    ----------
    eps_x_values, eps_y_values : sequence of float
        Grid axes; cells are enumerated row-major (eps_x outer).
    cfg : SweepConfig
    seed : int
        Master seed; sample streams are keyed by (cell index, sample index)
        so results do not depend on ``threads``.
    subsample : tuple of int
        Extra sample counts ``n' < cfg.n``; fractions for the first ``n'``
        samples of every cell are returned as well (identical to a run with
        ``n = n'``).

    Returns
    -------
    list of ShadowGridCell, or ``(cells, {n': cells})`` when ``subsample``
    is given.
    """
    cfg = cfg or SweepConfig()
    cells_spec = [(ex, ey) for ex in eps_x_values for ey in eps_y_values]
    workers = threads or default_threads()

    def job(i):
        ex, ey = cells_spec[i]
        return run_cell(float(ex), float(ey), i, cfg, seed)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(job, range(len(cells_spec))))
    else:
        results = [job(i) for i in range(len(cells_spec))]

    def build(n):
        cells = []
        for (ex, ey), (ks, rs, _) in zip(cells_spec, results):
            names = ("kmax", "left", "timeout", "max_steps")
            counts = np.bincount(rs[:n], minlength=4)
            cells.append(
                ShadowGridCell(
                    float(ex), float(ey), n, cfg.delta, cfg.rho,
                    fractions_from_counts(ks[:n], cfg.kmax),
                    {nm: int(c) for nm, c in zip(names, counts)},
                )
            )
        return cells

    cells = build(cfg.n)
    if subsample:
        return cells, {n: build(n) for n in subsample}
    return cells


def default_threads() -> int:
    env = os.environ.get("CHANNEL_LAB_THREADS")
    if env:
        try:
            v = int(env)
        except ValueError as exc:
            raise ConfigError(f"CHANNEL_LAB_THREADS must be an integer, got {env!r}") from exc
        if v < 1:
            raise ConfigError("CHANNEL_LAB_THREADS must be positive")
        return v
    return 1


def masks(cells, thresholds=MASK_THRESHOLDS) -> dict:
    """``{(threshold, k): boolean array over cells}``."""
    return {(th, k): np.array([c.mask(th, k) for c in cells]) for th, k in thresholds}


def mask_flip_fractions(cells_a, cells_b, thresholds=MASK_THRESHOLDS) -> dict:
    """Share of cells whose mask value differs, per mask."""
    ma, mb = masks(cells_a, thresholds), masks(cells_b, thresholds)
    return {key: float(np.count_nonzero(ma[key] != mb[key])) / len(cells_a) for key in ma}
