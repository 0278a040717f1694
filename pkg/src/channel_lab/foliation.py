"""Invariant foliation of the extended return map.

The extended map acts on ``(y, x)`` with ``y = v2`` and ``x = (z, r, phi)``::

    y' = G(x, y) = h (a1(r, phi) y / h)^Gamma
    x' = F(x, y) = (Omega + Gamma z + e_z s(y) rho_z,
                    b0 + e_r (y/h) rho_r,
                    c + z + e_phi s(y) rho_phi)

with ``s(y) = (y/h) ln(y/h)``; ``z`` and ``phi`` are taken mod 1.  Leaves
``x = h(y)`` have slope fields ``mu = dx/dy`` fixed by

    mu(x, y) = (A - mu' C)^-1 (mu' D - B),    mu' = mu(F(x, y), G(x, y)),

with ``A = dF/dx``, ``B = dF/dy``, ``C = dG/dx``, ``D = dG/dy``.  ``y`` is
carried as ``ln y`` throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConditioningError,
    ConfigError,
    DivergenceError,
    HypothesisViolation,
)
from .ode_engine import IntegratorConfig, integrate
from .scalar_fields import FieldSeries2D, eval_partials
from .toy_return_map import ZMapCoeffs

LN2 = math.log(2.0)
# below exp(-LOG_FLOOR) every y-weighted quantity is zero in double precision
LOG_FLOOR = 745.0


def _circ(d):
    return d - np.round(d)


class ExtendedMap:
    """Extended map built from rescaled-map fields and the ``v2``-map.

    Parameters
    ----------
    coeffs : ZMapCoeffs
        ``Omega, Gamma, b0, c`` with ``Gamma`` a constant integer >= 2;
        ``eps`` and ``shapes`` give the remainder terms.
    a1 : FieldSeries2D or float
    h : float
    det_floor : float
        Lower bound required for ``|det A|``.
    """

    def __init__(self, coeffs: ZMapCoeffs, a1=1.0, h: float = 0.1, det_floor: float = 1e-6):
        g = coeffs.gamma_constant
        if g is None or g != int(g) or g < 2:
            raise ConfigError("extended map needs a constant integer Gamma >= 2")
        if not (0 < h < 0.5):
            raise ConfigError("h must lie in (0, 0.5)")
        self.coeffs = coeffs
        self.gamma = float(g)
        self.a1 = a1 if isinstance(a1, FieldSeries2D) else FieldSeries2D.constant(float(a1))
        self.h = float(h)
        self.lnh = math.log(h)
        self.det_floor = det_floor
        self.eps = tuple(float(e) for e in coeffs.eps)

    def with_eps(self, eps) -> "ExtendedMap":
        c = self.coeffs.with_mode("extended" if any(eps) else "truncated", eps=eps)
        return ExtendedMap(c, self.a1, self.h, self.det_floor)

    @property
    def is_truncated(self) -> bool:
        return not any(self.eps)

    # --- evaluation -----------------------------------------------------
    def _s(self, ly):
        """``(y/h, (y/h) ln(y/h), d/dy[s])`` from ``ln y``."""
        u = np.asarray(ly, dtype=float) - self.lnh
        q = np.exp(u)
        with np.errstate(invalid="ignore"):
            s = np.where(q > 0, q * u, 0.0)
            ds = np.where(q > 0, (u + 1.0) / self.h, 0.0)
        return q, s, ds

    def step(self, ly, x):
        """Image ``(ln y', x')``; works on arrays with ``x.shape = (..., 3)``."""
        x = np.asarray(x, dtype=float)
        z, r, phi = x[..., 0], x[..., 1], x[..., 2]
        c = self.coeffs
        q, s, _ = self._s(ly)
        ez, er, ep = self.eps
        rz, rr, rp = c.shapes
        zn = c.Omega(r, phi) + self.gamma * z
        rn = c.b0(r, phi)
        pn = c.c(r, phi) + z
        if ez:
            zn = zn + ez * s * rz(r, phi)
        if er:
            rn = rn + er * q * rr(r, phi)
        if ep:
            pn = pn + ep * s * rp(r, phi)
        lyn = self.lnh + self.gamma * (np.log(self.a1(r, phi)) + np.asarray(ly) - self.lnh)
        return lyn, np.stack([np.mod(zn, 1.0), rn, np.mod(pn, 1.0)], axis=-1)

    def truncated(self, x):
        """Action on ``{y = 0}``: the truncated return map."""
        return self.step(-np.inf * np.ones(np.shape(x)[:-1]), x)[1]

    def blocks(self, ly, x, check: bool = True):
        """Jacobian blocks ``(A, B, C, D)`` at arrays of points.

        Shapes ``(..., 3, 3)``, ``(..., 3)``, ``(..., 3)``, ``(...)``.
        """
        x = np.asarray(x, dtype=float)
        ly = np.asarray(ly, dtype=float) * np.ones(x.shape[:-1])
        r, phi = x[..., 1], x[..., 2]
        c = self.coeffs
        q, s, ds = self._s(ly)
        ez, er, ep = self.eps
        rz, rr, rp = c.shapes
        Or, Op = eval_partials(c.Omega, (r, phi))
        br, bp = eval_partials(c.b0, (r, phi))
        cr, cp = eval_partials(c.c, (r, phi))
        one = np.ones_like(r)
        Bz = np.zeros_like(r)
        Br = np.zeros_like(r)
        Bp = np.zeros_like(r)
        if ez:
            a, b = eval_partials(rz, (r, phi))
            Or, Op = Or + ez * s * a, Op + ez * s * b
            Bz = ez * ds * rz(r, phi)
        if er:
            a, b = eval_partials(rr, (r, phi))
            br, bp = br + er * q * a, bp + er * q * b
            Br = er / self.h * rr(r, phi) * one
        if ep:
            a, b = eval_partials(rp, (r, phi))
            cr, cp = cr + ep * s * a, cp + ep * s * b
            Bp = ep * ds * rp(r, phi)
        A = np.stack(
            [
                np.stack([self.gamma * one, Or * one, Op * one], -1),
                np.stack([0 * one, br * one, bp * one], -1),
                np.stack([one, cr * one, cp * one], -1),
            ],
            -2,
        )
        B = np.stack([Bz * one, Br * one, Bp * one], -1)
        lyn = self.lnh + self.gamma * (np.log(self.a1(r, phi)) + ly - self.lnh)
        yn = np.exp(lyn)
        D = self.gamma * np.exp(lyn - ly)
        a1 = self.a1(r, phi)
        ar, ap = eval_partials(self.a1, (r, phi))
        C = np.stack([0 * one, self.gamma * yn * ar / a1 * one, self.gamma * yn * ap / a1 * one], -1)
        if check:
            det = np.linalg.det(A)
            bad = np.abs(det) < self.det_floor
            if np.any(bad):
                i = np.flatnonzero(bad.ravel())[0]
                raise HypothesisViolation(
                    f"|det dF/dx| = {abs(det.ravel()[i]):.3e} below floor {self.det_floor:g} "
                    f"at x = {x.reshape(-1, 3)[i].tolist()}"
                )
        return A, B, C, D

    def closure(self, ly, x):
        """Slope ``-A^-1 B`` used below the finest grid level (``D -> 0``)."""
        A, B, _, _ = self.blocks(ly, x, check=False)
        return -np.linalg.solve(A, B[..., None])[..., 0]


@dataclass(frozen=True)
class JacobianBlocks:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: float
    weights: dict = field(default_factory=dict)


def jacobian_blocks(emap: ExtendedMap, point) -> JacobianBlocks:
    """Blocks at ``(y, z, r, phi)`` plus the weighted-norm ratios.

    ``weights`` holds ``|A^-1|``, ``|B|/|ln y|``, ``|C|/(y^G |ln y|)`` and
    ``|D|/y^(G-1)``.
    """
    y, z, r, phi = point
    if not (0 < y < 1):
        raise ConfigError("y must lie in (0, 1)")
    ly = math.log(y)
    x = np.array([z, r, phi], dtype=float)
    A, B, C, D = emap.blocks(ly, x)
    G = emap.gamma
    w = {
        "A3": float(np.linalg.norm(np.linalg.inv(A), 2)),
        "B2": float(np.linalg.norm(B) / abs(ly)),
        "C2": float(np.linalg.norm(C) / (math.exp(G * ly) * abs(ly))),
        "D2": float(abs(D) / math.exp((G - 1) * ly)),
    }
    return JacobianBlocks(A, B, C, float(D), w)


# ---------------------------------------------------------------------------
# grid


@dataclass(frozen=True)
class GridSpec:
    nz: int = 12
    nr: int = 9
    nphi: int = 12
    y0: float = 2.0**-13
    y_min: float = 1e-12
    interp: str = "multilinear"

    def __post_init__(self):
        if min(self.nz, self.nphi) < 2 or self.nr < 2:
            raise ConfigError("grid needs at least 2 nodes per direction")
        if not (0 < self.y_min < self.y0 < 1):
            raise ConfigError("need 0 < y_min < y0 < 1")
        if self.interp not in ("multilinear", "spectral"):
            raise ConfigError("interp must be 'multilinear' or 'spectral'")

    @property
    def n_levels(self) -> int:
        return int(math.floor(math.log2(self.y0 / self.y_min) + 1e-9)) + 1

    def refined(self) -> "GridSpec":
        return GridSpec(2 * self.nz, 2 * self.nr - 1, 2 * self.nphi, self.y0, self.y_min, self.interp)


def _trig_weights(x, n):
    """Periodic interpolation weights on ``j/n`` (even ``n`` uses the split Nyquist term)."""
    d = np.mod(np.asarray(x)[:, None] - np.arange(n)[None, :] / n + 0.5, 1.0) - 0.5
    a = np.pi * d
    small = np.abs(a) < 1e-14
    a_safe = np.where(small, 1.0, a)
    if n % 2:
        w = np.sin(n * a_safe) / (n * np.sin(a_safe))
    else:
        w = np.sin(n * a_safe) / (n * np.tan(a_safe))
    return np.where(small, 1.0, w)


def _cheb_nodes(n):
    return 0.5 - 0.5 * np.cos(np.pi * np.arange(n) / (n - 1))


def _cheb_weights(x, n):
    nodes = _cheb_nodes(n)
    bw = (-1.0) ** np.arange(n)
    bw[0] *= 0.5
    bw[-1] *= 0.5
    d = np.asarray(x)[:, None] - nodes[None, :]
    exact = np.abs(d) < 1e-15
    d = np.where(exact, 1.0, d)
    t = bw / d
    w = t / t.sum(axis=1, keepdims=True)
    hit = exact.any(axis=1)
    if hit.any():
        w[hit] = exact[hit].astype(float)
    return w


class HyperplaneFieldGrid:
    """Slope field ``mu`` on ``levels x nz x nr x nphi`` nodes.

    Levels are ``y_k = y0 2^-k``; values between levels are linear in
    ``ln y``.  Below the last level the closure ``-A^-1 B`` is used.
    """

    def __init__(self, spec: GridSpec, emap: ExtendedMap, mu: np.ndarray | None = None):
        self.spec = spec
        self.emap = emap
        K = spec.n_levels
        self.ly = math.log(spec.y0) - LN2 * np.arange(K)
        self.z = np.arange(spec.nz) / spec.nz
        self.r = _cheb_nodes(spec.nr) if spec.interp == "spectral" else np.linspace(0.0, 1.0, spec.nr)
        self.phi = np.arange(spec.nphi) / spec.nphi
        shape = (K, spec.nz, spec.nr, spec.nphi, 3)
        self.mu = np.zeros(shape) if mu is None else np.asarray(mu, dtype=float).reshape(shape)

    @property
    def shape(self):
        return self.mu.shape

    def nodes(self):
        """``(ln y, x)`` of every node, flattened in ``mu`` order."""
        K = len(self.ly)
        Z, R, P = np.meshgrid(self.z, self.r, self.phi, indexing="ij")
        x = np.stack([Z, R, P], -1).reshape(-1, 3)
        ly = np.repeat(self.ly, x.shape[0])
        return ly, np.tile(x, (K, 1))

    def copy_with(self, mu) -> "HyperplaneFieldGrid":
        return HyperplaneFieldGrid(self.spec, self.emap, mu)

    def weighted_norm(self, mu=None) -> float:
        m = self.mu if mu is None else mu
        w = np.abs(self.ly)[:, None, None, None]
        return float(np.max(np.linalg.norm(m, axis=-1) / w))

    # --- interpolation ----------------------------------------------------
    def _interp_level(self, mu_k, x):
        s = self.spec
        if s.interp == "spectral":
            wz = _trig_weights(x[:, 0], s.nz)
            wr = _cheb_weights(np.clip(x[:, 1], 0.0, 1.0), s.nr)
            wp = _trig_weights(x[:, 2], s.nphi)
            t = np.einsum("nl,ijlc->nijc", wp, mu_k)
            t = np.einsum("nj,nijc->nic", wr, t)
            return np.einsum("ni,nic->nc", wz, t)
        fz = np.mod(x[:, 0], 1.0) * s.nz
        iz = np.floor(fz).astype(int)
        tz = fz - iz
        iz %= s.nz
        jz = (iz + 1) % s.nz
        fr = np.clip(x[:, 1], 0.0, 1.0) * (s.nr - 1)
        ir = np.minimum(np.floor(fr).astype(int), s.nr - 2)
        tr = fr - ir
        fp = np.mod(x[:, 2], 1.0) * s.nphi
        ip = np.floor(fp).astype(int)
        tp = fp - ip
        ip %= s.nphi
        jp = (ip + 1) % s.nphi
        out = np.zeros((x.shape[0], 3))
        for a, wa in ((iz, 1 - tz), (jz, tz)):
            for b, wb in ((ir, 1 - tr), (ir + 1, tr)):
                for c, wc in ((ip, 1 - tp), (jp, tp)):
                    out += (wa * wb * wc)[:, None] * mu_k[a, b, c]
        return out

    def level_position(self, ly):
        """Fractional level index of ``ln y`` (0 at ``y0``)."""
        return (self.ly[0] - np.asarray(ly)) / LN2

    def interpolate(self, ly, x, mu=None):
        """``mu`` at arbitrary points; ``ly`` shape ``(n,)``, ``x`` shape ``(n, 3)``."""
        m = self.mu if mu is None else mu
        ly = np.atleast_1d(np.asarray(ly, dtype=float))
        x = np.atleast_2d(np.asarray(x, dtype=float))
        K = len(self.ly)
        pos = self.level_position(ly)
        if np.any(pos < -1e-9):
            raise ConfigError("point above the top grid level y0")
        out = np.empty((x.shape[0], 3))
        below = pos > K - 1 + 1e-9
        if below.any():
            out[below] = self.emap.closure(ly[below], x[below])
        inside = ~below
        if inside.any():
            p = np.clip(pos[inside], 0.0, K - 1)
            k0 = np.minimum(np.floor(p + 1e-12).astype(int), K - 1)
            t = p - k0
            t[np.abs(t) < 1e-12] = 0.0
            xi = x[inside]
            res = np.zeros((xi.shape[0], 3))
            for k in np.unique(k0):
                sel = k0 == k
                tt = t[sel]
                v = self._interp_level(m[k], xi[sel])
                w = tt > 0
                if w.any():
                    v[w] = (1 - tt[w])[:, None] * v[w] + tt[w][:, None] * self._interp_level(m[k + 1], xi[sel][w])
                res[sel] = v
            out[inside] = res
        return out


# ---------------------------------------------------------------------------
# graph transform


def _solve_gamma_v(A, B, C, D, mubar, cond_tol=1e-12):
    M = A - mubar[..., :, None] * C[..., None, :]
    rhs = mubar * D[..., None] - B
    sv = np.linalg.svd(M, compute_uv=False)
    bad = sv[..., -1] < cond_tol * sv[..., 0]
    if np.any(bad):
        raise ConditioningError("A - mu C is singular; outside the contraction regime")
    return np.linalg.solve(M, rhs[..., None])[..., 0]


def gamma_v_apply(mu: HyperplaneFieldGrid, emap: ExtendedMap, point) -> np.ndarray:
    """``(A - mu' C)^-1 (mu' D - B)`` at one point ``(y, z, r, phi)``."""
    y, z, r, phi = point
    ly = math.log(y)
    x = np.array([[z, r, phi]], dtype=float)
    A, B, C, D = emap.blocks(np.array([ly]), x)
    lyn, xn = emap.step(np.array([ly]), x)
    mubar = mu.interpolate(lyn, xn)
    return _solve_gamma_v(A, B, C, D, mubar)[0]


def mu_recursive(emap: ExtendedMap, ly: float, x, y_min: float = 1e-12, max_depth: int = 64) -> np.ndarray:
    """Grid-free slope at one point by the forward-orbit recursion.

    The orbit is followed until ``y < y_min`` where the closure is used,
    then the relation is unwound backwards.
    """
    lmin = math.log(y_min)
    chain = []
    lyk, xk = np.array([ly]), np.atleast_2d(np.asarray(x, dtype=float))
    for _ in range(max_depth):
        if lyk[0] < lmin:
            break
        chain.append(emap.blocks(lyk, xk, check=False))
        lyk, xk = emap.step(lyk, xk)
    mubar = emap.closure(lyk, xk)
    for A, B, C, D in reversed(chain):
        mubar = _solve_gamma_v(A, B, C, D, mubar)
    return mubar[0]


@dataclass
class FoliationBounds:
    A3: float
    B2: float
    C2: float
    D2: float
    y_star: float
    q: float
    q_y_range: tuple
    det_min: float
    residual: float = math.nan
    sweeps: int = 0
    ball_ratio: float = math.nan
    history: list = field(default_factory=list)

    @property
    def ball_bound(self) -> float:
        return 4.0 * self.A3 * self.B2

    def to_json(self) -> dict:
        return {
            "A3": self.A3, "B2": self.B2, "C2": self.C2, "D2": self.D2,
            "y_star": self.y_star, "q": self.q, "q_y_range": list(self.q_y_range),
            "det_min": self.det_min, "residual": self.residual, "sweeps": self.sweeps,
            "ball_bound": self.ball_bound, "ball_ratio": self.ball_ratio,
            "history": list(self.history),
        }


class _Sweeper:
    """Precomputed node data for repeated graph-transform sweeps."""

    def __init__(self, grid: HyperplaneFieldGrid):
        emap = grid.emap
        self.grid = grid
        ly, x = grid.nodes()
        self.ly, self.x = ly, x
        self.A, self.B, self.C, self.D = emap.blocks(ly, x)
        self.det_min = float(np.min(np.abs(np.linalg.det(self.A))))
        self.lyn, self.xn = emap.step(ly, x)
        K = len(grid.ly)
        pos = grid.level_position(self.lyn)
        if np.any(pos < -1e-9):
            raise ConfigError("map sends grid nodes above y0; shrink y0")
        self.below = pos > K - 1 + 1e-9
        self.closure = emap.closure(self.lyn[self.below], self.xn[self.below]) if self.below.any() else None
        self.w = np.repeat(np.abs(grid.ly), x.shape[0] // K)

    def mubar(self, mu):
        g = self.grid
        out = np.empty((self.x.shape[0], 3))
        if self.closure is not None:
            out[self.below] = self.closure
        ins = ~self.below
        if ins.any():
            out[ins] = g.interpolate(self.lyn[ins], self.xn[ins], mu)
        return out

    def apply(self, mu):
        mb = self.mubar(mu)
        return _solve_gamma_v(self.A, self.B, self.C, self.D, mb).reshape(self.grid.shape)

    def lipschitz_by_level(self, mu):
        """Local Lipschitz constant of the sweep in the weighted metric, per level."""
        mb = self.mubar(mu)
        M = self.A - mb[:, :, None] * self.C[:, None, :]
        Minv = np.linalg.inv(M)
        nu = _solve_gamma_v(self.A, self.B, self.C, self.D, mb)
        # d nu / d mubar = M^-1 (D + C . nu)
        J = Minv * (self.D + np.sum(self.C * nu, axis=-1))[:, None, None]
        L = np.linalg.norm(J, 2, axis=(1, 2)) * np.abs(self.lyn) / self.w
        L[self.below] = 0.0
        K = len(self.grid.ly)
        return L.reshape(K, -1).max(axis=1)


def fixed_point_field(emap: ExtendedMap, spec: GridSpec | None = None, tol: float = 1e-10, max_iters: int = 200):
    """Iterate the graph transform from ``mu = 0`` to its fixed point.

    Returns
    -------
    (HyperplaneFieldGrid, FoliationBounds)
    """
    spec = spec or GridSpec()
    grid = HyperplaneFieldGrid(spec, emap)
    sw = _Sweeper(grid)
    W = np.abs(grid.ly)[:, None, None, None]
    mu = grid.mu
    diffs: list[float] = []
    ratios: list[float] = []
    bad_run = 0
    for it in range(1, max_iters + 1):
        new = sw.apply(mu)
        delta = np.linalg.norm(new - mu, axis=-1) / W
        d = float(np.max(delta))
        if diffs and diffs[-1] > 0:
            ratios.append(d / diffs[-1])
            if d >= tol and ratios[-1] >= 1.0:
                bad_run += 1
                if bad_run >= 5:
                    k = int(np.unravel_index(np.argmax(delta), delta.shape)[0])
                    raise DivergenceError(
                        f"graph transform not contracting at y = {math.exp(grid.ly[k]):.3e}; shrink y0", level=k
                    )
            else:
                bad_run = 0
        diffs.append(d)
        mu = new
        if d < tol:
            break
    else:
        raise DivergenceError(f"no convergence within {max_iters} sweeps (last difference {diffs[-1]:.3e})")
    grid = grid.copy_with(mu)
    resid = float(np.max(np.linalg.norm(sw.apply(mu) - mu, axis=-1) / W))
    tail = [r for r in ratios[-5:] if np.isfinite(r)]
    q = max(tail) if tail else 0.0
    lip = sw.lipschitz_by_level(mu)
    ok = lip < 1.0
    if ok.all():
        y_star = float(spec.y0)
    elif not ok.any():
        y_star = 0.0
    else:
        # largest level below which every level contracts
        k = int(np.flatnonzero(~ok).max()) + 1
        y_star = float(math.exp(grid.ly[k])) if k < len(grid.ly) else 0.0
    absly = np.abs(sw.ly)
    Ainv = np.linalg.inv(sw.A)
    A3 = float(np.max(np.linalg.norm(Ainv, 2, axis=(1, 2))))
    B2 = float(np.max(np.linalg.norm(sw.B, axis=-1) / absly))
    G = emap.gamma
    C2 = float(np.max(np.linalg.norm(sw.C, axis=-1) / (np.exp(G * sw.ly) * absly)))
    D2 = float(np.max(np.abs(sw.D) / np.exp((G - 1) * sw.ly)))
    bounds = FoliationBounds(
        A3, B2, C2, D2, y_star, float(q), (float(spec.y_min), float(spec.y0)), sw.det_min,
        residual=resid, sweeps=len(diffs),
        history=diffs,
    )
    bb = bounds.ball_bound
    norm = grid.weighted_norm()
    bounds.ball_ratio = 0.0 if norm == 0 else (norm / bb if bb > 0 else math.inf)
    return grid, bounds


def contraction_probe(grid: HyperplaneFieldGrid, rng: np.random.Generator, radius: float, n_pairs: int = 4):
    """Ratios ``d(G mu1, G mu2) / d(mu1, mu2)`` for random fields in a weighted ball."""
    sw = _Sweeper(grid)
    W = np.abs(grid.ly)[:, None, None, None]
    out = []
    for _ in range(n_pairs):
        m1 = rng.uniform(-1, 1, grid.shape) * W[..., None] * radius / math.sqrt(3)
        m2 = rng.uniform(-1, 1, grid.shape) * W[..., None] * radius / math.sqrt(3)
        d0 = np.max(np.linalg.norm(m1 - m2, axis=-1) / W)
        d1 = np.max(np.linalg.norm(sw.apply(m1) - sw.apply(m2), axis=-1) / W)
        out.append(float(d1 / d0))
    return out


# ---------------------------------------------------------------------------
# leaves


@dataclass
class Leaf:
    s: np.ndarray
    x: np.ndarray
    endpoint: np.ndarray
    exited: bool = False


def integrate_leaf(mu0: HyperplaneFieldGrid, start, rel_tol: float = 1e-11, abs_tol: float = 1e-13) -> Leaf:
    """Follow the leaf through ``(x0, y0)`` down to ``y = 0``.

    Uses ``s = -1/ln y``: ``dx/ds = mu(x, e^(-1/s)) e^(-1/s) / s^2``, run
    from ``s0`` to 0.  ``start`` is ``(y, z, r, phi)``; ``z, phi`` are not
    reduced along the leaf.
    """
    y, z, r, phi = start
    x0 = np.array([z, r, phi], dtype=float)
    if y <= 0:
        return Leaf(np.array([0.0]), x0[None, :], x0.copy())
    ly0 = math.log(y)
    if ly0 < -LOG_FLOOR:
        return Leaf(np.array([-1.0 / ly0]), x0[None, :], x0.copy())
    s0 = -1.0 / ly0
    s_end = 1.0 / LOG_FLOOR

    def rhs(t, u):
        s = s0 - t
        if s <= s_end:
            return np.zeros(3)
        ly = -1.0 / s
        m = mu0.interpolate(np.array([ly]), u[None, :])[0]
        return -m * math.exp(ly) / (s * s)

    cfg = IntegratorConfig(rel_tol=rel_tol, abs_tol=abs_tol, max_time=s0 - s_end + 1.0)
    rec = integrate(rhs, x0, cfg, [], t_end=s0 - s_end, dense=False)
    xs = np.asarray(rec.y)
    exited = bool(np.any((xs[:, 1] < 0) | (xs[:, 1] > 1)))
    return Leaf(s0 - np.asarray(rec.t), xs, xs[-1].copy(), exited)


def project_to_channel(mu0: HyperplaneFieldGrid, ly: float, x) -> np.ndarray:
    """Endpoint on ``{y = 0}`` of the leaf through ``(x, y)``; ``z, phi`` reduced mod 1."""
    if ly < -LOG_FLOOR:
        p = np.array(x, dtype=float)
    else:
        p = integrate_leaf(mu0, (math.exp(ly), *x)).endpoint
    return np.array([p[0] % 1.0, p[1], p[2] % 1.0])


def _xdist(a, b):
    d = np.asarray(a) - np.asarray(b)
    d = np.array([_circ(d[0]), d[1], _circ(d[2])])
    return float(np.linalg.norm(d))


@dataclass
class CorrespondenceReport:
    gaps: np.ndarray          # (starts, n+1) leaf offsets |x_k - P(x_k, y_k)|
    defects: np.ndarray       # (starts, n) |P_{k+1} - T(P_k)|
    log_v2: np.ndarray        # (starts, n+1)
    const: float              # max gap / |v2 ln v2|
    const_normalized: float   # const / max remainder amplitude
    v2_decreasing: bool
    max_gap_by_step: np.ndarray
    truncated: bool = False

    def to_json(self) -> dict:
        return {
            "const": self.const,
            "const_normalized": self.const_normalized,
            "v2_decreasing": self.v2_decreasing,
            "max_gap_by_step": self.max_gap_by_step.tolist(),
            "max_defect": float(np.max(self.defects)) if self.defects.size else 0.0,
            "truncated": self.truncated,
        }


def leaf_correspondence_check(emap: ExtendedMap, mu0: HyperplaneFieldGrid, starts, n: int) -> CorrespondenceReport:
    """Compare orbits of the extended map with truncated-map orbits of their leaf projections.

    For each start ``(v2, z, r, phi)`` and step ``k``, ``P_k`` is the
    projection of the extended-map iterate along its leaf.  Reported are
    the leaf offsets ``|x_k - P_k|`` and the one-step invariance defects
    ``|P_{k+1} - T(P_k)|``.
    """
    starts = np.atleast_2d(np.asarray(starts, dtype=float))
    m = starts.shape[0]
    gaps = np.zeros((m, n + 1))
    defects = np.zeros((m, n))
    lys = np.zeros((m, n + 1))
    truncated = False
    decreasing = True
    for i, st in enumerate(starts):
        ly = math.log(st[0])
        x = st[1:].copy()
        P = project_to_channel(mu0, ly, x)
        lys[i, 0] = ly
        gaps[i, 0] = _xdist(np.array([x[0] % 1.0, x[1], x[2] % 1.0]), P)
        for k in range(1, n + 1):
            lyn, xn = emap.step(np.array([ly]), x[None, :])
            lyn, xn = float(lyn[0]), xn[0]
            if not (0.0 <= xn[1] <= 1.0):
                truncated = True
                break
            TP = emap.truncated(P[None, :])[0]
            Pn = project_to_channel(mu0, lyn, xn)
            defects[i, k - 1] = _xdist(Pn, TP)
            gaps[i, k] = _xdist(xn, Pn)
            if k >= 1 and not lyn < ly:
                decreasing = False
            lys[i, k] = lyn
            ly, x, P = lyn, xn, Pn
    # envelope |v2 ln v2| in log space; skip underflowed entries (gap is exactly 0 there)
    with np.errstate(divide="ignore"):
        log_env = lys + np.log(np.abs(lys))
    ok = (gaps > 0) & (log_env > -700)
    ratio = np.where(ok, gaps / np.exp(np.where(ok, log_env, 0.0)), 0.0)
    const = float(np.max(ratio)) if ratio.size else 0.0
    amp = max(emap.eps) if any(emap.eps) else 0.0
    return CorrespondenceReport(
        gaps, defects, lys, const, const / amp if amp else 0.0, decreasing,
        np.max(gaps, axis=0), truncated,
    )
