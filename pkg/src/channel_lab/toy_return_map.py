"""Saddle-center toy model: local, global and return maps.

The normal-form vector field near the center manifold is

    v1' = p(r) v1 + p0(r, phi) v1^2 v2
    v2' = s(r) v2 + s0(r, phi) v1 v2^2
    r'  = r0(r, phi) v1 v2
    phi' = w(r) + w0(r, phi) v1 v2

with sections ``S1 = {v1 = h}`` and ``S2 = {v2 = h}``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Iterator

import numpy as np

from .errors import ConfigError, NumericError
from .ode_engine import EventSpec, IntegratorConfig, integrate
from .scalar_fields import (
    FieldSeries1D,
    FieldSeries2D,
    as_series2d,
    check_sum_negative,
    eval_partials,
    fit_series2d,
    sign_grid,
)

FIT_TOLERANCE = 1e-6
ZERO2D = FieldSeries2D()


# ---------------------------------------------------------------------------
# model types


@dataclass(frozen=True)
class ToyModelSpec:
    p: FieldSeries1D
    sigma: FieldSeries1D
    omega: FieldSeries1D
    p0: FieldSeries2D = ZERO2D
    sigma0: FieldSeries2D = ZERO2D
    r0: FieldSeries2D = ZERO2D
    omega0: FieldSeries2D = ZERO2D
    h: float = 0.1

    def __post_init__(self):
        if not (0.0 < self.h < 0.5):
            raise ConfigError("section offset h must lie in (0, 0.5)")
        g = sign_grid()
        if np.min(self.p(g)) <= 0:
            raise ConfigError("p must be positive on [0, 1]")
        if np.max(self.sigma(g)) >= 0:
            raise ConfigError("sigma must be negative on [0, 1]")
        check_sum_negative(self.p, self.sigma)

    @property
    def has_remainders(self) -> bool:
        return not all(f.is_zero for f in (self.p0, self.sigma0, self.r0, self.omega0))

    def rhs(self, t, u):
        v1, v2, r, phi = u
        w = v1 * v2
        return np.array(
            [
                self.p(r) * v1 + self.p0(r, phi) * v1 * w,
                self.sigma(r) * v2 + self.sigma0(r, phi) * v2 * w,
                self.r0(r, phi) * w,
                self.omega(r) + self.omega0(r, phi) * w,
            ]
        )

    def log_rhs(self, t, u):
        """Field in ``(ln v1, ln v2, r, phi)``."""
        l1, l2, r, phi = u
        w = math.exp(l1 + l2)
        return np.array(
            [
                self.p(r) + self.p0(r, phi) * w,
                self.sigma(r) + self.sigma0(r, phi) * w,
                self.r0(r, phi) * w,
                self.omega(r) + self.omega0(r, phi) * w,
            ]
        )


@dataclass(frozen=True)
class GlobalMapSpec:
    a1: FieldSeries2D
    b0: FieldSeries2D
    b1: FieldSeries2D = ZERO2D
    c0: FieldSeries2D = ZERO2D
    c1: FieldSeries2D = ZERO2D

    def __post_init__(self):
        r = np.linspace(0, 1, 101)
        R, P = np.meshgrid(r, np.linspace(0, 1, 101, endpoint=False), indexing="ij")
        if np.min(self.a1(R, P)) <= 0:
            raise ConfigError("a1 must be positive (its logarithm enters the return map)")
        b = self.b0(R, P)
        if np.min(b) < -1e-12 or np.max(b) > 1 + 1e-12:
            raise ConfigError("b0 must map the disc into [0, 1]")


@dataclass
class ClampStats:
    """Counts of ``r`` values pushed back into ``[0, 1]``."""

    clamped: int = 0


def _clamp01(r: float, stats: ClampStats | None):
    if r < 0.0 or r > 1.0:
        if stats is not None:
            stats.clamped += 1
        return min(1.0, max(0.0, r))
    return r


# ---------------------------------------------------------------------------
# local and global maps


def local_shilnikov_map(model: ToyModelSpec, entry) -> tuple[float, float, float, float]:
    """Leading-order passage from ``S2`` to ``S1``.

    Parameters
    ----------
    entry : (v1_0, r, phi)
        Point on ``S2 = {v2 = h}``.

    Returns
    -------
    (v2_out, r_out, phi_out, tau)
        ``phi_out`` reduced mod 1.
    """
    v1, r, phi = entry
    h = model.h
    if not v1 > 0:
        raise ConfigError("v1_0 must be positive (v1_0 <= 0 lies on or past the stable tube)")
    if not v1 < h:
        raise ConfigError("v1_0 must be smaller than h to lie in the local chart")
    p, s, w = model.p(r), model.sigma(r), model.omega(r)
    lnq = math.log(v1 / h)
    tau = -lnq / p
    v2 = h * math.exp(-s / p * lnq)
    return v2, r, (phi + tau * w) % 1.0, tau


def flow_between_sections(model: ToyModelSpec, entry, config: IntegratorConfig | None = None):
    """Integrate the normal form from ``S2`` until ``v1 = h``.

    Integration runs in log coordinates.  Returns ``(ln v2, r, phi, tau)``
    with ``phi`` unwrapped.
    """
    v1, r, phi = entry
    h = model.h
    cfg = config or IntegratorConfig(rel_tol=1e-12, abs_tol=1e-14, max_time=1e6)
    lh = math.log(h)
    ev = EventSpec("S1", lambda t, u: u[0] - lh, +1, tol=1e-13, terminal=True)
    rec = integrate(model.log_rhs, [math.log(v1), lh, r, phi], cfg, [ev], dense=True)
    if rec.status != "terminated":
        raise NumericError("normal-form orbit did not reach S1")
    e = rec.events[-1]
    return float(e.state[1]), float(e.state[2]), float(e.state[3]), float(e.t)


def shilnikov_gap(model: ToyModelSpec, entry, config: IntegratorConfig | None = None) -> float:
    """Sup-gap between the leading-order map and the integrated flow.

    Compared quantities are ``ln v2``, ``r`` and the unwrapped ``phi``.
    """
    v1, r, phi = entry
    h = model.h
    p, s, w = model.p(r), model.sigma(r), model.omega(r)
    lnq = math.log(v1 / h)
    tau = -lnq / p
    l2 = math.log(h) - s / p * lnq
    l2n, rn, phin, _ = flow_between_sections(model, entry, config)
    return max(abs(l2 - l2n), abs(r - rn), abs(phi + tau * w - phin))


def global_map(spec: GlobalMapSpec, point, stats: ClampStats | None = None):
    """``S1 -> S2``: ``(a1 v2, b0 + b1 v2, c0 + c1 v2 mod 1)``."""
    v2, r, phi = point
    v1 = spec.a1(r, phi) * v2
    rn = _clamp01(spec.b0(r, phi) + spec.b1(r, phi) * v2, stats)
    phin = (spec.c0(r, phi) + spec.c1(r, phi) * v2) % 1.0
    return v1, rn, phin


def composed_return_map(model: ToyModelSpec, spec: GlobalMapSpec, point, stats: ClampStats | None = None):
    """Return map on ``S1``: the global map followed by the local map."""
    v2 = point[0]
    if not (0.0 < v2 <= model.h * math.exp(-1.0)):
        raise ConfigError("v2 must lie in (0, h/e]")
    v1, r, phi = global_map(spec, point, stats)
    v2n, rn, phin, _ = local_shilnikov_map(model, (v1, r, phi))
    return v2n, rn, phin


# ---------------------------------------------------------------------------
# z-coordinate return map


@dataclass(frozen=True)
class ZState:
    z: float
    r: float
    phi: float

    def as_tuple(self):
        return (self.z, self.r, self.phi)


@dataclass(frozen=True)
class ZMapCoeffs:
    """Fields of the rescaled return map ``(Omega + Gamma z, b0, c + z)``.

    Parameters
    ----------
    Omega, Gamma, b0, c : FieldSeries2D
    mode : {'truncated', 'extended'}
    z_mod_one : bool
        Reduce ``z`` mod 1; requires a constant integer ``Gamma >= 2``.
    eps : (eps_z, eps_r, eps_phi)
        Remainder amplitudes, used in extended mode.
    shapes : (rho_z, rho_r, rho_phi)
        Remainder shape fields.
    """

    Omega: FieldSeries2D
    Gamma: FieldSeries2D
    b0: FieldSeries2D
    c: FieldSeries2D
    mode: str = "truncated"
    z_mod_one: bool = False
    eps: tuple = (0.0, 0.0, 0.0)
    shapes: tuple = (FieldSeries2D.constant(1.0),) * 3
    fit_residual: float = 0.0
    phi_periodic: bool = True

    def __post_init__(self):
        if self.mode not in ("truncated", "extended"):
            raise ConfigError("mode must be 'truncated' or 'extended'")
        if len(self.eps) != 3 or any(e < 0 for e in self.eps):
            raise ConfigError("remainder amplitudes must be three non-negative numbers")
        if self.z_mod_one:
            g = self.gamma_constant
            if g is None or g != int(g) or g < 2:
                raise ConfigError("z mod 1 requires a constant integer Gamma >= 2")

    @property
    def gamma_constant(self):
        G = self.Gamma
        if isinstance(G, FieldSeries2D) and G.is_constant:
            return G.constant_value
        return None

    def fields(self, r, phi):
        return self.Omega(r, phi), self.Gamma(r, phi), self.b0(r, phi), self.c(r, phi)

    def partials(self, r, phi):
        """``((Om_r, Om_p), (G_r, G_p), (b_r, b_p), (c_r, c_p))``."""
        return tuple(eval_partials(f, (r, phi)) for f in (self.Omega, self.Gamma, self.b0, self.c))

    def with_mode(self, mode: str, eps=None, shapes=None) -> "ZMapCoeffs":
        return replace(self, mode=mode, eps=self.eps if eps is None else tuple(eps),
                       shapes=self.shapes if shapes is None else tuple(shapes))


def z_return_map(coeffs: ZMapCoeffs, state, stats: ClampStats | None = None) -> ZState:
    """One step of the rescaled return map."""
    z, r, phi = state.as_tuple() if isinstance(state, ZState) else state
    Om, G, b, c = coeffs.fields(r, phi)
    zn = Om + G * z
    rn = b
    phin = c + z
    if coeffs.mode == "extended":
        if not z < 0:
            raise ConfigError("extended mode requires z < 0")
        ez = math.exp(z)
        sz, sr, sp = coeffs.shapes
        e_z, e_r, e_p = coeffs.eps
        zn += e_z * z * ez * sz(r, phi)
        rn += e_r * ez * sr(r, phi)
        phin += e_p * z * ez * sp(r, phi)
    if coeffs.z_mod_one:
        zn %= 1.0
    if coeffs.phi_periodic:
        phin %= 1.0
        rn = _clamp01(rn, stats)
    return ZState(zn, rn, phin)


def z_jacobian(coeffs: ZMapCoeffs, state) -> np.ndarray:
    """Jacobian of the truncated map (mod-1 seams contribute the identity)."""
    z, r, phi = state.as_tuple() if isinstance(state, ZState) else state
    (Or, Op), (Gr, Gp), (br, bp), (cr, cp) = coeffs.partials(r, phi)
    G = coeffs.fields(r, phi)[1]
    return np.array([[G, Or + Gr * z, Op + Gp * z], [0.0, br, bp], [1.0, cr, cp]])


def _fit_or_constant(fn, inputs_constant: bool, what: str):
    if inputs_constant:
        return FieldSeries2D.constant(float(fn(np.array(0.0), np.array(0.0)))), 0.0
    series, resid = fit_series2d(fn)
    if resid > FIT_TOLERANCE:
        raise NumericError(
            f"composite field {what} is not representable at the current degree caps "
            f"(fit residual {resid:.3e} > {FIT_TOLERANCE:g})"
        )
    return series, resid


def coeffs_from_model(model: ToyModelSpec, spec: GlobalMapSpec, z_mod_one: bool = False) -> ZMapCoeffs:
    """Rescaled-map fields from the normal form and the global map.

    ``Gamma = -s(b0)/p(b0)``, ``c = c0 - (w/p)(b0) ln a1`` and
    ``Omega = -(w/p)(b0) Gamma ln a1``.  Composite fields are projected onto
    the truncated basis; the largest fit residual is recorded.
    """
    const = (
        model.p.is_constant and model.sigma.is_constant and model.omega.is_constant
        and spec.a1.is_constant and spec.b0.is_constant and spec.c0.is_constant
    )
    p, s, w = model.p, model.sigma, model.omega

    def gamma(R, P):
        b = spec.b0(R, P)
        return -s(b) / p(b)

    def cfield(R, P):
        b = spec.b0(R, P)
        return spec.c0(R, P) - w(b) / p(b) * np.log(spec.a1(R, P))

    def omega(R, P):
        b = spec.b0(R, P)
        return -w(b) / p(b) * np.log(spec.a1(R, P)) * gamma(R, P)

    G, e1 = _fit_or_constant(gamma, const, "Gamma")
    Om, e2 = _fit_or_constant(omega, const, "Omega")
    C, e3 = _fit_or_constant(cfield, const, "c")
    if const:
        C = FieldSeries2D.constant(C.constant_value % 1.0)
    b0 = spec.b0
    return ZMapCoeffs(Om, G, b0, C, z_mod_one=z_mod_one, fit_residual=max(e1, e2, e3))


def alpha(model: ToyModelSpec, r) -> float:
    """Rescaling factor ``-w(r)/p(r)`` of the z-coordinate."""
    return -model.omega(r) / model.p(r)


def conjugated_return_map(model: ToyModelSpec, spec: GlobalMapSpec, state) -> ZState:
    """``H o (loc o glob) o H^-1`` with ``H(v2, r, phi) = (alpha(r) ln(v2/h), r, phi)``."""
    z, r, phi = state.as_tuple() if isinstance(state, ZState) else state
    a = alpha(model, r)
    if a == 0:
        raise ConfigError("rescaling factor -w/p vanishes; the z-chart is degenerate")
    v2 = model.h * math.exp(z / a)
    v2n, rn, phin = composed_return_map(model, spec, (v2, r, phi))
    return ZState(alpha(model, rn) * math.log(v2n / model.h), rn, phin)


# ---------------------------------------------------------------------------
# orbits and Lyapunov exponents


class ZMap:
    """Map handle: callable with a Jacobian."""

    def __init__(self, coeffs: ZMapCoeffs):
        self.coeffs = coeffs
        self.stats = ClampStats()

    def __call__(self, state):
        return z_return_map(self.coeffs, state, self.stats)

    def jacobian(self, state):
        if self.coeffs.mode == "truncated":
            return z_jacobian(self.coeffs, state)
        return numeric_jacobian(self, state)


def numeric_jacobian(fmap, state, step: float = 1e-7) -> np.ndarray:
    x = np.array(state.as_tuple() if isinstance(state, ZState) else state, dtype=float)
    J = np.empty((3, 3))
    for k in range(3):
        e = np.zeros(3)
        e[k] = step
        a = np.array(fmap(ZState(*(x + e))).as_tuple())
        b = np.array(fmap(ZState(*(x - e))).as_tuple())
        d = a - b
        # undo mod-1 wraps on the circle coordinates
        d[2] -= np.round(d[2])
        if getattr(getattr(fmap, "coeffs", None), "z_mod_one", False):
            d[0] -= np.round(d[0])
        J[:, k] = d / (2 * step)
    return J


@dataclass
class OrbitResult:
    states: list | None
    n_done: int
    escaped: bool = False
    last: ZState | None = None


def iterate_orbit(fmap: Callable, start, n: int, sink: Callable | None = None, keep: bool = True) -> OrbitResult:
    """``n`` forward images of ``start``.

    With ``keep=False`` states are only passed to ``sink`` (streaming), so
    memory stays bounded for long orbits.  Leaving ``r in [0, 1]`` stops the
    iteration and sets ``escaped``.
    """
    if n < 1:
        raise ConfigError("n must be at least 1")
    s = start if isinstance(start, ZState) else ZState(*start)
    out = [] if keep else None
    for i in range(n):
        s = fmap(s)
        if not (0.0 <= s.r <= 1.0) or not all(map(math.isfinite, s.as_tuple())):
            if keep:
                out.append(s)
            if sink is not None:
                sink(i + 1, s)
            return OrbitResult(out, i + 1, True, s)
        if keep:
            out.append(s)
        if sink is not None:
            sink(i + 1, s)
    return OrbitResult(out, n, False, s)


@dataclass
class LyapunovResult:
    exponents: tuple
    n_done: int
    partial: bool = False


def lyapunov_spectrum(fmap, start, n: int, qr_every: int = 1, transient: int = 0) -> LyapunovResult:
    """Benettin QR estimate of the three exponents, sorted descending.

    Directions whose QR diagonal vanishes (rank-deficient Jacobian) are
    reported as ``-inf``.
    """
    if n < 1 or qr_every < 1:
        raise ConfigError("n and qr_every must be positive")
    s = start if isinstance(start, ZState) else ZState(*start)
    for _ in range(transient):
        s = fmap(s)
    Q = np.eye(3)
    sums = np.zeros(3)
    dead = np.zeros(3, dtype=bool)
    done = 0
    for i in range(n):
        J = fmap.jacobian(s)
        Q = J @ Q
        s = fmap(s)
        done = i + 1
        if not (0.0 <= s.r <= 1.0):
            break
        if done % qr_every == 0 or done == n:
            Q, R = np.linalg.qr(Q)
            d = np.abs(np.diag(R))
            zero = d == 0.0
            dead |= zero
            sums[~zero] += np.log(d[~zero])
            # keep a valid orthonormal frame in dead directions
            if zero.any():
                Q, _ = np.linalg.qr(Q + np.where(zero, 1.0, 0.0) * np.eye(3))
    exps = np.where(dead, -np.inf, sums / max(done, 1))
    return LyapunovResult(tuple(sorted(exps.tolist(), reverse=True)), done, done < n)


# ---------------------------------------------------------------------------
# convenience constructors


def constant_model(p=1.0, sigma=-2.0, omega=1.0, h=0.1, **remainders) -> ToyModelSpec:
    rem = {k: as_series2d(v) for k, v in remainders.items()}
    return ToyModelSpec(
        FieldSeries1D.constant(p), FieldSeries1D.constant(sigma), FieldSeries1D.constant(omega), h=h, **rem
    )


def constant_global(a1=2.0, b0=0.5, b1=0.0, c0=0.0, c1=0.0) -> GlobalMapSpec:
    k = FieldSeries2D.constant
    return GlobalMapSpec(k(a1), k(b0), FieldSeries2D() if b1 == 0 else k(b1),
                         FieldSeries2D() if c0 == 0 else k(c0), FieldSeries2D() if c1 == 0 else k(c1))


def constant_zmap(Omega=0.0, Gamma=2.0, b0=0.5, c=0.0, z_mod_one=False, **kw) -> ZMapCoeffs:
    k = FieldSeries2D.constant
    return ZMapCoeffs(k(Omega), k(Gamma), k(b0), k(c), z_mod_one=z_mod_one, **kw)
