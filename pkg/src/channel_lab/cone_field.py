"""Invariant cone field ``||(v2, v3)|| < L |v1|`` for the truncated map.

The map's Jacobian is ``[[G, Om_r, Om_p], [0, b_r, b_p], [1, c_r, c_p]]``.
With sup bounds on the partials the cone is invariant when

    1 + (|db|^2 + |dc|^2) L^2 + 2 L |dc| < L^2 (1 - c)^2 G^2,

for ``L < min(1, c G / |dOm|)``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigError

GRID = 200
C_GRID = np.arange(1, 100) / 100.0
N_L = 100


@dataclass(frozen=True)
class PartialBounds:
    Omega_r: float = 0.0
    Omega_phi: float = 0.0
    Gamma_r: float = 0.0
    Gamma_phi: float = 0.0
    b_r: float = 0.0
    b_phi: float = 0.0
    c_r: float = 0.0
    c_phi: float = 0.0
    refinement_delta: float = 0.0

    def __post_init__(self):
        for k, v in asdict(self).items():
            if not (v >= 0 and math.isfinite(v)):
                raise ConfigError(f"bound {k} must be finite and non-negative")

    @property
    def grad_omega(self):
        return math.hypot(self.Omega_r, self.Omega_phi)

    @property
    def grad_b2(self):
        return self.b_r**2 + self.b_phi**2

    @property
    def grad_c(self):
        return math.hypot(self.c_r, self.c_phi)

    def scaled(self, f: float) -> "PartialBounds":
        d = asdict(self)
        return PartialBounds(**{k: v * f for k, v in d.items()})

    def to_json(self):
        return asdict(self)


@dataclass(frozen=True)
class ConeParams:
    L: float
    c_cone: float

    def __post_init__(self):
        if not (0 < self.L < 1):
            raise ConfigError("L must lie in (0, 1)")
        if not (0 < self.c_cone < 1):
            raise ConfigError("c_cone must lie in (0, 1)")


def _sup(coeffs, n):
    r = np.linspace(0.0, 1.0, n)
    phi = np.arange(n) / n
    R, P = np.meshgrid(r, phi, indexing="ij")
    parts = coeffs.partials(R, P)
    return np.array([float(np.max(np.abs(np.asarray(d) * np.ones_like(R)))) for pair in parts for d in pair])


def partial_bounds(coeffs, grid: int = GRID) -> PartialBounds:
    """Grid sup-norms of the partials of ``(Omega, Gamma, b0, c)``.

    ``refinement_delta`` is the largest change when the grid is doubled.
    """
    if grid < GRID:
        raise ConfigError(f"grid must be at least {GRID}")
    s1 = _sup(coeffs, grid)
    s2 = _sup(coeffs, 2 * grid)
    s = np.maximum(s1, s2)
    return PartialBounds(*s.tolist(), refinement_delta=float(np.max(np.abs(s2 - s1))))


def _sides(b: PartialBounds, gamma, L, c):
    lhs = 1.0 + (b.grad_b2 + b.grad_c**2) * L * L + 2.0 * L * b.grad_c
    rhs = L * L * (1.0 - c) ** 2 * gamma * gamma
    return lhs, rhs


def _l_max(b: PartialBounds, gamma, c):
    g = b.grad_omega
    return 1.0 if g == 0 else min(1.0, c * gamma / g)


def check_cone_invariance(bounds: PartialBounds, gamma: float, cone: ConeParams):
    """Return ``(lhs, rhs, holds)``."""
    if not gamma > 1:
        raise ConfigError("Gamma must exceed 1 for the cone inequality to have solutions")
    lhs, rhs = _sides(bounds, gamma, cone.L, cone.c_cone)
    in_interval = cone.L < _l_max(bounds, gamma, cone.c_cone)
    return lhs, rhs, bool(lhs < rhs and in_interval)


@dataclass(frozen=True)
class FeasibleCone:
    cone: ConeParams | None
    margin: float

    @property
    def feasible(self) -> bool:
        return self.cone is not None


def feasible_cone_params(bounds: PartialBounds, gamma: float) -> FeasibleCone:
    """Grid search for the ``(L, c_cone)`` pair maximizing ``rhs - lhs``."""
    if not gamma > 1:
        raise ConfigError("Gamma must exceed 1 for the cone inequality to have solutions")
    best, best_m = None, -math.inf
    for c in C_GRID:
        lmax = _l_max(bounds, gamma, c)
        Ls = np.linspace(0.0, lmax, N_L + 2)[1:-1]
        lhs, rhs = _sides(bounds, gamma, Ls, c)
        m = rhs - lhs
        i = int(np.argmax(m))
        if m[i] > best_m:
            best_m, best = float(m[i]), (float(Ls[i]), float(c))
    if best is None or best_m <= 0:
        return FeasibleCone(None, best_m)
    return FeasibleCone(ConeParams(*best), best_m)


def jacobian_field(coeffs, r, phi):
    """Stacked Jacobians ``(..., 3, 3)`` at base points (truncated map)."""
    (Or, Op), _, (br, bp), (cr, cp) = coeffs.partials(r, phi)
    G = np.asarray(coeffs.fields(r, phi)[1]) * np.ones_like(r)
    one = np.ones_like(r)
    zero = np.zeros_like(r)
    rows = [[G, Or * one, Op * one], [zero, br * one, bp * one], [one, cr * one, cp * one]]
    return np.stack([np.stack(row, axis=-1) for row in rows], axis=-2)


def in_cone(v, L: float) -> np.ndarray:
    v = np.asarray(v)
    return np.hypot(v[..., 1], v[..., 2]) < L * np.abs(v[..., 0])


def monte_carlo_cone_check(coeffs, cone: ConeParams, samples: int, seed: int, chunk: int = 100_000) -> int:
    """Count sampled cone vectors whose image leaves the cone."""
    g = coeffs.gamma_constant if hasattr(coeffs, "gamma_constant") else getattr(coeffs, "gamma", None)
    if getattr(coeffs, "mode", "truncated") != "truncated":
        raise ConfigError("cone check requires truncated mode")
    if g is None or g != int(g) or g < 2:
        raise ConfigError("cone check requires a constant integer Gamma >= 2")
    if samples < 1:
        raise ConfigError("samples must be positive")
    ss = np.random.SeedSequence(seed)
    violations = 0
    done = 0
    for child in ss.spawn((samples + chunk - 1) // chunk):
        rng = np.random.default_rng(child)
        n = min(chunk, samples - done)
        r = rng.uniform(0.0, 1.0, n)
        phi = rng.uniform(0.0, 1.0, n)
        v1 = rng.choice([-1.0, 1.0], n) * rng.uniform(0.1, 10.0, n)
        q = rng.uniform(0.0, 1.0, n)
        ang = rng.uniform(0.0, 2 * math.pi, n)
        rad = q * cone.L * np.abs(v1)
        v = np.stack([v1, rad * np.cos(ang), rad * np.sin(ang)], axis=-1)
        J = jacobian_field(coeffs, r, phi)
        w = np.einsum("nij,nj->ni", J, v)
        violations += int(np.count_nonzero(~in_cone(w, cone.L)))
        done += n
    return violations
