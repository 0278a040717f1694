"""Polynomial and polynomial-times-Fourier field families.

Fields of one variable ``r`` are plain polynomials.  Fields of ``(r, phi)``
are finite sums of ``r**k * cos(2 pi m phi)`` and ``r**k * sin(2 pi m phi)``,
so they are 1-periodic in ``phi`` and have exact partial derivatives.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ConfigError

MAX_R_DEGREE = 8
MAX_FREQUENCY = 8
SIGN_GRID_SIZE = 1000
SIGN_MARGIN = 1e-9
TWO_PI = 2.0 * math.pi

_ROLES = (None, "p", "sigma", "omega")


def _finite(values: Iterable[float], what: str) -> None:
    for v in values:
        if not math.isfinite(v):
            raise ConfigError(f"non-finite coefficient in {what}: {v!r}")


@dataclass(frozen=True)
class FieldSeries1D:
    """Polynomial ``c_0 + c_1 r + ... + c_K r**K`` on ``r in [0, 1]``.

    Parameters
    ----------
    coeffs : sequence of float
        Coefficients in increasing degree.
    role : {None, 'p', 'sigma', 'omega'}
        When ``'p'`` the field must be positive on the sign grid, when
        ``'sigma'`` negative.
    """

    coeffs: tuple
    role: str | None = None

    def __post_init__(self):
        c = tuple(float(v) for v in self.coeffs)
        if len(c) == 0:
            c = (0.0,)
        if len(c) - 1 > MAX_R_DEGREE:
            raise ConfigError(f"degree {len(c) - 1} exceeds cap {MAX_R_DEGREE}")
        _finite(c, "FieldSeries1D")
        if self.role not in _ROLES:
            raise ConfigError(f"unknown field role {self.role!r}")
        object.__setattr__(self, "coeffs", c)
        if self.role == "p":
            if np.min(self(sign_grid())) <= SIGN_MARGIN:
                raise ConfigError("field tagged p must be positive on [0, 1]")
        elif self.role == "sigma":
            if np.max(self(sign_grid())) >= -SIGN_MARGIN:
                raise ConfigError("field tagged sigma must be negative on [0, 1]")

    @classmethod
    def constant(cls, value: float, role: str | None = None) -> "FieldSeries1D":
        return cls((value,), role)

    @property
    def is_constant(self) -> bool:
        return all(v == 0.0 for v in self.coeffs[1:])

    def __call__(self, r):
        """Evaluate by Horner's rule; works on floats and arrays."""
        out = self.coeffs[-1]
        if isinstance(r, np.ndarray):
            out = np.full(r.shape, out)
        for c in reversed(self.coeffs[:-1]):
            out = out * r + c
        return out

    def derivative(self) -> "FieldSeries1D":
        c = self.coeffs
        if len(c) == 1:
            return FieldSeries1D((0.0,))
        return FieldSeries1D(tuple(k * c[k] for k in range(1, len(c))))

    def to_json(self) -> dict:
        return {"kind": "series1d", "coeffs": list(self.coeffs)}

    @classmethod
    def from_json(cls, obj, role: str | None = None) -> "FieldSeries1D":
        if isinstance(obj, (int, float)):
            return cls.constant(float(obj), role)
        if isinstance(obj, list):
            return cls(tuple(obj), role)
        if not isinstance(obj, dict) or obj.get("kind") != "series1d":
            raise ConfigError(f"expected a series1d object, got {obj!r}")
        extra = set(obj) - {"kind", "coeffs"}
        if extra:
            raise ConfigError(f"unknown keys in series1d: {sorted(extra)}")
        return cls(tuple(obj["coeffs"]), role)


def sign_grid(n: int = SIGN_GRID_SIZE) -> np.ndarray:
    return np.linspace(0.0, 1.0, n)


def check_sum_negative(p: FieldSeries1D, sigma: FieldSeries1D) -> None:
    """Raise unless ``p + sigma < 0`` on the sign grid."""
    g = sign_grid()
    if np.max(p(g) + sigma(g)) >= -SIGN_MARGIN:
        raise ConfigError("p + sigma must be negative on [0, 1]")


@dataclass(frozen=True)
class FieldSeries2D:
    """Sum of ``value * r**k * trig(2 pi m phi)`` terms.

    ``s = 0`` selects cosine and ``s = 1`` sine.  Terms are stored sparsely
    as a sorted tuple of ``(k, m, s, value)`` with duplicates merged.
    """

    terms: tuple = field(default=())

    def __post_init__(self):
        merged: dict = {}
        for t in self.terms:
            if len(t) != 4:
                raise ConfigError(f"series2d term must be [k, m, s, value], got {t!r}")
            k, m, s, v = t
            if int(k) != k or int(m) != m or int(s) != s:
                raise ConfigError(f"series2d indices must be integers: {t!r}")
            k, m, s, v = int(k), int(m), int(s), float(v)
            if not (0 <= k <= MAX_R_DEGREE and 0 <= m <= MAX_FREQUENCY and s in (0, 1)):
                raise ConfigError(f"series2d term out of range: {t!r}")
            if m == 0 and s == 1:
                if v != 0.0:
                    raise ConfigError("sine term with m = 0 is identically zero")
                continue
            merged[(k, m, s)] = merged.get((k, m, s), 0.0) + v
        _finite(merged.values(), "FieldSeries2D")
        clean = tuple(sorted((k, m, s, v) for (k, m, s), v in merged.items() if v != 0.0))
        object.__setattr__(self, "terms", clean)
        if clean:
            arr = np.array(clean, dtype=float)
            object.__setattr__(self, "_k", arr[:, 0])
            object.__setattr__(self, "_m", arr[:, 1])
            object.__setattr__(self, "_s", arr[:, 2].astype(bool))
            object.__setattr__(self, "_v", arr[:, 3])

    # construction helpers -------------------------------------------------
    @classmethod
    def constant(cls, value: float) -> "FieldSeries2D":
        return cls(((0, 0, 0, value),))

    @classmethod
    def from_table(cls, table) -> "FieldSeries2D":
        """Build from a dense ``c[k][m][s]`` table."""
        table = np.asarray(table, dtype=float)
        terms = [
            (k, m, s, table[k, m, s])
            for k in range(table.shape[0])
            for m in range(table.shape[1])
            for s in range(table.shape[2])
            if not (m == 0 and s == 1)
        ]
        return cls(tuple(terms))

    def to_table(self) -> np.ndarray:
        t = np.zeros((MAX_R_DEGREE + 1, MAX_FREQUENCY + 1, 2))
        for k, m, s, v in self.terms:
            t[k, m, s] = v
        return t

    @classmethod
    def from_1d(cls, f: FieldSeries1D) -> "FieldSeries2D":
        return cls(tuple((k, 0, 0, c) for k, c in enumerate(f.coeffs)))

    @property
    def is_zero(self) -> bool:
        return not self.terms

    @property
    def is_constant(self) -> bool:
        return all(k == 0 and m == 0 for k, m, _, _ in self.terms)

    @property
    def constant_value(self) -> float:
        return sum(v for k, m, _, v in self.terms if k == 0 and m == 0)

    @property
    def degrees(self) -> tuple[int, int]:
        if not self.terms:
            return (0, 0)
        return (max(t[0] for t in self.terms), max(t[1] for t in self.terms))

    # arithmetic ------------------------------------------------------------
    def __add__(self, other: "FieldSeries2D") -> "FieldSeries2D":
        return FieldSeries2D(self.terms + other.terms)

    def __sub__(self, other: "FieldSeries2D") -> "FieldSeries2D":
        return self + (-1.0) * other

    def __mul__(self, a: float) -> "FieldSeries2D":
        return FieldSeries2D(tuple((k, m, s, a * v) for k, m, s, v in self.terms))

    __rmul__ = __mul__

    def shift_phi(self, delta: float) -> "FieldSeries2D":
        """Series for ``F(r, phi + delta)``."""
        out = []
        for k, m, s, v in self.terms:
            ca, sa = math.cos(TWO_PI * m * delta), math.sin(TWO_PI * m * delta)
            if m == 0:
                out.append((k, 0, 0, v))
            elif s == 0:
                out += [(k, m, 0, v * ca), (k, m, 1, -v * sa)]
            else:
                out += [(k, m, 1, v * ca), (k, m, 0, v * sa)]
        return FieldSeries2D(tuple(out))

    # evaluation ------------------------------------------------------------
    def __call__(self, r, phi):
        return eval_field(self, (r, phi))

    def partials(self, r, phi):
        return eval_partials(self, (r, phi))

    def _scalar(self, r: float, phi: float) -> float:
        phi = phi % 1.0
        acc = 0.0
        for k, m, s, v in self.terms:
            ang = TWO_PI * m * phi
            acc += v * r**k * (math.sin(ang) if s else math.cos(ang))
        return acc

    def _scalar_partials(self, r: float, phi: float) -> tuple[float, float]:
        phi = phi % 1.0
        dr = dp = 0.0
        for k, m, s, v in self.terms:
            ang = TWO_PI * m * phi
            ca, sa = math.cos(ang), math.sin(ang)
            trig, dtrig = (sa, ca) if s else (ca, -sa)
            if k:
                dr += v * k * r ** (k - 1) * trig
            dp += v * r**k * TWO_PI * m * dtrig
        return dr, dp

    def _arrays(self, r, phi):
        r = np.asarray(r, dtype=float)
        phi = np.mod(np.asarray(phi, dtype=float), 1.0)
        r, phi = np.broadcast_arrays(r, phi)
        ang = TWO_PI * np.multiply.outer(phi, self._m)
        rk = np.power.outer(r, self._k)
        trig = np.where(self._s, np.sin(ang), np.cos(ang))
        return r, phi, ang, rk, trig

    # serialization ----------------------------------------------------------
    def to_json(self) -> dict:
        return {"kind": "series2d", "coeffs": [[k, m, s, v] for k, m, s, v in self.terms]}

    def dumps(self) -> str:
        return json.dumps(self.to_json())

    @classmethod
    def from_json(cls, obj) -> "FieldSeries2D":
        if isinstance(obj, (int, float)):
            return cls.constant(float(obj))
        if not isinstance(obj, dict) or obj.get("kind") not in ("series2d", "series1d"):
            raise ConfigError(f"expected a series2d object, got {obj!r}")
        extra = set(obj) - {"kind", "coeffs"}
        if extra:
            raise ConfigError(f"unknown keys in field object: {sorted(extra)}")
        if obj["kind"] == "series1d":
            return cls.from_1d(FieldSeries1D.from_json(obj))
        return cls(tuple(tuple(t) for t in obj["coeffs"]))


def eval_field(f, point):
    """Evaluate a 1-D field at ``r`` or a 2-D field at ``(r, phi)``.

    Scalars give a float, arrays broadcast.
    """
    if isinstance(f, FieldSeries1D):
        return f(point)
    r, phi = point
    if np.isscalar(r) and np.isscalar(phi):
        return f._scalar(float(r), float(phi))
    if not f.terms:
        return np.zeros(np.broadcast(np.asarray(r), np.asarray(phi)).shape)
    _, _, _, rk, trig = f._arrays(r, phi)
    return (rk * trig) @ f._v


def eval_partials(f: FieldSeries2D, point):
    """Exact ``(dF/dr, dF/dphi)`` at ``(r, phi)``."""
    r, phi = point
    if np.isscalar(r) and np.isscalar(phi):
        return f._scalar_partials(float(r), float(phi))
    if not f.terms:
        z = np.zeros(np.broadcast(np.asarray(r), np.asarray(phi)).shape)
        return z, z.copy()
    rr, _, ang, rk, trig = f._arrays(r, phi)
    km1 = np.maximum(f._k - 1, 0)
    drk = np.where(f._k > 0, f._k * np.power.outer(rr, km1), 0.0)
    dtrig = np.where(f._s, np.cos(ang), -np.sin(ang)) * (TWO_PI * f._m)
    return (drk * trig) @ f._v, (rk * dtrig) @ f._v


def average_over_phi(f: FieldSeries2D) -> FieldSeries1D:
    """Exact mean over one period in ``phi``: the ``m = 0`` cosine slice."""
    c = [0.0] * (MAX_R_DEGREE + 1)
    for k, m, s, v in f.terms:
        if m == 0:
            c[k] += v
    while len(c) > 1 and c[-1] == 0.0:
        c.pop()
    return FieldSeries1D(tuple(c))


def fit_series2d(
    func: Callable[[np.ndarray, np.ndarray], np.ndarray],
    r_degree: int = MAX_R_DEGREE,
    frequency: int = MAX_FREQUENCY,
    n_r: int = 40,
    n_phi: int = 48,
    drop: float = 1e-14,
) -> tuple[FieldSeries2D, float]:
    """Least-squares projection of ``func(r, phi)`` onto the truncated basis.

    The fit uses an oversampled tensor grid (Chebyshev nodes in ``r``,
    uniform in ``phi``) and returns the series with the max residual on the
    fitting grid.
    """
    r = 0.5 - 0.5 * np.cos(np.pi * (np.arange(n_r) + 0.5) / n_r)
    phi = np.arange(n_phi) / n_phi
    R, P = np.meshgrid(r, phi, indexing="ij")
    R, P = R.ravel(), P.ravel()
    target = np.asarray(func(R, P), dtype=float) * np.ones_like(R)
    idx = [
        (k, m, s)
        for k in range(r_degree + 1)
        for m in range(frequency + 1)
        for s in (0, 1)
        if not (m == 0 and s == 1)
    ]
    # shifted Legendre-like conditioning via x = 2r - 1 would be nicer, but
    # degree 8 on Chebyshev nodes is well-conditioned enough
    cols = []
    for k, m, s in idx:
        trig = np.sin(TWO_PI * m * P) if s else np.cos(TWO_PI * m * P)
        cols.append(R**k * trig)
    M = np.stack(cols, axis=1)
    sol, *_ = np.linalg.lstsq(M, target, rcond=None)
    fitted = M @ sol
    resid = float(np.max(np.abs(fitted - target))) if target.size else 0.0
    scale = max(1.0, float(np.max(np.abs(sol))) if sol.size else 1.0)
    terms = tuple((k, m, s, v) for (k, m, s), v in zip(idx, sol) if abs(v) > drop * scale)
    return FieldSeries2D(terms), resid


def random_series2d(rng: np.random.Generator, r_degree: int, frequency: int, scale: float = 1.0) -> FieldSeries2D:
    terms = [
        (k, m, s, scale * rng.standard_normal())
        for k in range(r_degree + 1)
        for m in range(frequency + 1)
        for s in (0, 1)
        if not (m == 0 and s == 1)
    ]
    return FieldSeries2D(tuple(terms))


def as_series2d(obj) -> FieldSeries2D:
    """Coerce numbers, 1-D fields and JSON objects into a 2-D field."""
    if isinstance(obj, FieldSeries2D):
        return obj
    if isinstance(obj, FieldSeries1D):
        return FieldSeries2D.from_1d(obj)
    return FieldSeries2D.from_json(obj)

