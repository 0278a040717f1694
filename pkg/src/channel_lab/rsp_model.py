"""Bimatrix Rock-Scissors-Paper replicator dynamics.

The state is ``(x1, x2, y1, y2)`` with ``x3 = 1 - x1 - x2`` and
``y3 = 1 - y1 - y2``.  Rewards for ties enter the diagonals of the payoff
matrices ``A(eps_x)`` and ``B(eps_y)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

SNAP = 1e-14
FACE_TAGS = ("a", "b", "c", "d", "e", "f")
CYCLE = ("a", "d", "c", "e", "f", "b")

# zeroed (x index, y index), 0-based into the full 3-vectors
_ZEROED = {
    "a": (0, 2),
    "b": (0, 1),
    "c": (1, 0),
    "d": (1, 2),
    "e": (2, 0),
    "f": (2, 1),
}


@dataclass(frozen=True)
class GameParams:
    eps_x: float
    eps_y: float

    def __post_init__(self):
        for name in ("eps_x", "eps_y"):
            v = getattr(self, name)
            if not (math.isfinite(v) and -1.0 < v < 1.0):
                raise ConfigError(f"{name} must lie in the open interval (-1, 1), got {v!r}")

    @property
    def A(self) -> np.ndarray:
        return payoff_matrix(self.eps_x)

    @property
    def B(self) -> np.ndarray:
        return payoff_matrix(self.eps_y)


def payoff_matrix(eps: float) -> np.ndarray:
    return np.array([[eps, 1.0, -1.0], [-1.0, eps, 1.0], [1.0, -1.0, eps]])


@dataclass(frozen=True)
class SimplexState:
    x1: float
    x2: float
    y1: float
    y2: float

    @property
    def x3(self) -> float:
        return 1.0 - self.x1 - self.x2

    @property
    def y3(self) -> float:
        return 1.0 - self.y1 - self.y2

    def as_array(self) -> np.ndarray:
        return np.array([self.x1, self.x2, self.y1, self.y2])

    def validate(self, slack: float = 1e-9) -> None:
        for v in (self.x1, self.x2, self.x3, self.y1, self.y2, self.y3):
            if not (v >= -slack):
                raise ConfigError(f"state {self} leaves the simplex product")


class FaceId(str):
    """Face tag with its zeroed coordinate pair and in-face coordinates."""

    def __new__(cls, tag: str):
        if tag not in _ZEROED:
            raise ConfigError(f"unknown face {tag!r}; expected one of {FACE_TAGS}")
        return super().__new__(cls, tag)

    @property
    def tag(self) -> str:
        return str(self)

    @property
    def zeroed(self) -> tuple[int, int]:
        """0-based (x index, y index) of the vanishing strategies."""
        return _ZEROED[self.tag]

    @property
    def zeroed_names(self) -> tuple[str, str]:
        i, j = self.zeroed
        return (f"x{i + 1}", f"y{j + 1}")

    @property
    def x_pair(self) -> tuple[int, int]:
        """Full-vector indices ``(ia, ib)``: in-face x is ``x[ia]``, ``x[ib] = 1 - x``."""
        i0 = self.zeroed[0]
        return tuple(k for k in range(3) if k != i0)

    @property
    def y_pair(self) -> tuple[int, int]:
        j0 = self.zeroed[1]
        return tuple(k for k in range(3) if k != j0)

    @property
    def successor(self) -> "FaceId":
        return FaceId(CYCLE[(CYCLE.index(self.tag) + 1) % 6])

    @property
    def predecessor(self) -> "FaceId":
        return FaceId(CYCLE[(CYCLE.index(self.tag) - 1) % 6])

    @property
    def unstable_coordinate(self) -> tuple[str, int]:
        """Zeroed coordinate that is not shared with the successor face."""
        i, j = self.zeroed
        si, sj = self.successor.zeroed
        if i == si:
            return ("y", j)
        if j == sj:
            return ("x", i)
        raise AssertionError("consecutive faces must share a coordinate")


def successor(tag: str) -> str:
    return FaceId(tag).successor.tag


@dataclass(frozen=True)
class Equilibrium:
    face: FaceId
    point: SimplexState
    center: tuple[float, float]


@dataclass(frozen=True)
class FaceReducedField:
    """``x' = x(1-x) f(y)``, ``y' = y(1-y) g(x)`` with affine ``f``, ``g``."""

    face: FaceId
    f_affine: tuple[float, float]  # (alpha_f, beta_f)
    g_affine: tuple[float, float]
    x_name: str
    y_name: str

    def f(self, y):
        a, b = self.f_affine
        return b + a * y

    def g(self, x):
        a, b = self.g_affine
        return b + a * x

    @property
    def center(self) -> tuple[float, float]:
        (af, bf), (ag, bg) = self.f_affine, self.g_affine
        return (-bg / ag, -bf / af)

    def rhs(self, t, u):
        x, y = u[0], u[1]
        return np.array([x * (1.0 - x) * self.f(y), y * (1.0 - y) * self.g(x)])

    def jacobian(self, x: float, y: float) -> np.ndarray:
        af, ag = self.f_affine[0], self.g_affine[0]
        return np.array(
            [
                [(1 - 2 * x) * self.f(y), x * (1 - x) * af],
                [y * (1 - y) * ag, (1 - 2 * y) * self.g(x)],
            ]
        )

    @property
    def omega_lin(self) -> float:
        xs, ys = self.center
        return math.sqrt(xs * (1 - xs) * ys * (1 - ys) * abs(self.f_affine[0] * self.g_affine[0]))


def _full(u) -> tuple[np.ndarray, np.ndarray]:
    x1, x2, y1, y2 = u
    x3 = 1.0 - x1 - x2
    y3 = 1.0 - y1 - y2
    # the implied third strategy is snapped like the stored ones
    x3 = 0.0 if abs(x3) < SNAP else x3
    y3 = 0.0 if abs(y3) < SNAP else y3
    return np.array([x1, x2, x3]), np.array([y1, y2, y3])


def snap(u: np.ndarray) -> np.ndarray:
    """Zero out coordinates within ``SNAP`` of the boundary."""
    u = np.array(u, dtype=float)
    u[np.abs(u) < SNAP] = 0.0
    return u


def vector_field(params: GameParams, state) -> np.ndarray:
    """Time derivative of ``(x1, x2, y1, y2)``."""
    u = state.as_array() if isinstance(state, SimplexState) else np.asarray(state, dtype=float)
    x, y = _full(u)
    Ay = params.A @ y
    Bx = params.B @ x
    xAy = x @ Ay
    yBx = y @ Bx
    return np.array(
        [x[0] * (Ay[0] - xAy), x[1] * (Ay[1] - xAy), y[0] * (Bx[0] - yBx), y[1] * (Bx[1] - yBx)]
    )


def vector_field_full(params: GameParams, x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Field on the 6 homogeneous coordinates (dx, dy)."""
    Ay = params.A @ y
    Bx = params.B @ x
    return x * (Ay - x @ Ay), y * (Bx - y @ Bx)


def jacobian(params: GameParams, state) -> np.ndarray:
    """Analytic 4x4 Jacobian of :func:`vector_field`."""
    u = state.as_array() if isinstance(state, SimplexState) else np.asarray(state, dtype=float)
    x, y = _full(u)
    A, B = params.A, params.B
    Ay, Bx = A @ y, B @ x
    xAy, yBx = x @ Ay, y @ Bx
    # derivatives of the full vectors with respect to (x1, x2) and (y1, y2)
    P = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, -1.0]])
    J = np.zeros((4, 4))
    d_xAy_dx = Ay @ P
    d_xAy_dy = (x @ A) @ P
    d_yBx_dy = Bx @ P
    d_yBx_dx = (y @ B) @ P
    for i in range(2):
        J[i, 0:2] = P[i] * (Ay[i] - xAy) - x[i] * d_xAy_dx
        J[i, 2:4] = x[i] * ((A[i] @ P) - d_xAy_dy)
        J[2 + i, 2:4] = P[i] * (Bx[i] - yBx) - y[i] * d_yBx_dy
        J[2 + i, 0:2] = y[i] * ((B[i] @ P) - d_yBx_dx)
    return J


def equilibria(params: GameParams) -> list[Equilibrium]:
    """The six face equilibria ``Z^a .. Z^f`` from their closed forms."""
    ex, ey = params.eps_x, params.eps_y
    pts = {
        "a": (0.0, 2 / (3 - ey), (1 + ex) / (3 + ex), 2 / (3 + ex)),
        "b": (0.0, (1 + ey) / (3 + ey), (1 - ex) / (3 - ex), 0.0),
        "c": ((1 - ey) / (3 - ey), 0.0, 0.0, (1 + ex) / (3 + ex)),
        "d": (2 / (3 + ey), 0.0, 2 / (3 - ex), (1 - ex) / (3 - ex)),
        "e": ((1 + ey) / (3 + ey), 2 / (3 + ey), 0.0, 2 / (3 - ex)),
        "f": (2 / (3 - ey), (1 - ey) / (3 - ey), 2 / (3 + ex), 0.0),
    }
    out = []
    for tag in FACE_TAGS:
        face = FaceId(tag)
        st = SimplexState(*pts[tag])
        out.append(Equilibrium(face, st, to_face_coords(face, st.as_array())))
    return out


def equilibrium(params: GameParams, face) -> Equilibrium:
    return next(e for e in equilibria(params) if e.face == FaceId(face))


def to_face_coords(face, u) -> tuple[float, float]:
    face = FaceId(face)
    x, y = _full(u)
    return (float(x[face.x_pair[0]]), float(y[face.y_pair[0]]))


def from_face_coords(face, xf: float, yf: float, dx0: float = 0.0, dy0: float = 0.0) -> np.ndarray:
    """State on (or ``dx0``, ``dy0`` off) a face from in-face coordinates.

    The offsets are placed on the zeroed coordinates and taken from the
    ``x[ib]`` and ``y[jb]`` partners so the simplex sums remain 1.
    """
    face = FaceId(face)
    x = np.zeros(3)
    y = np.zeros(3)
    ia, ib = face.x_pair
    ja, jb = face.y_pair
    x[ia], x[ib] = xf, 1.0 - xf
    y[ja], y[jb] = yf, 1.0 - yf
    i0, j0 = face.zeroed
    x[i0] = dx0
    x[ib] -= dx0
    y[j0] = dy0
    y[jb] -= dy0
    return np.array([x[0], x[1], y[0], y[1]])


def face_reduced_field(params: GameParams, face) -> FaceReducedField:
    """Affine ``f``, ``g`` of the face-restricted dynamics."""
    face = FaceId(face)
    A, B = params.A, params.B
    ia, ib = face.x_pair
    ja, jb = face.y_pair
    alpha_f = A[ia, ja] - A[ia, jb] - A[ib, ja] + A[ib, jb]
    beta_f = A[ia, jb] - A[ib, jb]
    alpha_g = B[ja, ia] - B[ja, ib] - B[jb, ia] + B[jb, ib]
    beta_g = B[ja, ib] - B[jb, ib]
    return FaceReducedField(face, (alpha_f, beta_f), (alpha_g, beta_g), f"x{ia + 1}", f"y{ja + 1}")


def _primitive(alpha: float, beta: float, v):
    # integral of (alpha v + beta) / (v (1 - v))
    return beta * np.log(v) - (alpha + beta) * np.log1p(-v)


def face_energy(params: GameParams, face, point) -> float:
    """Conserved energy of the face dynamics, zero (and minimal) at the center.

    ``E = s * (G(x) - F(y))`` with ``G' = g / (x (1-x))``, ``F' = f / (y (1-y))``
    and ``s = sign(alpha_g)`` chosen so that ``E >= 0``.
    """
    red = face_reduced_field(params, face) if not isinstance(face, FaceReducedField) else face
    x, y = point
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.any((x <= 0) | (x >= 1) | (y <= 0) | (y >= 1)):
        raise ConfigError("face energy is defined only in the open face square")
    xs, ys = red.center
    (af, bf), (ag, bg) = red.f_affine, red.g_affine
    G = _primitive(ag, bg, x) - _primitive(ag, bg, xs)
    F = _primitive(af, bf, y) - _primitive(af, bf, ys)
    e = math.copysign(1.0, ag) * (G - F)
    return float(e) if e.ndim == 0 else e


def transverse_rates(params: GameParams, face, u) -> tuple:
    """``(V1, V2)``: growth rates of the two zeroed coordinates at ``u``."""
    face = FaceId(face)
    u = np.asarray(u, dtype=float)
    x, y = _full(u)
    i0, j0 = face.zeroed
    Ay = params.A @ y
    Bx = params.B @ x
    return Ay[i0] - x @ Ay, Bx[j0] - y @ Bx


def transverse_rates_face(params: GameParams, face, xf, yf):
    """Vectorized ``(V1, V2)`` at in-face coordinates."""
    face = FaceId(face)
    A, B = params.A, params.B
    ia, ib = face.x_pair
    ja, jb = face.y_pair
    i0, j0 = face.zeroed
    xf = np.asarray(xf, dtype=float)
    yf = np.asarray(yf, dtype=float)
    Ay = {i: A[i, ja] * yf + A[i, jb] * (1 - yf) for i in range(3)}
    Bx = {j: B[j, ia] * xf + B[j, ib] * (1 - xf) for j in range(3)}
    xAy = xf * Ay[ia] + (1 - xf) * Ay[ib]
    yBx = yf * Bx[ja] + (1 - yf) * Bx[jb]
    return Ay[i0] - xAy, Bx[j0] - yBx


def relabel(u) -> np.ndarray:
    """Cyclic strategy relabeling ``(1,2,3) -> (2,3,1)`` on both players."""
    x, y = _full(np.asarray(u, dtype=float))
    return np.array([x[1], x[2], y[1], y[2]])


def relabel_face(tag: str) -> str:
    """Face that a face is carried to by :func:`relabel`."""
    i, j = _ZEROED[tag]
    target = ((i - 1) % 3, (j - 1) % 3)
    return next(t for t, z in _ZEROED.items() if z == target)


def face_distance(face, u) -> float:
    """Sup-distance to the face subspace (max of its zeroed coordinates)."""
    face = FaceId(face)
    x, y = _full(np.asarray(u, dtype=float))
    i0, j0 = face.zeroed
    return max(abs(x[i0]), abs(y[j0]))
