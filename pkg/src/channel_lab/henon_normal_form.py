"""Polynomial return-map family reducing to a quadratic Henon-like map.

Fields with ``q = phi (1 - phi)``::

    Omega = a1 r + a2 q + a3 r^2 + a4 r q + a5 q^2
    b     = b1 r + b2 q + b3 r^2 + b4 r q + b5 q^2
    c     = c1 r + c3 r^3

In ``x = phi, y = z + c(r), w = Omega + Gamma z + c(b)`` the return map
becomes ``(y, w, T3(x, y, w))`` and the quadratic part of ``T3`` decides
the sign condition ``(C - A)(A - B + C) > 0``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ChartError, ConfigError, DegenerateFamilyError
from .toy_return_map import ZState

DENOM_EPS = 1e-12
NEWTON_MAX = 50
NEWTON_TOL = 1e-12


def _dependent(a3, b1, b2, G, a4, a5, c3):
    a2 = -b1 - 2 * G
    c1 = (1 - a2) * (1 + b1) / (b2 * (1 + b1 + 2 * G))
    a1 = c1 * (2 * G - b1 - b1**2) / (1 + b1)
    d4 = (-1 + b1) * (1 + b1) * (
        G
        + b1**4 * (-1 + G) ** 2 * G
        + b1**5 * (-1 + G) ** 2 * G
        - 2 * G**2
        + b1**3 * (-1 + 4 * G - 3 * G**2 - 3 * G**3 + 2 * G**4)
        + b1 * (-1 + 5 * G - 7 * G**2 - 4 * G**3 + 10 * G**4)
        + b1**2 * (-2 + 8 * G - 4 * G**2 - 15 * G**3 + 12 * G**4)
    )
    d3 = 2 * b2 * (-1 + b1**3 * (-1 + G) + 4 * G**2 + b1**2 * (-1 + 2 * G) + b1 * (-1 + 3 * G))
    d5 = (-1 + b1) ** 2 * G**2 * (1 + b1 + 2 * G)
    for name, d in (("d4", d4), ("d3", d3), ("d5", d5)):
        if abs(d) < DENOM_EPS:
            raise DegenerateFamilyError(f"denominator {name} of the closed forms vanishes ({d:.3e})")
    b4 = (
        -b2
        * (
            a4
            * (-1 + b1)
            * (
                G
                + b1**4 * (-1 + G) ** 2 * G
                + b1**5 * (-1 + G) ** 2 * G
                - 6 * G**3
                + 8 * G**5
                + b1**3 * (-1 + 4 * G - 3 * G**2 - 3 * G**3 + 2 * G**4)
                + b1 * (-1 + 5 * G - 5 * G**2 - 6 * G**3 + 6 * G**4)
                + b1**2 * (-2 + 8 * G - 4 * G**2 - 15 * G**3 + 12 * G**4)
            )
            + 2
            * b2
            * (
                b1**7 * c3 * (-1 + G) ** 2 * G
                - G * (1 + G) * (-1 + 2 * G) ** 3 * (2 * a3 + c3 - 2 * c3 * G)
                + b1**2 * c3 * (1 - 2 * G - 2 * G**2 + 5 * G**3)
                + b1**5 * c3 * (-1 + 3 * G - G**2 - 4 * G**3 + 2 * G**4)
                + b1**4 * c3 * (-1 + 3 * G + G**2 - 11 * G**3 + 8 * G**4)
                + b1**3 * c3 * (1 - 3 * G + 6 * G**3 - 6 * G**4 + 4 * G**5)
                + b1 * G * (a3 * (2 - 6 * G + 8 * G**3) + c3 * (1 - 9 * G + 15 * G**2 + 8 * G**3 - 20 * G**4))
            )
        )
    ) / d4
    b3 = (
        -b1 * b4
        + b1**3 * b4
        + 2 * b1**3 * b2**2 * c3
        + 2 * b1**4 * b2**2 * c3
        + b1 * b4 * G
        - b1**3 * b4 * G
        - 4 * b2**2 * c3 * G
        - 2 * b1**2 * b2**2 * c3 * G
        - 4 * b1**3 * b2**2 * c3 * G
        - 2 * b1**4 * b2**2 * c3 * G
        - 2 * b4 * G**2
        + 2 * b1 * b4 * G**2
        + 8 * b2**2 * c3 * G**2
        + a4 * b1 * b2 * (-1 + b1 + G - b1 * G)
        - 2 * a3 * b2**2 * (-1 + b1**2 * (-1 + G) + 2 * G + b1 * G)
    ) / d3
    b5 = (
        -(
            b2
            * (
                a3 * b2**2 * (1 + b1**2 * (-1 + G) ** 2 - 4 * G + 2 * b1 * (-1 + G) * G + 5 * G**2)
                - (-1 + b1) * G * ((-1 + a5 + b1 - a5 * b1) * G + b4 * (-1 + 2 * G) * (1 + b1 + 2 * G))
                + b2**2
                * c3
                * (
                    b1**4 * (-1 + G) ** 2
                    + 2 * b1 * (-1 + G) * G
                    + 2 * b1**3 * (-1 + G) * G
                    + G * (-2 + 9 * G - 8 * G**2)
                    + b1**2 * (1 - 2 * G + 2 * G**2)
                )
                + b2
                * (
                    a4 * G * (-1 + b1 + 2 * G - 2 * b1 * G)
                    + b3
                    * (
                        1
                        + b1**3 * (-1 + G) ** 2
                        - 2 * G
                        - 3 * G**2
                        + 8 * G**3
                        + b1**2 * (1 - 4 * G + 3 * G**2)
                        + b1 * (1 - 6 * G + 7 * G**2)
                    )
                )
            )
        )
        / d5
    )
    return a2, c1, a1, b3, b4, b5


@dataclass(frozen=True)
class HenonFamily:
    a1: float
    a2: float
    a3: float
    b1: float
    b2: float
    b3: float
    b4: float
    b5: float
    c1: float
    gamma: int
    a4: float = 0.0
    a5: float = 0.0
    c3: float = 0.0

    def __post_init__(self):
        if int(self.gamma) != self.gamma or self.gamma < 2:
            raise ConfigError("Gamma must be an integer >= 2")
        _check_denominators(self.b1, self.b2, self.gamma)

    # fields -----------------------------------------------------------
    def Omega(self, r, phi):
        q = phi * (1 - phi)
        return self.a1 * r + self.a2 * q + self.a3 * r * r + self.a4 * r * q + self.a5 * q * q

    def b(self, r, phi):
        q = phi * (1 - phi)
        return self.b1 * r + self.b2 * q + self.b3 * r * r + self.b4 * r * q + self.b5 * q * q

    def c(self, r):
        return self.c1 * r + self.c3 * r**3

    def dc(self, r):
        return self.c1 + 3 * self.c3 * r * r

    # ZMapCoeffs-compatible interface ----------------------------------
    mode = "truncated"
    z_mod_one = False
    phi_periodic = False
    eps = (0.0, 0.0, 0.0)

    def fields(self, r, phi):
        return self.Omega(r, phi), float(self.gamma), self.b(r, phi), self.c(r)

    def partials(self, r, phi):
        q = phi * (1 - phi)
        dq = 1 - 2 * phi
        Om_r = self.a1 + 2 * self.a3 * r + self.a4 * q
        Om_p = (self.a2 + self.a4 * r + 2 * self.a5 * q) * dq
        b_r = self.b1 + 2 * self.b3 * r + self.b4 * q
        b_p = (self.b2 + self.b4 * r + 2 * self.b5 * q) * dq
        return (Om_r, Om_p), (0.0, 0.0), (b_r, b_p), (self.dc(r), 0.0)

    def coefficients(self) -> dict:
        return asdict(self)


def _check_denominators(b1, b2, gamma):
    for name, d in (("b2", b2), ("1+b1", 1 + b1), ("1+b1+2Gamma", 1 + b1 + 2 * gamma), ("b1-1", b1 - 1)):
        if abs(d) < DENOM_EPS:
            raise DegenerateFamilyError(f"denominator {name} vanishes")


def solve_dependent_coefficients(a3, b1, b2, gamma, a4=0.0, a5=0.0, c3=0.0):
    """Complete the family from its free coefficients.

    Returns
    -------
    (a2, c1, a1, b3, b4, b5)
    """
    if int(gamma) != gamma or gamma < 2:
        raise ConfigError("Gamma must be an integer >= 2")
    _check_denominators(b1, b2, gamma)
    return _dependent(float(a3), float(b1), float(b2), float(gamma), float(a4), float(a5), float(c3))


def complete_family(a3, b1, b2, gamma, a4=0.0, a5=0.0, c3=0.0) -> HenonFamily:
    a2, c1, a1, b3, b4, b5 = solve_dependent_coefficients(a3, b1, b2, gamma, a4, a5, c3)
    return HenonFamily(a1, a2, float(a3), float(b1), float(b2), b3, b4, b5, c1, int(gamma),
                       float(a4), float(a5), float(c3))


# coordinates ------------------------------------------------------------


def to_xyw_coordinates(family: HenonFamily, state) -> tuple[float, float, float]:
    z, r, phi = state.as_tuple() if isinstance(state, ZState) else state
    return (
        phi,
        z + family.c(r),
        family.Omega(r, phi) + family.gamma * z + family.c(family.b(r, phi)),
    )


def from_xyw_coordinates(family: HenonFamily, point, r0: float = 0.0) -> ZState:
    """Inverse chart by Newton iteration in ``r``."""
    x, y, w = point
    phi = x
    G = family.gamma
    r = r0
    for _ in range(NEWTON_MAX):
        b = family.b(r, phi)
        f = family.Omega(r, phi) + G * (y - family.c(r)) + family.c(b) - w
        (Om_r, _), _, (b_r, _), _ = family.partials(r, phi)
        df = Om_r - G * family.dc(r) + family.dc(b) * b_r
        if df == 0 or not math.isfinite(df):
            break
        dr = f / df
        r -= dr
        if abs(dr) <= NEWTON_TOL * max(1.0, abs(r)):
            # one polishing step to reach machine precision
            b = family.b(r, phi)
            f = family.Omega(r, phi) + G * (y - family.c(r)) + family.c(b) - w
            r -= f / df
            return ZState(y - family.c(r), r, phi)
    raise ChartError(f"inverse chart did not converge at (x, y, w) = {tuple(point)}")


def T3_printed(family: HenonFamily, point) -> float:
    """Third component as displayed: ``Omega(b, c+z) + Gamma z + c(b(b, c+z))``."""
    z, r, phi = from_xyw_coordinates(family, point).as_tuple()
    rb, pb = family.b(r, phi), family.c(r) + z
    return family.Omega(rb, pb) + family.gamma * z + family.c(family.b(rb, pb))


def T3_conjugate(family: HenonFamily, point) -> float:
    """Third component of the exact conjugate of the truncated map."""
    st = from_xyw_coordinates(family, point)
    Om, G, b, c = family.fields(st.r, st.phi)
    zn, rn, pn = Om + G * st.z, b, c + st.z
    return to_xyw_coordinates(family, (zn, rn, pn))[2]


# normal form ------------------------------------------------------------


@dataclass
class NormalFormQuadratics:
    A: float
    B: float
    C: float
    residuals: dict
    lorenz_value: float
    gradient: tuple = ()
    hessian: tuple = ()
    step: float = 0.0
    variant: str = "printed"

    def to_json(self) -> dict:
        return {
            "A": self.A, "B": self.B, "C": self.C,
            "residuals": dict(self.residuals),
            "lorenz_value": self.lorenz_value,
            "gradient": list(self.gradient),
            "hessian": [list(r) for r in self.hessian],
            "step": self.step,
            "variant": self.variant,
        }


def _derivatives(f, h):
    e = np.eye(3) * h
    g = np.array([(f(e[i]) - f(-e[i])) / (2 * h) for i in range(3)])
    H = np.empty((3, 3))
    f0 = f(np.zeros(3))
    for i in range(3):
        H[i, i] = (f(e[i]) - 2 * f0 + f(-e[i])) / (h * h)
        for j in range(i + 1, 3):
            v = (f(e[i] + e[j]) - f(e[i] - e[j]) - f(-e[i] + e[j]) + f(-e[i] - e[j])) / (4 * h * h)
            H[i, j] = H[j, i] = v
    return g, H


def extract_normal_form_quadratics(family: HenonFamily, step: float = 1e-3, variant: str = "printed") -> NormalFormQuadratics:
    """First and second derivatives of ``T3`` at the origin.

    Central differences at ``step`` and ``step/2`` combined by Richardson
    extrapolation.

    Parameters
    ----------
    variant : {'printed', 'conjugate'}
        ``'printed'`` uses the displayed third component, ``'conjugate'`` the
        exact conjugate of the truncated map.
    """
    if not (1e-6 <= step <= 1e-3):
        raise ConfigError("step must lie in [1e-6, 1e-3]")
    if variant not in ("printed", "conjugate"):
        raise ConfigError("variant must be 'printed' or 'conjugate'")
    T3 = T3_printed if variant == "printed" else T3_conjugate
    Om, G, b, c = family.fields(0.0, 0.0)
    if max(abs(Om), abs(b), abs(c)) > 1e-10 or abs(T3(family, (0.0, 0.0, 0.0))) > 1e-10:
        raise DegenerateFamilyError("origin is not a fixed point of the family")
    f = lambda p: T3(family, p)  # noqa: E731
    g1, H1 = _derivatives(f, step)
    g2, H2 = _derivatives(f, step / 2)
    g = (4 * g2 - g1) / 3
    H = (4 * H2 - H1) / 3
    A, B, C = 0.5 * H[1, 1], H[1, 2], 0.5 * H[2, 2]
    res = {
        "Tx-1": g[0] - 1.0,
        "Ty-1": g[1] - 1.0,
        "Tw+1": g[2] + 1.0,
        "Txx": H[0, 0],
        "Txy": H[0, 1],
        "Txw": H[0, 2],
    }
    return NormalFormQuadratics(float(A), float(B), float(C), {k: float(v) for k, v in res.items()},
                                float((C - A) * (A - B + C)), tuple(g.tolist()),
                                tuple(tuple(r) for r in H.tolist()), step, variant)


def lorenz_condition(q) -> tuple[float, bool]:
    """``((C - A)(A - B + C), value > 0)``."""
    v = (q.C - q.A) * (q.A - q.B + q.C)
    return v, v > 0


def solve_conditions_numerically(a3, b1, b2, gamma, step: float = 1e-3, variant: str = "printed", iters: int = 6):
    """``(b3, b4, b5)`` zeroing ``T3_xx, T3_xy, T3_xw`` by Newton iteration.

    Independent of the closed forms; used to quantify any disagreement.
    """
    base = complete_family(a3, b1, b2, gamma)
    x = np.array([base.b3, base.b4, base.b5])

    def resid(v):
        fam = HenonFamily(**{**base.coefficients(), "b3": v[0], "b4": v[1], "b5": v[2]})
        r = extract_normal_form_quadratics(fam, step, variant).residuals
        return np.array([r["Txx"], r["Txy"], r["Txw"]])

    for _ in range(iters):
        r0 = resid(x)
        if np.max(np.abs(r0)) < 1e-11:
            break
        J = np.empty((3, 3))
        for k in range(3):
            e = np.zeros(3)
            e[k] = 1e-4
            J[:, k] = (resid(x + e) - resid(x - e)) / 2e-4
        x = x - np.linalg.solve(J, r0)
    return tuple(x.tolist()), float(np.max(np.abs(resid(x))))
