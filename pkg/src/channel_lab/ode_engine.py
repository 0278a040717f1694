"""Adaptive Dormand-Prince 5(4) integration with dense output and events."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, IntegrationError, NotPeriodicError

# Dormand-Prince tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    np.array([]),
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
]
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_E = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40])
# continuous extension: y(t + th h) = y + h * K.T @ P @ [th, th^2, th^3, th^4]
_P = np.array(
    [
        [1.0, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
        [0.0, 0.0, 0.0, 0.0],
        [0.0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
        [0.0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
        [0.0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
        [0.0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
        [0.0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
    ]
)

SAFETY = 0.9
MIN_FACTOR = 0.2
MAX_FACTOR = 10.0
MAX_BISECTIONS = 80


@dataclass(frozen=True)
class IntegratorConfig:
    rel_tol: float = 1e-10
    abs_tol: float = 1e-12
    max_step: float = math.inf
    max_time: float = 1e4
    max_steps: int = 1_000_000

    def __post_init__(self):
        if not (self.rel_tol > 0 and self.abs_tol > 0):
            raise ConfigError("tolerances must be positive")
        if not self.max_time > 0:
            raise ConfigError("max_time must be positive")
        if not self.max_step > 0:
            raise ConfigError("max_step must be positive")
        if self.max_steps < 1:
            raise ConfigError("max_steps must be at least 1")


@dataclass(frozen=True)
class EventSpec:
    """Zero of ``fn(t, y)`` with crossing ``direction`` (+1, -1 or 0 for both)."""

    name: str
    fn: Callable[[float, np.ndarray], float]
    direction: int = 0
    tol: float = 1e-10
    terminal: bool = False

    def __post_init__(self):
        if self.direction not in (-1, 0, 1):
            raise ConfigError("event direction must be -1, 0 or +1")
        if not self.tol > 0:
            raise ConfigError("event tolerance must be positive")


@dataclass(frozen=True)
class Event:
    t: float
    name: str
    state: np.ndarray


@dataclass
class OrbitRecord:
    """Accepted steps, dense-output segments and the event log."""

    t: np.ndarray
    y: np.ndarray
    events: list = field(default_factory=list)
    status: str = "completed"  # completed | terminated | truncated
    n_rejected: int = 0
    event_names: tuple = ()
    _Q: np.ndarray | None = None  # (n_steps, dim, 4)

    @property
    def truncated(self) -> bool:
        return self.status == "truncated"

    @property
    def t_final(self) -> float:
        return float(self.t[-1])

    @property
    def y_final(self) -> np.ndarray:
        return self.y[-1]

    def __call__(self, tq):
        """Dense-output state at ``tq`` (scalar or array)."""
        if self._Q is None:
            raise ConfigError("record was integrated without dense output")
        scalar = np.ndim(tq) == 0
        tq = np.atleast_1d(np.asarray(tq, dtype=float))
        if np.any(tq < self.t[0]) or np.any(tq > self.t[-1]):
            raise ConfigError("dense output requested outside the integration interval")
        idx = np.clip(np.searchsorted(self.t, tq, side="right") - 1, 0, len(self.t) - 2)
        out = np.empty((tq.size, self.y.shape[1]))
        for n, (k, tt) in enumerate(zip(idx, tq)):
            out[n] = _dense_eval(self.t[k], self.t[k + 1], self.y[k], self._Q[k], tt)
        return out[0] if scalar else out

    def segment(self, k: int):
        """``(t_k, t_{k+1}, y_k, Q_k)`` for quadrature over one step."""
        return self.t[k], self.t[k + 1], self.y[k], self._Q[k]

    def crossings(self, name: str) -> list:
        return find_section_crossing(self, name)

    def to_csv(self, path, names: Sequence[str] | None = None) -> None:
        dim = self.y.shape[1]
        names = list(names) if names is not None else [f"u{i}" for i in range(dim)]
        rows = [(float(t), list(map(float, y)), "") for t, y in zip(self.t, self.y)]
        rows += [(ev.t, list(map(float, ev.state)), ev.name) for ev in self.events]
        rows.sort(key=lambda r: (r[0], r[2]))
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", *names, "event"])
            for t, y, ev in rows:
                w.writerow([format(t, ".17g"), *(format(v, ".17g") for v in y), ev])


def _dense_eval(t0, t1, y0, Q, tq):
    h = t1 - t0
    th = (tq - t0) / h
    return y0 + h * (Q @ np.array([th, th * th, th**3, th**4]))


def _rms(e, scale):
    return math.sqrt(float(np.mean((e / scale) ** 2)))


def _initial_step(fun, t0, y0, f0, rtol, atol, direction=1.0):
    scale = atol + np.abs(y0) * rtol
    d0 = _rms(y0, scale)
    d1 = _rms(f0, scale)
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    y1 = y0 + h0 * direction * f0
    f1 = fun(t0 + h0 * direction, y1)
    d2 = _rms(f1 - f0, scale) / h0
    if d1 <= 1e-15 and d2 <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1 / 5)
    return min(100 * h0, h1)


def _check_finite(v, t, y_last):
    if not np.all(np.isfinite(v)):
        raise IntegrationError("non-finite value in vector field", t=t, state=np.array(y_last))


def _crossed(g0, g1, direction):
    if g0 == 0.0:
        return False
    up = g0 < 0.0 <= g1
    down = g0 > 0.0 >= g1
    if direction > 0:
        return up
    if direction < 0:
        return down
    return up or down


def _locate(ev: EventSpec, t0, t1, y0, Q, g0):
    """Bisection on the dense output; deterministic."""
    a, b = t0, t1
    ga = g0
    for _ in range(MAX_BISECTIONS):
        if b - a <= ev.tol:
            break
        m = 0.5 * (a + b)
        gm = ev.fn(m, _dense_eval(t0, t1, y0, Q, m))
        if (ga < 0.0 <= gm) or (ga > 0.0 >= gm):
            b = m
        else:
            a, ga = m, gm
    return b, _dense_eval(t0, t1, y0, Q, b)


def integrate(
    fun: Callable[[float, np.ndarray], np.ndarray],
    start,
    config: IntegratorConfig | None = None,
    events: Sequence[EventSpec] = (),
    t0: float = 0.0,
    t_end: float | None = None,
    dense: bool = True,
) -> OrbitRecord:
    """Integrate ``y' = fun(t, y)`` from ``t0`` to ``t_end``.

    Parameters
    ----------
    fun : callable
        Right-hand side ``fun(t, y) -> array``.
    start : array_like
        Initial state.
    config : IntegratorConfig
        Tolerances and limits.  ``t_end`` defaults to ``t0 + max_time``.
    events : sequence of EventSpec
        Crossings are logged in time order; a terminal event stops the run.
    dense : bool
        Keep dense-output coefficients for every step.

    Returns
    -------
    OrbitRecord
    """
    cfg = config or IntegratorConfig()
    y = np.array(start, dtype=float)
    if y.ndim != 1 or not np.all(np.isfinite(y)):
        raise ConfigError("start must be a finite 1-D state")
    t_end = t0 + cfg.max_time if t_end is None else float(t_end)
    if not t_end > t0:
        raise ConfigError("t_end must exceed t0")
    rtol, atol = cfg.rel_tol, cfg.abs_tol

    t = float(t0)
    f = np.asarray(fun(t, y), dtype=float)
    _check_finite(f, t, y)
    ts, ys, Qs = [t], [y.copy()], []
    gvals = [float(ev.fn(t, y)) for ev in events]
    log: list[Event] = []
    status = "completed"
    h = min(_initial_step(fun, t, y, f, rtol, atol), cfg.max_step, t_end - t)
    K = np.empty((7, y.size))
    n_steps = 0
    n_rej = 0
    while t < t_end:
        if n_steps >= cfg.max_steps:
            status = "truncated"
            break
        h = min(h, cfg.max_step, t_end - t)
        if h <= 16 * np.spacing(t) or h <= 0:
            raise IntegrationError("step size underflow", t=t, state=y.copy())
        K[0] = f
        for s in range(1, 6):
            K[s] = fun(t + _C[s] * h, y + h * (_A[s] @ K[:s]))
            _check_finite(K[s], t, y)
        y_new = y + h * (_B[:6] @ K[:6])
        f_new = np.asarray(fun(t + h, y_new), dtype=float)
        _check_finite(f_new, t, y)
        K[6] = f_new
        err = h * (_E @ K)
        scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
        en = _rms(err, scale)
        if en > 1.0:
            n_rej += 1
            h *= max(MIN_FACTOR, SAFETY * en ** (-0.2))
            continue
        t_new = t + h if t_end - (t + h) > 4 * np.spacing(t_end) else t_end
        Q = K.T @ _P
        # events on this step
        hits = []
        for i, ev in enumerate(events):
            g_new = float(ev.fn(t_new, y_new))
            if _crossed(gvals[i], g_new, ev.direction):
                te, ye = _locate(ev, t, t_new, y, Q, gvals[i])
                hits.append((te, i, ye))
            gvals[i] = g_new
        hits.sort(key=lambda e: (e[0], e[1]))
        stop_at = None
        for te, i, ye in hits:
            log.append(Event(te, events[i].name, ye))
            if events[i].terminal:
                stop_at = (te, ye)
                break
        n_steps += 1
        if stop_at is not None:
            te, ye = stop_at
            if te > t:
                ts.append(te)
                ys.append(ye)
                # re-expand the polynomial on the shortened interval
                if dense:
                    Qs.append(_restrict(Q, t, t_new, te))
            status = "terminated"
            break
        ts.append(t_new)
        ys.append(y_new.copy())
        if dense:
            Qs.append(Q.copy())
        t, y, f = t_new, y_new, f_new
        fac = MAX_FACTOR if en == 0 else min(MAX_FACTOR, SAFETY * en ** (-0.2))
        h *= max(MIN_FACTOR, fac)
    return OrbitRecord(
        np.array(ts),
        np.array(ys),
        log,
        status,
        n_rej,
        tuple(ev.name for ev in events),
        np.array(Qs) if dense and Qs else None,
    )


def _restrict(Q, t0, t1, te):
    """Dense coefficients for the sub-interval ``[t0, te]`` of a step."""
    h, he = t1 - t0, te - t0
    s = he / h
    # y(t0 + th' he) = y0 + h * Q @ [s th', (s th')^2, ...] = y0 + he * Q' @ [th', ...]
    return Q * np.array([1.0, s, s * s, s**3]) if h > 0 else Q


def find_section_crossing(record: OrbitRecord, name: str) -> list:
    """All logged crossings of event ``name`` as ``(time, state)`` pairs."""
    if name not in record.event_names:
        raise ConfigError(f"unknown event id {name!r}")
    return [(ev.t, ev.state) for ev in record.events if ev.name == name]


@dataclass
class FacePeriodicOrbit:
    orbit: OrbitRecord | None
    period: float
    energy: float
    seed: tuple
    degenerate: bool = False
    closure_defect: float = 0.0
    energy_drift: float = 0.0


def periodic_orbit_on_face(params, face, seed, config: IntegratorConfig | None = None) -> FacePeriodicOrbit:
    """Closed orbit of the reduced face dynamics through ``seed``.

    The return is detected on the ray from the face center through the seed.
    Seeds at the center give the degenerate orbit with the linearized period.
    """
    from . import rsp_model

    cfg = config or IntegratorConfig(max_time=1e3)
    red = rsp_model.face_reduced_field(params, face)
    xs, ys = red.center
    sx, sy = float(seed[0]), float(seed[1])
    if not (0.0 < sx < 1.0 and 0.0 < sy < 1.0):
        raise ConfigError("seed must lie inside the open face square")
    d = np.array([sx - xs, sy - ys])
    if np.hypot(*d) == 0.0:
        return FacePeriodicOrbit(None, 2 * math.pi / red.omega_lin, 0.0, (sx, sy), degenerate=True)
    n = np.array([-d[1], d[0]])
    c = np.array([xs, ys])
    u0 = np.array([sx, sy])
    # crossing direction of the ray at the seed
    ev = _return_event(n, c, red.rhs(0.0, u0))
    rec = integrate(red.rhs, u0, cfg, [ev])
    if rec.status != "terminated":
        raise NotPeriodicError(f"no return to the section within t = {cfg.max_time}")
    period = rec.t_final
    defect = float(np.max(np.abs(rec.y_final - u0)))
    E0 = rsp_model.face_energy(params, face, (sx, sy))
    E = rsp_model.face_energy(params, face, (rec.y[:, 0], rec.y[:, 1]))
    return FacePeriodicOrbit(
        rec, period, E0, (sx, sy), False, defect, float(np.max(np.abs(E - E0)))
    )


def _return_event(n, c, v0):
    # g starts at 0 and moves with sign(n . v0); the return crosses in the same sense
    sgn = 1 if float(n @ v0) > 0 else -1
    return EventSpec("ray", lambda t, u: float(n @ (u - c)), direction=sgn, terminal=True)
