"""Compiled inner loop of the shadowing sweep.

The replicator system is integrated in logarithmic coordinates
``u_i = ln x_i``, ``v_j = ln y_j`` so that trajectories can approach the
invariant faces to within ``exp(-700)`` without losing relative accuracy.
The field is ``du_i/dt = (Ay)_i - x.Ay`` with ``x = softmax(u)``.
"""

import numpy as np
from numba import njit

# cycle a -> d -> c -> e -> f -> b, zeroed (x index, y index) per position
CYCLE_ZEROED = np.array([[0, 2], [1, 2], [1, 0], [2, 0], [2, 1], [0, 1]], dtype=np.int64)

REASON_KMAX = 0
REASON_LEFT = 1
REASON_TIMEOUT = 2
REASON_STEPS = 3

LEAVE_FACES = 0
LEAVE_CHANNEL = 1

_c2, _c3, _c4, _c5 = 1 / 5, 3 / 10, 4 / 5, 8 / 9
_a21 = 1 / 5
_a31, _a32 = 3 / 40, 9 / 40
_a41, _a42, _a43 = 44 / 45, -56 / 15, 32 / 9
_a51, _a52, _a53, _a54 = 19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729
_a61, _a62, _a63, _a64, _a65 = 9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656
_b1, _b3, _b4, _b5, _b6 = 35 / 384, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84
_e1, _e3, _e4, _e5, _e6, _e7 = 71 / 57600, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40


@njit(cache=True, nogil=True)
def _probs(w, out):
    # softmax of a 3-vector, stable
    m = max(w[0], max(w[1], w[2]))
    s = 0.0
    for i in range(3):
        out[i] = np.exp(w[i] - m)
        s += out[i]
    for i in range(3):
        out[i] /= s


@njit(cache=True, nogil=True)
def log_field(s, A, B, out, x, y):
    _probs(s[0:3], x)
    _probs(s[3:6], y)
    xAy = 0.0
    yBx = 0.0
    for i in range(3):
        ai = A[i, 0] * y[0] + A[i, 1] * y[1] + A[i, 2] * y[2]
        bi = B[i, 0] * x[0] + B[i, 1] * x[1] + B[i, 2] * x[2]
        out[i] = ai
        out[3 + i] = bi
        xAy += x[i] * ai
        yBx += y[i] * bi
    for i in range(3):
        out[i] -= xAy
        out[3 + i] -= yBx


@njit(cache=True, nogil=True)
def run_sequence(s0, A, B, rho, max_time, kmax, rtol, atol, max_steps, leave_mode, start_pos):
    """Integrate one start and count consecutive visits in cycle order.

    A visit is an entry into the neighborhood (both zeroed coordinates
    below ``rho``) of the successor of the last visited face.

    Returns ``(k, reason, t_end)``.
    """
    n = 6
    s = s0.copy()
    k1 = np.empty(n)
    k2 = np.empty(n)
    k3 = np.empty(n)
    k4 = np.empty(n)
    k5 = np.empty(n)
    k6 = np.empty(n)
    k7 = np.empty(n)
    tmp = np.empty(n)
    snew = np.empty(n)
    x = np.empty(3)
    y = np.empty(3)
    log_field(s, A, B, k1, x, y)
    t = 0.0
    h = 0.05
    pos = start_pos  # index in the cycle of the face last visited
    k = 0
    lrho = np.log(rho)
    l2rho = np.log(2.0 * rho)
    steps = 0
    while True:
        if k >= kmax:
            return k, REASON_KMAX, t
        if t >= max_time:
            return k, REASON_TIMEOUT, t
        if steps >= max_steps:
            return k, REASON_STEPS, t
        if t + h > max_time:
            h = max_time - t
        for i in range(n):
            tmp[i] = s[i] + h * _a21 * k1[i]
        log_field(tmp, A, B, k2, x, y)
        for i in range(n):
            tmp[i] = s[i] + h * (_a31 * k1[i] + _a32 * k2[i])
        log_field(tmp, A, B, k3, x, y)
        for i in range(n):
            tmp[i] = s[i] + h * (_a41 * k1[i] + _a42 * k2[i] + _a43 * k3[i])
        log_field(tmp, A, B, k4, x, y)
        for i in range(n):
            tmp[i] = s[i] + h * (_a51 * k1[i] + _a52 * k2[i] + _a53 * k3[i] + _a54 * k4[i])
        log_field(tmp, A, B, k5, x, y)
        for i in range(n):
            tmp[i] = s[i] + h * (
                _a61 * k1[i] + _a62 * k2[i] + _a63 * k3[i] + _a64 * k4[i] + _a65 * k5[i]
            )
        log_field(tmp, A, B, k6, x, y)
        for i in range(n):
            snew[i] = s[i] + h * (_b1 * k1[i] + _b3 * k3[i] + _b4 * k4[i] + _b5 * k5[i] + _b6 * k6[i])
        log_field(snew, A, B, k7, x, y)
        err = 0.0
        for i in range(n):
            e = h * (
                _e1 * k1[i] + _e3 * k3[i] + _e4 * k4[i] + _e5 * k5[i] + _e6 * k6[i] + _e7 * k7[i]
            )
            sc = atol + rtol * max(abs(s[i]), abs(snew[i]))
            err += (e / sc) ** 2
        err = np.sqrt(err / n)
        if err > 1.0:
            h *= max(0.2, 0.9 * err ** (-0.2))
            continue
        t += h
        steps += 1
        for i in range(n):
            s[i] = snew[i]
            k1[i] = k7[i]
        if err == 0.0:
            h *= 10.0
        else:
            h *= min(10.0, max(0.2, 0.9 * err ** (-0.2)))
        # log-probabilities of the current state
        _probs(s[0:3], x)
        _probs(s[3:6], y)
        lx0 = np.log(x[0])
        lx1 = np.log(x[1])
        lx2 = np.log(x[2])
        ly0 = np.log(y[0])
        ly1 = np.log(y[1])
        ly2 = np.log(y[2])
        lx = (lx0, lx1, lx2)
        ly = (ly0, ly1, ly2)
        nxt = (pos + 1) % 6
        zi = CYCLE_ZEROED[nxt, 0]
        zj = CYCLE_ZEROED[nxt, 1]
        if lx[zi] < lrho and ly[zj] < lrho:
            pos = nxt
            k += 1
            continue
        if leave_mode == LEAVE_FACES:
            # sup-distance to the nearest face exceeds 2 rho
            dmin = 0.0
            for q in range(6):
                d = max(lx[CYCLE_ZEROED[q, 0]], ly[CYCLE_ZEROED[q, 1]])
                if q == 0 or d < dmin:
                    dmin = d
            if dmin > l2rho:
                return k, REASON_LEFT, t
        else:
            # every coordinate exceeds 2 rho: far from all connecting pieces
            mn = min(min(lx0, lx1), min(lx2, min(ly0, min(ly1, ly2))))
            if mn > l2rho:
                return k, REASON_LEFT, t


@njit(cache=True, nogil=True)
def run_batch(starts, A, B, rho, max_time, kmax, rtol, atol, max_steps, leave_mode, start_pos, ks, reasons, times):
    for i in range(starts.shape[0]):
        k, r, t = run_sequence(starts[i], A, B, rho, max_time, kmax, rtol, atol, max_steps, leave_mode, start_pos)
        ks[i] = k
        reasons[i] = r
        times[i] = t
