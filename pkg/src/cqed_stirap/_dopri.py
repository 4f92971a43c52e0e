"""Dormand-Prince 5(4) integrator compiled with numba.

The right-hand side is a jitted function ``rhs(t, y, args, out)`` that writes
the derivative into ``out``; ``args`` is passed through untouched. Dense
output uses the free quartic interpolant of the pair.
"""
import numpy as np
from numba import njit

SUCCESS = 0
STEP_UNDERFLOW = 1
NON_FINITE = 2

_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0])
_A = np.array([
    [0.0, 0.0, 0.0, 0.0, 0.0],
    [1 / 5, 0.0, 0.0, 0.0, 0.0],
    [3 / 40, 9 / 40, 0.0, 0.0, 0.0],
    [44 / 45, -56 / 15, 32 / 9, 0.0, 0.0],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729, 0.0],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
])
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84])
# b - bhat, including the FSAL stage
_E = np.array([-71 / 57600, 0.0, 71 / 16695, -71 / 1920, 17253 / 339200, -22 / 525, 1 / 40])
_P = np.array([
    [1.0, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
    [0.0, 0.0, 0.0, 0.0],
    [0.0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
    [0.0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
    [0.0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
    [0.0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
    [0.0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
])

_SAFETY = 0.9
_MIN_FACTOR = 0.2
_MAX_FACTOR = 10.0


@njit(cache=True)
def _rms_norm(x, scale):
    acc = 0.0
    for i in range(x.size):
        v = x[i] / scale[i]
        acc += v * v
    return np.sqrt(acc / x.size)


@njit(cache=True)
def _initial_step(rhs, args, t0, y0, f0, direction, rtol, atol, h_max):
    n = y0.size
    scale = np.empty(n)
    for i in range(n):
        scale[i] = atol + rtol * abs(y0[i])
    d0 = _rms_norm(y0, scale)
    d1 = _rms_norm(f0, scale)
    if d0 < 1e-5 or d1 < 1e-5:
        h0 = 1e-6
    else:
        h0 = 0.01 * d0 / d1
    h0 = min(h0, h_max)
    y1 = y0 + direction * h0 * f0
    f1 = np.empty(n)
    rhs(t0 + direction * h0, y1, args, f1)
    d2 = _rms_norm(f1 - f0, scale) / h0
    if d1 <= 1e-15 and d2 <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** 0.2
    return min(100 * h0, h1, h_max)


@njit(cache=True)
def dopri5(rhs, args, t0, y0, t_end, t_eval, rtol, atol, h_max, h_first):
    """Integrate from ``t0`` to ``t_end`` and sample the solution at ``t_eval``.

    ``t_eval`` must be ordered in the integration direction and lie inside
    the span. Returns ``(status, t, y, ys, nfev, n_accept, n_reject)`` where
    ``ys[k]`` is the solution at ``t_eval[k]`` and ``(t, y)`` is the last
    accepted point.
    """
    n = y0.size
    direction = 1.0 if t_end >= t0 else -1.0
    span = abs(t_end - t0)
    ys = np.full((t_eval.size, n), np.nan)
    y = y0.copy()
    t = t0
    nfev = 0
    n_accept = 0
    n_reject = 0
    k_eval = 0
    while k_eval < t_eval.size and direction * (t_eval[k_eval] - t0) <= 0.0:
        ys[k_eval] = y0
        k_eval += 1
    if span == 0.0:
        return SUCCESS, t, y, ys, nfev, n_accept, n_reject

    K = np.empty((7, n))
    f = np.empty(n)
    rhs(t, y, args, f)
    nfev += 1
    for i in range(n):
        if not np.isfinite(f[i]):
            return NON_FINITE, t, y, ys, nfev, n_accept, n_reject
    K[0] = f
    if h_first > 0.0:
        h = min(h_first, h_max, span)
    else:
        h = _initial_step(rhs, args, t, y, f, direction, rtol, atol, h_max)
        nfev += 1
    y_stage = np.empty(n)
    y_new = np.empty(n)
    err = np.empty(n)
    scale = np.empty(n)
    theta_pow = np.empty(4)

    while direction * (t_end - t) > 0.0:
        h_min = 10.0 * abs(np.nextafter(t, direction * np.inf) - t)
        last = abs(t_end - t) <= h_min
        if h < h_min and not last:
            return STEP_UNDERFLOW, t, y, ys, nfev, n_accept, n_reject
        rejected = False
        while True:
            clamped = h >= abs(t_end - t)
            if clamped:
                h = abs(t_end - t)
            hs = direction * h
            for s in range(1, 6):
                for i in range(n):
                    acc = 0.0
                    for j in range(s):
                        acc += _A[s, j] * K[j, i]
                    y_stage[i] = y[i] + hs * acc
                rhs(t + _C[s] * hs, y_stage, args, f)
                K[s] = f
            for i in range(n):
                acc = 0.0
                for j in range(6):
                    acc += _B[j] * K[j, i]
                y_new[i] = y[i] + hs * acc
            t_new = t_end if clamped else t + hs
            rhs(t_new, y_new, args, f)
            K[6] = f
            nfev += 6
            finite = True
            for i in range(n):
                if not np.isfinite(y_new[i]) or not np.isfinite(f[i]):
                    finite = False
                acc = 0.0
                for j in range(7):
                    acc += _E[j] * K[j, i]
                err[i] = hs * acc
                scale[i] = atol + rtol * max(abs(y[i]), abs(y_new[i]))
            if not finite:
                if h < h_min or last:
                    return NON_FINITE, t, y, ys, nfev, n_accept, n_reject
                h *= _MIN_FACTOR
                rejected = True
                n_reject += 1
                continue
            err_norm = _rms_norm(err, scale)
            if err_norm <= 1.0:
                if err_norm == 0.0:
                    factor = _MAX_FACTOR
                else:
                    factor = min(_MAX_FACTOR, _SAFETY * err_norm ** -0.2)
                if rejected:
                    factor = min(1.0, factor)
                break
            factor = max(_MIN_FACTOR, _SAFETY * err_norm ** -0.2)
            h *= factor
            rejected = True
            n_reject += 1
            if h < h_min or last:
                return STEP_UNDERFLOW, t, y, ys, nfev, n_accept, n_reject

        # dense output for the samples inside (t, t_new]
        while k_eval < t_eval.size and direction * (t_eval[k_eval] - t_new) <= 0.0:
            theta = (t_eval[k_eval] - t) / hs
            theta_pow[0] = theta
            theta_pow[1] = theta * theta
            theta_pow[2] = theta_pow[1] * theta
            theta_pow[3] = theta_pow[2] * theta
            for i in range(n):
                acc = 0.0
                for s in range(7):
                    w = 0.0
                    for m in range(4):
                        w += _P[s, m] * theta_pow[m]
                    acc += K[s, i] * w
                ys[k_eval, i] = y[i] + hs * acc
            k_eval += 1

        t = t_new
        for i in range(n):
            y[i] = y_new[i]
        K[0] = K[6]
        n_accept += 1
        h = min(h * factor, h_max)
    return SUCCESS, t, y, ys, nfev, n_accept, n_reject
