"""Semiclassical equations of motion for the cavity chain and their integration.

The flat real state layout is ``[Re a_1, Im a_1, ..., Re a_n, Im a_n,
Re s, Im s, sz]``. Cavity ``j`` obeys::

    da_j/dt = -i D_j a_j + i (J_{j-1} a_{j-1} + J_j a_{j+1}) - (kappa/2) a_j
              - i g s  (terminal cavity only)
    ds/dt   = 2 i g a_n sz - (gamma/2) s
    dsz/dt  = -i g (s* a_n - a_n* s) - gamma (sz + 1/2)

in the frame rotating at the end-cavity frequency.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional

import numpy as np
from numba import njit

from . import _dopri
from .exceptions import IntegrationError, ValidationError
from .model import ChainParams, PulseProtocol, SemiclassicalState, check_valid

# packed parameter vector: fixed header followed by per-cavity and per-bond blocks
_HDR = 8
_I_N, _I_K, _I_TAU, _I_KAPPA, _I_GAMMA, _I_G, _I_FROZEN, _I_MU = range(_HDR)


def pack(params: ChainParams, protocol: PulseProtocol, frozen_ttilde=None, mu=0.0,
         couplings=None) -> np.ndarray:
    """Pack the model into the float vector consumed by the compiled RHS.

    With ``frozen_ttilde`` (or explicit ``couplings``) the tunnellings are held
    at their values at that protocol coordinate. ``mu`` adds the rotation
    ``+ i mu x`` to every complex component, so stationary points of the
    chemical-potential-shifted problem become fixed points.
    """
    n = params.n_cavities
    p = np.zeros(_HDR + n + 2 * (n - 1))
    p[_I_N] = n
    p[_I_K] = protocol.K
    p[_I_TAU] = protocol.tau
    p[_I_KAPPA] = params.kappa
    p[_I_GAMMA] = params.gamma
    p[_I_G] = params.g[-1]
    p[_I_MU] = mu
    p[_HDR:_HDR + n] = params.detuning
    p[_HDR + n:_HDR + 2 * n - 1] = protocol.centers
    if couplings is None and frozen_ttilde is not None:
        couplings = protocol.couplings_at_ttilde(frozen_ttilde)
    if couplings is not None:
        p[_I_FROZEN] = 1.0
        p[_HDR + 2 * n - 1:] = couplings
    return p


@njit(cache=True)
def chain_rhs(t, y, p, out):
    n = int(p[_I_N])
    K = p[_I_K]
    tau = p[_I_TAU]
    half_kappa = 0.5 * p[_I_KAPPA]
    gamma = p[_I_GAMMA]
    g = p[_I_G]
    mu = p[_I_MU]
    frozen = p[_I_FROZEN] != 0.0
    det0 = _HDR
    cen0 = _HDR + n
    frz0 = _HDR + 2 * n - 1

    for j in range(n):
        re = y[2 * j]
        im = y[2 * j + 1]
        w = p[det0 + j] - mu
        # -i w a - kappa/2 a
        out[2 * j] = w * im - half_kappa * re
        out[2 * j + 1] = -w * re - half_kappa * im

    for b in range(n - 1):
        if frozen:
            J = p[frz0 + b]
        else:
            x = t / tau - p[cen0 + b]
            J = K * np.exp(-x * x)
        # i J a_{b+1} into cavity b and i J a_b into cavity b+1
        out[2 * b] -= J * y[2 * b + 3]
        out[2 * b + 1] += J * y[2 * b + 2]
        out[2 * b + 2] -= J * y[2 * b + 1]
        out[2 * b + 3] += J * y[2 * b]

    cr = y[2 * n - 2]
    ci = y[2 * n - 1]
    sr = y[2 * n]
    si = y[2 * n + 1]
    sz = y[2 * n + 2]
    # terminal cavity: -i g s
    out[2 * n - 2] += g * si
    out[2 * n - 1] -= g * sr
    # ds = 2 i g c sz - gamma/2 s + i mu s
    out[2 * n] = -2.0 * g * ci * sz - 0.5 * gamma * sr - mu * si
    out[2 * n + 1] = 2.0 * g * cr * sz - 0.5 * gamma * si + mu * sr
    # dsz = 2 g Im(s* c) - gamma (sz + 1/2)
    out[2 * n + 2] = 2.0 * g * (sr * ci - si * cr) - gamma * (sz + 0.5)


def _as_vector(state, size=None):
    if isinstance(state, SemiclassicalState):
        y = state.to_vector()
    else:
        y = np.array(state, dtype=float)
    if size is not None and y.size != size:
        raise ValidationError(f"state has {y.size} components, expected {size}")
    return y


def eom_rhs(state, params: ChainParams, protocol: PulseProtocol, t: float, mu: float = 0.0,
            frozen_ttilde=None):
    """Time derivative of ``state`` at time ``t``.

    Returns the same kind of object that was passed: a ``SemiclassicalState``
    holding the derivatives, or a flat real vector.
    """
    y = _as_vector(state, params.state_size)
    if not np.all(np.isfinite(y)):
        raise ValidationError("state has non-finite components")
    out = np.empty_like(y)
    chain_rhs(float(t), y, pack(params, protocol, frozen_ttilde, mu), out)
    if isinstance(state, SemiclassicalState):
        return SemiclassicalState.from_vector(out)
    return out


def conserved_total(state) -> float:
    """Total excitation ``sum |a_j|^2 + sz + 1/2``.

    Accepts a state object, a flat vector, or a 2-D array of flat vectors
    (one per row) in which case an array is returned.
    """
    if isinstance(state, SemiclassicalState):
        return state.total_excitation()
    y = np.asarray(state, dtype=float)
    n2 = y.shape[-1] - 3
    return np.sum(y[..., :n2] ** 2, axis=-1) + y[..., n2 + 2] + 0.5


def spin_length_sq(y):
    y = np.asarray(y, dtype=float)
    n2 = y.shape[-1] - 3
    return y[..., n2] ** 2 + y[..., n2 + 1] ** 2 + y[..., n2 + 2] ** 2


@dataclass(frozen=True)
class IntegratorOptions:
    """Tolerances and sampling for the adaptive integrator.

    ``max_step`` defaults to ``tau / 50`` and ``sample_spacing`` (in units of
    the protocol coordinate) to 0.01.
    """

    rtol: float = 1e-9
    atol: float = 1e-11
    max_step: Optional[float] = None
    sample_spacing: float = 0.01

    def __post_init__(self):
        if not (self.rtol > 0 and self.atol > 0):
            raise ValidationError("integrator tolerances must be positive")
        if self.max_step is not None and not self.max_step > 0:
            raise ValidationError("max_step must be positive")
        if not self.sample_spacing > 0:
            raise ValidationError("sample_spacing must be positive")

    def tightened(self, factor=0.5) -> "IntegratorOptions":
        return IntegratorOptions(self.rtol * factor, self.atol * factor, self.max_step,
                                 self.sample_spacing)


@dataclass
class Trajectory:
    """Sampled solution of the semiclassical equations.

    ``states`` holds one flat real state vector per row of ``times``.
    """

    times: np.ndarray
    states: np.ndarray
    tau: float
    n_cavities: int
    nfev: int = 0

    @property
    def ttilde(self):
        return self.times / self.tau

    @property
    def amps(self):
        n = self.n_cavities
        return self.states[:, 0:2 * n:2] + 1j * self.states[:, 1:2 * n:2]

    @property
    def photon_numbers(self):
        return np.abs(self.amps) ** 2

    @property
    def s(self):
        n = self.n_cavities
        return self.states[:, 2 * n] + 1j * self.states[:, 2 * n + 1]

    @property
    def sz(self):
        return self.states[:, 2 * self.n_cavities + 2]

    @property
    def conserved(self):
        return conserved_total(self.states)

    @property
    def spin_length_sq(self):
        return spin_length_sq(self.states)

    @property
    def final(self) -> SemiclassicalState:
        return SemiclassicalState.from_vector(self.states[-1])

    def state_at(self, i) -> SemiclassicalState:
        return SemiclassicalState.from_vector(self.states[i])

    def to_csv(self, path):
        """Write ``t, ttilde, n_1..n_k, re_s, im_s, sz, conserved``."""
        n = self.n_cavities
        header = ["t", "ttilde"] + [f"n_{i + 1}" for i in range(n)] + ["re_s", "im_s", "sz", "conserved"]
        s = self.s
        cols = np.column_stack([self.times, self.ttilde, self.photon_numbers, s.real, s.imag,
                                self.sz, self.conserved])
        write_csv(path, header, cols)


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v)) if np.isfinite(v) else str(float(v))
    return v


def _sample_times(t0, t1, spacing):
    if t1 == t0:
        return np.array([t0])
    count = max(int(np.ceil(abs(t1 - t0) / spacing - 1e-9)), 1)
    return np.linspace(t0, t1, count + 1)


def run_dopri(rhs, args, y0, t0, t1, t_eval, rtol, atol, max_step):
    t_eval = np.asarray(t_eval, dtype=float)
    status, t, y, ys, nfev, _, _ = _dopri.dopri5(rhs, args, float(t0), np.asarray(y0, dtype=float),
                                                 float(t1), t_eval, float(rtol), float(atol),
                                                 float(max_step), 0.0)
    if status == _dopri.STEP_UNDERFLOW:
        raise IntegrationError("step size underflow", t)
    if status == _dopri.NON_FINITE:
        raise IntegrationError("non-finite state encountered", t)
    return y, ys, nfev


def integrate(state0, params: ChainParams, protocol: PulseProtocol, t_span=None,
              options: Optional[IntegratorOptions] = None, t_eval=None, frozen_ttilde=None,
              mu: float = 0.0) -> Trajectory:
    """Integrate the equations of motion over ``t_span`` (times, not ``ttilde``).

    ``t_span`` defaults to the full protocol ``[0, t_end]``. Under the
    time-dependent protocol the span must stay inside that interval; with
    ``frozen_ttilde`` the tunnellings are constant and any span is allowed.
    Samples are taken every ``options.sample_spacing * tau`` unless
    ``t_eval`` is given; the end point is always included.
    """
    check_valid(params, protocol)
    options = options or IntegratorOptions()
    y0 = _as_vector(state0, params.state_size)
    if not np.all(np.isfinite(y0)):
        raise ValidationError("initial state has non-finite components")
    t0, t1 = (0.0, protocol.t_end) if t_span is None else (float(t_span[0]), float(t_span[1]))
    if frozen_ttilde is None:
        slack = 1e-9 * protocol.t_end
        if min(t0, t1) < -slack or max(t0, t1) > protocol.t_end + slack:
            raise ValidationError(f"t_span {t0, t1} outside the protocol interval [0, {protocol.t_end}]")
    if t_eval is None:
        t_eval = _sample_times(t0, t1, options.sample_spacing * protocol.tau)
    else:
        t_eval = np.asarray(t_eval, dtype=float)
    max_step = options.max_step if options.max_step is not None else protocol.tau / 50.0
    p = pack(params, protocol, frozen_ttilde, mu)
    _, ys, nfev = run_dopri(chain_rhs, p, y0, t0, t1, t_eval, options.rtol, options.atol, max_step)
    return Trajectory(t_eval, ys, protocol.tau, params.n_cavities, nfev)
