"""Maximal Lyapunov exponents of the frozen-protocol dynamics and chaos windows.

The frozen system holds every tunnelling at its value at ``ttilde``. Two
copies (reference and perturbed) are integrated together as one system so
that their step sizes, and hence their truncation errors, coincide; the
separation is renormalised to ``delta0`` after every interval ``xi``.

Distances use the flat real state with cavity amplitudes divided by
``sqrt(N)`` so that photon and spin coordinates are both of order one.
"""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from numba import njit

from . import _dopri
from .dynamics import _sample_times, chain_rhs, pack, write_csv
from .exceptions import IntegrationError, StirapError, ValidationError
from .model import ChainParams, PulseProtocol, SemiclassicalState, check_valid
from .stationary import SPBranch, find_ssp, ssp_at, uniform_grid


@njit(cache=True)
def pair_rhs(t, y, p, out):
    n = y.size // 2
    chain_rhs(t, y[:n], p, out[:n])
    chain_rhs(t, y[n:], p, out[n:])


@njit(cache=True)
def ensemble_rhs(t, y, p, out):
    m = int(p[-1])
    d = y.size // m
    q = p[:-1]
    for k in range(m):
        chain_rhs(t, y[k * d:(k + 1) * d], q, out[k * d:(k + 1) * d])


@dataclass(frozen=True)
class LyapunovSettings:
    """Benettin parameters.

    ``delta0`` is measured in the scaled metric; ``xi`` and the plateau
    window ``(T1, T2)`` are in units of ``1/K``.
    """

    delta0: float = 1e-7
    xi: float = 0.5
    m_max: int = 4000
    plateau: tuple = (500.0, 1500.0)
    rtol: float = 1e-10
    atol: float = 1e-12
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "plateau", tuple(float(v) for v in self.plateau))
        if not self.delta0 > 0:
            raise ValidationError("delta0 > 0 violated")
        if not self.xi > 0:
            raise ValidationError("xi > 0 violated")
        if int(self.m_max) < 1:
            raise ValidationError("m_max >= 1 violated")
        t1, t2 = self.plateau
        if not 0 <= t1 < t2:
            raise ValidationError("plateau window must satisfy 0 <= T1 < T2")

    def to_dict(self):
        d = asdict(self)
        d["plateau"] = list(self.plateau)
        d["norm"] = "euclidean, cavity amplitudes scaled by 1/sqrt(N)"
        return d


def metric_weights(n_cavities, N):
    w = np.ones(2 * n_cavities + 3)
    w[: 2 * n_cavities] = 1.0 / np.sqrt(N)
    return w


def constrained_direction(y, rng, n_cavities):
    """Random raw-coordinate direction orthogonal to the gradients of both invariants."""
    n2 = 2 * n_cavities
    grad_total = np.zeros_like(y)
    grad_total[:n2] = 2.0 * y[:n2]
    grad_total[n2 + 2] = 1.0
    grad_spin = np.zeros_like(y)
    grad_spin[n2:] = 2.0 * y[n2:]
    basis = []
    for g in (grad_total, grad_spin):
        for b in basis:
            g = g - np.dot(g, b) * b
        norm = np.linalg.norm(g)
        if norm > 1e-12:
            basis.append(g / norm)
    v = rng.standard_normal(y.size)
    for b in basis:
        v -= np.dot(v, b) * b
    return v


@dataclass
class LyapunovSeries:
    """Running finite-time exponent ``lambda_M`` after each renormalisation."""

    ttilde: float
    times: np.ndarray
    lambdas: np.ndarray
    settings: LyapunovSettings
    log_ratios: np.ndarray = field(repr=False, default=None)

    def plateau_mean(self, window=None) -> float:
        t1, t2 = self.settings.plateau if window is None else window
        mask = (self.times >= t1) & (self.times <= t2)
        if not mask.any():
            raise ValidationError(f"plateau window {t1, t2} not covered by the series")
        return float(np.mean(self.lambdas[mask]))

    @property
    def tail(self) -> float:
        return float(self.lambdas[-1])

    def to_csv(self, path):
        """Write ``K_M_xi, lambda_M``."""
        write_csv(path, ["K_M_xi", "lambda_M"], np.column_stack([self.times, self.lambdas]))


def benettin(state0, ttilde, params: ChainParams, protocol: PulseProtocol, delta0=None, xi=None,
             m_max=None, seed=None, settings: Optional[LyapunovSettings] = None) -> LyapunovSeries:
    """Two-trajectory estimate of the maximal Lyapunov exponent at frozen ``ttilde``.

    The initial offset is a random direction, projected to leave both
    invariants unchanged to first order, scaled to ``delta0``. Explicit
    arguments override the corresponding ``settings`` fields.
    """
    check_valid(params, protocol)
    base = settings or LyapunovSettings()
    over = {k: v for k, v in dict(delta0=delta0, xi=xi, m_max=m_max, seed=seed).items() if v is not None}
    st = LyapunovSettings(**{**asdict(base), **over}) if over else base
    y0 = state0.to_vector() if isinstance(state0, SemiclassicalState) else np.array(state0, dtype=float)
    if y0.size != params.state_size or not np.all(np.isfinite(y0)):
        raise ValidationError("state0 must be a finite state of the configured chain")
    n = params.n_cavities
    w = metric_weights(n, params.N)
    rng = np.random.default_rng(st.seed)
    v = constrained_direction(y0, rng, n)
    v *= st.delta0 / np.linalg.norm(w * v)

    p = pack(params, protocol, frozen_ttilde=ttilde)
    dim = y0.size
    y = np.concatenate([y0, y0 + v])
    xi_t = st.xi / protocol.K
    h_max = xi_t
    logs = np.empty(int(st.m_max))
    t = 0.0
    t_eval = np.empty(1)
    for j in range(int(st.m_max)):
        t_eval[0] = t + xi_t
        status, _, y, _, _, _, _ = _dopri.dopri5(pair_rhs, p, t, y, t + xi_t, t_eval, st.rtol,
                                                  st.atol, h_max, 0.0)
        if status != _dopri.SUCCESS:
            raise IntegrationError("integration failed during Lyapunov run", t)
        t += xi_t
        d = y[dim:] - y[:dim]
        delta = np.linalg.norm(w * d)
        if not delta > 0:
            raise StirapError(f"separation collapsed to zero after {j + 1} intervals")
        logs[j] = np.log(delta / st.delta0)
        y[dim:] = y[:dim] + d * (st.delta0 / delta)
    m = np.arange(1, logs.size + 1)
    times = protocol.K * m * xi_t
    lambdas = np.cumsum(logs) / times
    return LyapunovSeries(float(ttilde), times, lambdas, st, logs)


@dataclass(frozen=True)
class LyapunovEstimate:
    ttilde: float
    plateau: float
    tail: float


def _ssp_state(ttilde, params, protocol, branch):
    if branch is None:
        branch = find_ssp(params, protocol)
    return ssp_at(branch, ttilde, params, protocol).to_state()


def lambda_max_at(ttilde, params: ChainParams, protocol: PulseProtocol,
                  settings: Optional[LyapunovSettings] = None, branch: Optional[SPBranch] = None,
                  state=None) -> LyapunovEstimate:
    """Finite-time exponent at the SSP (or ``state``) for frozen ``ttilde``.

    Reports the mean of ``lambda_M`` over the plateau window and its final value.
    """
    settings = settings or LyapunovSettings()
    if state is None:
        state = _ssp_state(ttilde, params, protocol, branch)
    series = benettin(state, ttilde, params, protocol, settings=settings)
    return LyapunovEstimate(float(ttilde), series.plateau_mean(), series.tail)


@dataclass
class ChaosWindow:
    """Region of the protocol where the exponent at the SSP exceeds the noise threshold.

    ``ttilde_left``/``ttilde_right`` are ``None`` when no grid point is above threshold.
    """

    ttilde_left: Optional[float]
    ttilde_right: Optional[float]
    lambda_max_peak: float
    threshold: float
    noise_floor: float
    ttilde: np.ndarray
    profile: np.ndarray
    settings: LyapunovSettings = None

    @property
    def exists(self) -> bool:
        return self.ttilde_left is not None

    def contains(self, ttilde) -> bool:
        return self.exists and self.ttilde_left <= ttilde <= self.ttilde_right

    def to_csv(self, path):
        """Write ``ttilde, lambda_max``."""
        write_csv(path, ["ttilde", "lambda_max"], np.column_stack([self.ttilde, self.profile]))

    def to_dict(self):
        return {
            "ttilde_left": self.ttilde_left,
            "ttilde_right": self.ttilde_right,
            "lambda_max_peak": self.lambda_max_peak,
            "threshold": self.threshold,
            "noise_floor": self.noise_floor,
        }


def _profile_point(args):
    ttilde, state, params, protocol, settings = args
    series = benettin(state, ttilde, params, protocol, settings=settings)
    return series.plateau_mean()


def lyapunov_profile(params: ChainParams, protocol: PulseProtocol, ttilde_grid,
                     settings: Optional[LyapunovSettings] = None, branch: Optional[SPBranch] = None,
                     workers=1) -> np.ndarray:
    """Plateau exponent at the SSP for every point of ``ttilde_grid``."""
    settings = settings or LyapunovSettings()
    grid = np.asarray(ttilde_grid, dtype=float)
    if branch is None:
        branch = find_ssp(params, protocol)
    jobs = [(t, _ssp_state(t, params, protocol, branch), params, protocol, settings) for t in grid]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return np.array(list(pool.map(_profile_point, jobs)))
    return np.array([_profile_point(j) for j in jobs])


def noise_floor(params: ChainParams, protocol: PulseProtocol, ttilde_grid,
                settings: Optional[LyapunovSettings] = None, workers=1) -> float:
    """Smallest exponent the estimator can distinguish from zero.

    The larger of the largest ``|lambda|`` of the linear (``g = 0``) chain
    over the grid with the same settings, and the resolution ``1 / T1`` of a
    finite-time mean that starts at ``T1``. The linear chain alone gives an
    unusable floor: its photon flow is unitary and its spin static, so
    separations never change.
    """
    settings = settings or LyapunovSettings()
    prof = lyapunov_profile(params.linear(), protocol, ttilde_grid, settings, workers=workers)
    resolution = 1.0 / max(settings.plateau[0], settings.xi)
    return float(max(np.max(np.abs(prof)), resolution))


def window_from_profile(grid, profile, floor, factor=3.0, settings=None) -> ChaosWindow:
    """Longest contiguous run of grid points with ``profile > factor * floor``."""
    grid = np.asarray(grid, dtype=float)
    profile = np.asarray(profile, dtype=float)
    threshold = factor * floor
    above = profile > threshold
    best = (0, -1)
    i = 0
    while i < above.size:
        if above[i]:
            j = i
            while j + 1 < above.size and above[j + 1]:
                j += 1
            if j - i > best[1] - best[0]:
                best = (i, j)
            i = j + 1
        else:
            i += 1
    peak = float(np.max(profile)) if profile.size else 0.0
    if best[1] < best[0]:
        return ChaosWindow(None, None, peak, threshold, floor, grid, profile, settings)
    lo, hi = best
    return ChaosWindow(float(grid[lo]), float(grid[hi]), float(np.max(profile[lo:hi + 1])), threshold,
                       floor, grid, profile, settings)


def chaos_window(params: ChainParams, protocol: PulseProtocol, ttilde_grid=None,
                 settings: Optional[LyapunovSettings] = None, floor: Optional[float] = None,
                 branch: Optional[SPBranch] = None, workers=1) -> ChaosWindow:
    """Chaos window of the SSP over ``ttilde_grid`` (default: the protocol span in steps of 0.02).

    The threshold is three times :func:`noise_floor`; pass ``floor`` to
    reuse a calibration.
    """
    settings = settings or LyapunovSettings()
    grid = default_window_grid(protocol) if ttilde_grid is None else np.asarray(ttilde_grid, dtype=float)
    if floor is None:
        floor = noise_floor(params, protocol, grid, settings, workers)
    profile = lyapunov_profile(params, protocol, grid, settings, branch, workers)
    return window_from_profile(grid, profile, floor, settings=settings)


def refine_peak(window: ChaosWindow, params: ChainParams, protocol: PulseProtocol, spacing=0.005,
                branch: Optional[SPBranch] = None, workers=1) -> ChaosWindow:
    """Resample the profile inside the window at ``spacing`` and update ``lambda_max_peak``.

    The window edges and threshold are kept; the returned profile is the
    union of both grids. A window that does not exist is returned unchanged.
    """
    if not window.exists:
        return window
    if branch is None:
        branch = find_ssp(params, protocol)
    fine = uniform_grid(window.ttilde_left, window.ttilde_right, spacing)
    fine = fine[~np.isin(np.round(fine, 9), np.round(window.ttilde, 9))]
    prof = lyapunov_profile(params, protocol, fine, window.settings, branch, workers)
    grid = np.concatenate([window.ttilde, fine])
    profile = np.concatenate([window.profile, prof])
    order = np.argsort(grid)
    inside = (grid >= window.ttilde_left) & (grid <= window.ttilde_right)
    return ChaosWindow(window.ttilde_left, window.ttilde_right, float(np.max(profile[inside])),
                       window.threshold, window.noise_floor, grid[order], profile[order], window.settings)


def default_window_grid(protocol: PulseProtocol, spacing=0.02):
    return uniform_grid(0.0, protocol.ttilde_end, spacing)


@dataclass
class EnsembleCloud:
    """Ensemble section ``(phi_source - phi_terminal, n_source - n_terminal)`` per sample and time.

    ``valid`` is False where either amplitude is too small for its phase to be
    defined. ``diameter`` is twice the largest distance of a member from the
    ensemble mean at each time, in the scaled metric.
    """

    times: np.ndarray
    phase_diff: np.ndarray
    n_diff: np.ndarray
    valid: np.ndarray
    initial_spread: float
    diameter: np.ndarray

    def to_csv(self, path):
        """Write ``t, sample_id, phase_diff, n_diff`` (undefined phases as ``nan``)."""
        rows = []
        for i, t in enumerate(self.times):
            for k in range(self.phase_diff.shape[1]):
                ph = self.phase_diff[i, k] if self.valid[i, k] else np.nan
                rows.append((t, k, ph, self.n_diff[i, k]))
        write_csv(path, ["t", "sample_id", "phase_diff", "n_diff"], rows)


def ensemble_spread(ttilde, params: ChainParams, protocol: PulseProtocol, n_samples=10,
                    perturbation=1e-3, horizon=200.0, seed=0, sample_spacing=0.5,
                    branch: Optional[SPBranch] = None, state=None) -> EnsembleCloud:
    """Evolve ``n_samples`` constrained perturbations of the SSP under the frozen protocol.

    ``perturbation`` is the offset norm in the scaled metric and ``horizon``
    the run length in units of ``1/K``.
    """
    check_valid(params, protocol)
    if state is None:
        state = _ssp_state(ttilde, params, protocol, branch)
    y0 = state.to_vector() if isinstance(state, SemiclassicalState) else np.asarray(state, dtype=float)
    n = params.n_cavities
    w = metric_weights(n, params.N)
    rng = np.random.default_rng(seed)
    members = []
    for _ in range(n_samples):
        v = constrained_direction(y0, rng, n)
        members.append(y0 + v * (perturbation / np.linalg.norm(w * v)))
    y = np.concatenate(members)
    p = np.append(pack(params, protocol, frozen_ttilde=ttilde), n_samples)
    t_end = horizon / protocol.K
    t_eval = _sample_times(0.0, t_end, sample_spacing / protocol.K)
    status, t_fail, _, ys, _, _, _ = _dopri.dopri5(ensemble_rhs, p, 0.0, y, t_end, t_eval, 1e-10,
                                                   1e-12, sample_spacing / protocol.K, 0.0)
    if status != _dopri.SUCCESS:
        raise IntegrationError("ensemble integration failed", t_fail)
    d = y0.size
    states = ys.reshape(t_eval.size, n_samples, d)
    src = states[..., 0] + 1j * states[..., 1]
    term = states[..., 2 * n - 2] + 1j * states[..., 2 * n - 1]
    floor = 1e-9 * np.sqrt(params.N)
    valid = (np.abs(src) >= floor) & (np.abs(term) >= floor)
    phase = np.angle(src) - np.angle(term)
    phase = (phase + np.pi) % (2 * np.pi) - np.pi
    n_diff = np.abs(src) ** 2 - np.abs(term) ** 2
    scaled = states * w
    centre = scaled.mean(axis=1, keepdims=True)
    diameter = 2.0 * np.max(np.linalg.norm(scaled - centre, axis=2), axis=1)
    return EnsembleCloud(t_eval, phase, n_diff, valid, float(perturbation), diameter)
