"""Transfer efficiency, sweep-rate scans and their 95% bounds.

A run starts at the stationary point of the source-filled state at
``ttilde = 0`` (independent of the sweep rate) and ends at
``protocol.ttilde_end``, which stands in for infinite time.
"""
from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .dynamics import IntegratorOptions, Trajectory, conserved_total, integrate, write_csv
from .exceptions import StirapError, ValidationError
from .model import ChainParams, PulseProtocol, SemiclassicalState
from .stationary import SPBranch, SPSolution, solve_sp, source_seed, ssp_at

LEVEL = 0.95
# final stretch (in ttilde) averaged for the late-time efficiency
LATE_WINDOW = 1.0
LATE_SAMPLES = 201
SOURCE_CONVENTION = "n_terminal(end) / n_source(start)"
AVAILABLE_CONVENTION = "n_terminal(end) / (N - 1/2 - sz(start))"
# TransferResult attribute used by scans: "late" averages out the residual exchange oscillation
STATISTICS = {"late": "T_late", "final": "T"}


def initial_ssp(params: ChainParams, protocol: PulseProtocol) -> SemiclassicalState:
    """Stationary point at ``ttilde = 0`` seeded from the source-filled state."""
    return solve_sp(source_seed(params), 0.0, params, protocol).to_state()


def _as_state(start) -> SemiclassicalState:
    if isinstance(start, SemiclassicalState):
        return start
    if isinstance(start, SPSolution):
        return start.to_state()
    return SemiclassicalState.from_vector(np.asarray(start, dtype=float))


@dataclass
class TransferResult:
    """Efficiency of one run with the normalisation used.

    ``T`` uses the source occupation at the start for runs from
    ``ttilde = 0`` and the transferable excitation ``N - 1/2 - sz`` for runs
    started mid-protocol; ``T_source`` is always the source-normalised value.
    ``T_late`` replaces the end value by the mean terminal occupation over the
    last ``LATE_WINDOW`` of the protocol, which removes the phase of the
    residual cavity-qubit exchange oscillation that persists after the pulses.
    """

    T: float
    T_source: float
    T_late: float
    n_terminal_end: float
    denominator: float
    convention: str
    ttilde_start: float
    trajectory: Optional[Trajectory] = field(default=None, repr=False)

    def metadata(self):
        return {"T": self.T, "T_source": self.T_source, "T_late": self.T_late, "n_terminal_end": self.n_terminal_end,
                "denominator": self.denominator, "convention": self.convention,
                "ttilde_start": self.ttilde_start}


def transfer_efficiency(params: ChainParams, protocol: PulseProtocol, start=None, t_start=0.0,
                        options: Optional[IntegratorOptions] = None, keep_trajectory=False) -> TransferResult:
    """Integrate from ``t_start`` (a time, not ``ttilde``) to the protocol end and return ``T``.

    ``start`` defaults to the stationary point at ``ttilde = 0``.
    """
    state = initial_ssp(params, protocol) if start is None else _as_state(start)
    n_source = float(state.photon_numbers[0])
    available = params.N - 0.5 - state.sz
    mid = t_start > 0.0
    denom = available if mid else n_source
    if not denom > 0:
        raise ValidationError("start state has nothing to transfer")
    t_late = max(protocol.t_end - LATE_WINDOW * protocol.tau, t_start)
    late_eval = np.linspace(t_late, protocol.t_end, LATE_SAMPLES)
    t_eval = None if keep_trajectory else np.concatenate([[t_start], late_eval])
    traj = integrate(state, params, protocol, (t_start, protocol.t_end), options, t_eval=t_eval)
    n_end = float(traj.photon_numbers[-1, -1])
    late = traj.times >= t_late - 1e-12 * protocol.t_end
    n_late = float(np.mean(traj.photon_numbers[late, -1]))
    return TransferResult(
        T=n_end / denom,
        T_source=n_end / n_source if n_source > 0 else np.nan,
        T_late=n_late / denom,
        n_terminal_end=n_end,
        denominator=float(denom),
        convention=AVAILABLE_CONVENTION if mid else SOURCE_CONVENTION,
        ttilde_start=t_start / protocol.tau,
        trajectory=traj if keep_trajectory else None,
    )


def default_rate_grid(lo=1e-5, hi=1.0, per_decade=60):
    """Log-spaced sweep rates, ``per_decade`` points per decade, both ends included."""
    decades = np.log10(hi) - np.log10(lo)
    return np.logspace(np.log10(lo), np.log10(hi), int(round(decades * per_decade)) + 1)


def _statistic_attr(statistic):
    if statistic not in STATISTICS:
        raise ValidationError(f"statistic must be one of {sorted(STATISTICS)}, got {statistic!r}")
    return STATISTICS[statistic]


def _scan_point(args):
    params, protocol, state, rate, options, attr = args
    try:
        res = transfer_efficiency(params, protocol.with_rate(rate), state, options=options)
        return getattr(res, attr), None
    except StirapError as exc:
        return np.nan, f"{type(exc).__name__}: {exc}"


def _map(fn, jobs, workers):
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, jobs))
    return [fn(j) for j in jobs]


@dataclass
class Bounds:
    """Ends of the efficient (``T >= level``) plateau on the rate axis."""

    inv_tau_slow: Optional[float]
    inv_tau_fast: Optional[float]
    fast_at_edge: bool = False
    refined: bool = False
    diagnostics: list = field(default_factory=list)

    def to_dict(self):
        return {"inv_tau_slow": self.inv_tau_slow, "inv_tau_fast": self.inv_tau_fast,
                "fast_at_edge": self.fast_at_edge, "refined": self.refined,
                "diagnostics": list(self.diagnostics)}


@dataclass
class EfficiencyCurve:
    """``T`` against sweep rate ``1/tau`` for one parameter set."""

    rates: np.ndarray
    T: np.ndarray
    g: float
    N: float
    errors: list = field(default_factory=list)
    bounds: Optional[Bounds] = None
    statistic: str = "late"
    params: Optional[ChainParams] = field(default=None, repr=False)
    protocol: Optional[PulseProtocol] = field(default=None, repr=False)

    def __post_init__(self):
        self.rates = np.asarray(self.rates, dtype=float)
        self.T = np.asarray(self.T, dtype=float)
        if self.rates.shape != self.T.shape:
            raise ValidationError("rates and T must have equal length")
        if np.any(np.diff(self.rates) <= 0):
            raise ValidationError("rate grid must be strictly increasing")

    def to_csv(self, path, sidecar=True):
        """Write ``inv_tau, T`` and, with ``sidecar``, a JSON file of bounds and parameters."""
        write_csv(path, ["inv_tau", "T"], np.column_stack([self.rates, self.T]))
        if sidecar:
            with open(str(path).rsplit(".", 1)[0] + ".json", "w") as fh:
                json.dump(self.to_dict(), fh, indent=2)

    def to_dict(self):
        return {
            "g": self.g,
            "N": self.N,
            "statistic": self.statistic,
            "bounds": self.bounds.to_dict() if self.bounds else None,
            "errors": [list(e) for e in self.errors],
            "params": self.params.to_dict() if self.params else None,
            "protocol": self.protocol.to_dict() if self.protocol else None,
        }


def efficiency_scan(params: ChainParams, protocol: PulseProtocol, rate_grid=None,
                    options: Optional[IntegratorOptions] = None, workers=1,
                    statistic="late") -> EfficiencyCurve:
    """``T`` at each rate of ``rate_grid``, every run seeded at the ``ttilde = 0`` stationary point.

    ``statistic`` picks the efficiency recorded: ``"late"`` (``T_late``) or
    ``"final"`` (the end-point ``T``).

    Failed points are stored as ``nan`` with their message in ``errors``;
    results are ordered by rate whatever the worker count.
    """
    rates = default_rate_grid() if rate_grid is None else np.asarray(rate_grid, dtype=float)
    order = np.argsort(rates)
    rates = rates[order]
    state = initial_ssp(params, protocol)
    attr = _statistic_attr(statistic)
    jobs = [(params, protocol, state, float(r), options, attr) for r in rates]
    results = _map(_scan_point, jobs, workers)
    T = np.array([r[0] for r in results])
    errors = [(float(rates[i]), msg) for i, (_, msg) in enumerate(results) if msg is not None]
    return EfficiencyCurve(rates, T, params.g_terminal, params.N, errors, None, statistic, params, protocol)


def _longest_run(mask):
    best = (0, -1)
    i = 0
    while i < mask.size:
        if mask[i]:
            j = i
            while j + 1 < mask.size and mask[j + 1]:
                j += 1
            if j - i > best[1] - best[0]:
                best = (i, j)
            i = j + 1
        else:
            i += 1
    return best


def _bisect(rate_fail, rate_ok, evaluate, level, rtol):
    """Shrink a bracket in log-rate until the two ends agree to ``rtol``; return the passing end."""
    while abs(rate_ok / rate_fail - 1.0) > rtol:
        mid = np.sqrt(rate_fail * rate_ok)
        if evaluate(mid) >= level:
            rate_ok = mid
        else:
            rate_fail = mid
    return float(rate_ok)


def bounds_95(curve: EfficiencyCurve, params: Optional[ChainParams] = None,
              protocol: Optional[PulseProtocol] = None, level=LEVEL, rtol=0.01,
              options: Optional[IntegratorOptions] = None, refine=True) -> Bounds:
    """Slow and fast ends of the efficient plateau.

    The plateau is the longest contiguous run of grid points with
    ``T >= level``, which ignores isolated high values among chaotic ones.
    ``inv_tau_slow`` is its lowest rate (``None`` when the plateau reaches
    the start of the grid); ``inv_tau_fast`` its highest (flagged when at the
    grid end). With the model (``params``, ``protocol``, or the ones stored
    on the curve) and ``refine`` each bracketed end is refined by bisection
    to ``rtol``; otherwise the grid points themselves are returned.
    """
    params = params or curve.params
    protocol = protocol or curve.protocol
    T = np.where(np.isfinite(curve.T), curve.T, -np.inf)
    lo, hi = _longest_run(T >= level)
    diag = []
    if hi < lo:
        return Bounds(None, None, diagnostics=[f"no grid point reaches T >= {level}"])
    refine = refine and params is not None and protocol is not None
    if refine:
        state = initial_ssp(params, protocol)
        attr = _statistic_attr(curve.statistic)

        def evaluate(rate):
            res = transfer_efficiency(params, protocol.with_rate(rate), state, options=options)
            return getattr(res, attr)
    rates = curve.rates
    if lo == 0:
        slow = None
        diag.append("no slow falloff on the grid: plateau reaches the lowest rate")
    elif refine:
        slow = _bisect(rates[lo - 1], rates[lo], evaluate, level, rtol)
    else:
        slow = float(rates[lo])
    fast_at_edge = hi == rates.size - 1
    if fast_at_edge:
        fast = float(rates[hi])
        diag.append("fast bound at the grid edge")
    elif refine:
        fast = _bisect(rates[hi + 1], rates[hi], evaluate, level, rtol)
    else:
        fast = float(rates[hi])
    return Bounds(slow, fast, fast_at_edge, refine, diag)


@dataclass
class BoundCheck:
    g: float
    inv_tau_slow: Optional[float]
    lambda_max_peak: float
    passed: bool
    message: str


@dataclass
class BoundReport:
    """Per-coupling check of ``1/tau_slow < lambda_max_peak`` plus ordering in ``g``."""

    checks: list
    monotone: bool
    monotone_message: str

    @property
    def ok(self) -> bool:
        return self.monotone and all(c.passed for c in self.checks)

    def lines(self):
        out = []
        for c in self.checks:
            out.append(f"{'PASS' if c.passed else 'FAIL'} g={c.g:g}: {c.message}")
        out.append(f"{'PASS' if self.monotone else 'FAIL'} ordering: {self.monotone_message}")
        return out

    def to_dict(self):
        return {
            "ok": self.ok,
            "monotone": self.monotone,
            "monotone_message": self.monotone_message,
            "checks": [c.__dict__ for c in self.checks],
        }


def check_bound_inequality(entries) -> BoundReport:
    """Check the slow bound against the chaos peak for each ``(g, bounds, window)`` entry.

    A coupling without slow bound passes vacuously. Ordering requires
    ``inv_tau_slow`` to be nondecreasing in ``g`` over the entries that have one.
    """
    checks = []
    for g, bounds, window in sorted(entries, key=lambda e: e[0]):
        slow = bounds.inv_tau_slow
        peak = float(window.lambda_max_peak) if window is not None and window.exists else 0.0
        if slow is None:
            checks.append(BoundCheck(g, None, peak, True, "no slow bound (vacuous)"))
        else:
            ok = slow < peak
            checks.append(BoundCheck(g, slow, peak, ok, f"1/tau_slow = {slow:.4g} {'<' if ok else '>='} "
                                                        f"lambda_max_peak = {peak:.4g}"))
    slows = [(c.g, c.inv_tau_slow) for c in checks if c.inv_tau_slow is not None]
    monotone = all(b[1] >= a[1] for a, b in zip(slows, slows[1:]))
    msg = ", ".join(f"g={g:g}: {s:.4g}" for g, s in slows) or "no slow bounds"
    return BoundReport(checks, monotone, msg)


def linear_dark_state(J1, J2, N):
    """Photon numbers ``(N cos^2, 0, N sin^2)`` of the linear dark state, ``cos = J2 / sqrt(J1^2 + J2^2)``."""
    J1 = float(J1)
    J2 = float(J2)
    norm2 = J1 * J1 + J2 * J2
    if norm2 == 0.0:
        raise ValidationError("dark state undefined when both couplings vanish")
    c2 = J2 * J2 / norm2
    return N * c2, 0.0, N * (1.0 - c2)


def branch_deviation(traj: Trajectory, branch: SPBranch) -> np.ndarray:
    """Largest photon-number distance between a trajectory and the branch at each sample.

    The branch is interpolated in ``ttilde``; photon numbers are gauge invariant.
    """
    tt = traj.ttilde
    n_branch = np.column_stack([np.interp(tt, branch.ttilde, branch.photon_numbers[:, k])
                                for k in range(branch.n_cavities)])
    return np.max(np.abs(traj.photon_numbers - n_branch), axis=1)


def departure_ttilde(traj: Trajectory, branch: SPBranch, N, fraction=0.02) -> Optional[float]:
    """First ``ttilde`` where the trajectory leaves the branch by more than ``fraction * N`` photons."""
    dev = branch_deviation(traj, branch)
    idx = np.nonzero(dev > fraction * N)[0]
    return float(traj.ttilde[idx[0]]) if idx.size else None


def instantaneous_departure_ttilde(traj: Trajectory, branch: SPBranch, params: ChainParams,
                                   protocol: PulseProtocol, fraction=0.02) -> Optional[float]:
    """First ``ttilde`` where a lossy trajectory leaves the SSP of its current excitation.

    At each sample the closed-system stationary point is re-solved with
    ``N`` set to the sample's total excitation, continuing from the previous
    sample. A threshold of ``fraction * params.N`` photons then applies as in
    :func:`departure_ttilde`. Without loss this reduces to that function
    up to the branch interpolation error.
    """
    closed = replace(params, kappa=0.0, gamma=0.0)
    excitation = conserved_total(traj.states)
    n = traj.n_cavities
    x = None
    for k, tt in enumerate(traj.ttilde):
        p_k = replace(closed, N=float(excitation[k]))
        if x is None:
            x = branch.interpolate(tt)
            x[:n] *= np.sqrt(p_k.N / params.N)
        x = solve_sp(x, tt, p_k, protocol).unknowns
        if np.max(np.abs(traj.photon_numbers[k] - x[:n] ** 2)) > fraction * params.N:
            return float(tt)
    return None


def restart_from_branch(branch: SPBranch, ttilde, params, protocol) -> SemiclassicalState:
    """SSP state at ``ttilde`` for mid-protocol starts."""
    return ssp_at(branch, ttilde, params, protocol).to_state()
