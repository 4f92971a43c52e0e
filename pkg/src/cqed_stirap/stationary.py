"""Stationary points of the frozen-protocol equations and branch continuation.

At resonance every phase can be gauged to 0 or pi, so a stationary point is
described by real unknowns ``x = [a_1, ..., a_n, s, sz, mu]`` where ``mu`` is
the chemical potential enforcing the excitation constraint. The residual has
one row per cavity, one for the qubit coherence, the conservation constraint
and the spin-length constraint.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .exceptions import BranchLostError, ConvergenceError, SingularJacobianError
from .model import ChainParams, PulseProtocol, SemiclassicalState

CONDITION_LIMIT = 1e13
MIN_DAMPING = 2.0 ** -20
NEGLIGIBLE_FRACTION = 0.02
TERMINAL_FRACTION = 0.99


@dataclass(frozen=True)
class SPSolution:
    """A converged stationary point at protocol coordinate ``ttilde``.

    ``values`` holds the real reduced coordinates ``[a_1..a_n, s, sz]``.
    """

    values: np.ndarray
    mu: float
    ttilde: float
    residual_norm: float = np.nan

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def from_unknowns(cls, x, ttilde, residual_norm=np.nan):
        x = np.asarray(x, dtype=float)
        return cls(x[:-1], float(x[-1]), float(ttilde), float(residual_norm))

    @classmethod
    def from_state(cls, state: SemiclassicalState, mu=0.0, ttilde=0.0):
        """Gauge-rotate a complex state so the source amplitude is real and non-negative."""
        phase = np.angle(state.amps[0]) if abs(state.amps[0]) > 0 else 0.0
        rot = np.exp(-1j * phase)
        amps = (state.amps * rot).real
        s = (state.s * rot).real
        return cls(np.concatenate([amps, [s, state.sz]]), float(mu), float(ttilde))

    @property
    def n_cavities(self):
        return self.values.size - 2

    @property
    def unknowns(self):
        return np.append(self.values, self.mu)

    @property
    def amps(self):
        return self.values[:-2]

    @property
    def s(self):
        return float(self.values[-2])

    @property
    def sz(self):
        return float(self.values[-1])

    @property
    def photon_numbers(self):
        return self.amps ** 2

    def conserved_total(self):
        return float(np.sum(self.photon_numbers) + self.sz + 0.5)

    def to_state(self) -> SemiclassicalState:
        return SemiclassicalState(self.amps.astype(complex), complex(self.s), self.sz)


def _unknowns(candidate):
    if isinstance(candidate, SPSolution):
        return candidate.unknowns
    if isinstance(candidate, SemiclassicalState):
        return SPSolution.from_state(candidate).unknowns
    return np.asarray(candidate, dtype=float)


def sp_residual(candidate, ttilde, params: ChainParams, protocol: PulseProtocol, couplings=None):
    """Residual vector of the stationary-point system (length ``n_cavities + 3``).

    For three cavities the rows are ``J1 b + mu a``, ``D b - J1 a - J2 c - mu b``,
    ``J2 b - g s + mu c``, ``2 g c sz + mu s``, the conservation constraint
    and ``s^2 + sz^2 - 1/4``. With ``g = 0`` the decoupled qubit is pinned by
    replacing its row with ``s``.
    """
    x = _unknowns(candidate)
    n = params.n_cavities
    a = x[:n]
    s, sz, mu = x[n], x[n + 1], x[n + 2]
    J = protocol.couplings_at_ttilde(ttilde) if couplings is None else np.asarray(couplings)
    det = np.asarray(params.detuning)
    g = params.g[-1]

    # stationary amplitude equations written as J-neighbours + (mu - D) a
    hop = np.zeros(n)
    hop[:-1] += J * a[1:]
    hop[1:] += J * a[:-1]
    amp_rows = hop + (mu - det) * a
    amp_rows[-1] -= g * s
    amp_rows[1:-1] *= -1.0

    r = np.empty(n + 3)
    r[:n] = amp_rows
    r[n] = 2.0 * g * a[-1] * sz + mu * s if g != 0.0 else s
    r[n + 1] = np.dot(a, a) + sz + 0.5 - params.N
    r[n + 2] = s * s + sz * sz - 0.25
    return r


def _jacobian(fun, z):
    """Central-difference Jacobian of ``fun`` at ``z``."""
    f0 = fun(z)
    jac = np.empty((f0.size, z.size))
    for k in range(z.size):
        h = 1e-6 * max(1.0, abs(z[k]))
        zp = z.copy()
        zm = z.copy()
        zp[k] += h
        zm[k] -= h
        jac[:, k] = (fun(zp) - fun(zm)) / (2.0 * h)
    return jac


def _tolerance(params):
    return max(1e-10 * params.N, 1e-13)


def solve_sp(guess, ttilde, params: ChainParams, protocol: PulseProtocol, max_iter=50,
             tol=None) -> SPSolution:
    """Damped Newton iteration on :func:`sp_residual` from ``guess``.

    The Jacobian is built by central differences; steps are halved while the
    residual 2-norm fails to decrease (down to ``2**-20``). Converges when the
    residual max-norm drops below ``1e-10 * N``.
    """
    tol = _tolerance(params) if tol is None else tol
    J = protocol.couplings_at_ttilde(ttilde)
    fun = lambda z: sp_residual(z, ttilde, params, protocol, couplings=J)  # noqa: E731
    x = _unknowns(guess).astype(float).copy()
    if not np.all(np.isfinite(x)):
        raise ConvergenceError("non-finite guess")
    r = fun(x)
    for _ in range(max_iter):
        rmax = np.max(np.abs(r))
        if rmax < tol:
            return SPSolution.from_unknowns(x, ttilde, rmax)
        jac = _jacobian(fun, x)
        cond = np.linalg.cond(jac)
        if not np.isfinite(cond) or cond > CONDITION_LIMIT:
            raise SingularJacobianError(f"singular Jacobian at t~ = {ttilde:.6g}", cond)
        dx = np.linalg.solve(jac, -r)
        norm0 = np.linalg.norm(r)
        alpha = 1.0
        while alpha >= MIN_DAMPING:
            x_try = x + alpha * dx
            r_try = fun(x_try)
            if np.linalg.norm(r_try) < norm0:
                break
            alpha *= 0.5
        else:
            raise ConvergenceError(f"line search stalled at t~ = {ttilde:.6g}", rmax)
        x, r = x_try, r_try
    rmax = np.max(np.abs(r))
    if rmax < tol:
        return SPSolution.from_unknowns(x, ttilde, rmax)
    raise ConvergenceError(f"no convergence in {max_iter} iterations at t~ = {ttilde:.6g}", rmax)


def state_distance(u, v, N):
    """Distance between reduced SP coordinates with amplitudes scaled by ``1/sqrt(N)``."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    w = np.ones(u.size)
    w[:-2] = 1.0 / np.sqrt(N)
    return float(np.linalg.norm(w * (u - v)))


@dataclass
class SPBranch:
    """Stationary points continued over a grid of ``ttilde``."""

    ttilde: np.ndarray
    values: np.ndarray
    mu: np.ndarray
    residual_norm: np.ndarray
    step_distance: np.ndarray
    label: str = "branch"
    ssp_ok: Optional[bool] = None
    intermediate_ok: Optional[bool] = None
    diagnostics: list = field(default_factory=list)
    events: list = field(default_factory=list)

    @property
    def continuity(self) -> float:
        return float(np.max(self.step_distance)) if self.step_distance.size else 0.0

    @property
    def n_cavities(self):
        return self.values.shape[1] - 2

    @property
    def photon_numbers(self):
        return self.values[:, :-2] ** 2

    @property
    def s(self):
        return self.values[:, -2]

    @property
    def sz(self):
        return self.values[:, -1]

    def __len__(self):
        return self.ttilde.size

    def __getitem__(self, i) -> SPSolution:
        return SPSolution(self.values[i], self.mu[i], self.ttilde[i], self.residual_norm[i])

    def solution_at(self, ttilde) -> SPSolution:
        i = int(np.argmin(np.abs(self.ttilde - ttilde)))
        if not np.isclose(self.ttilde[i], ttilde, rtol=0, atol=1e-12):
            raise KeyError(f"t~ = {ttilde} is not a grid point of this branch")
        return self[i]

    def interpolate(self, ttilde):
        """Linear interpolation of ``[a.., s, sz, mu]`` at arbitrary ``ttilde``."""
        tt = np.atleast_1d(np.asarray(ttilde, dtype=float))
        cols = np.column_stack([self.values, self.mu])
        out = np.column_stack([np.interp(tt, self.ttilde, cols[:, k]) for k in range(cols.shape[1])])
        return out[0] if np.ndim(ttilde) == 0 else out

    def to_csv(self, path):
        """Write ``ttilde, n_1..n_k, s, sz, mu, residual_norm, continuity``."""
        n = self.n_cavities
        header = ["ttilde"] + [f"n_{i + 1}" for i in range(n)] + ["s", "sz", "mu", "residual_norm",
                                                                    "continuity"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            rows = np.column_stack([self.ttilde, self.photon_numbers, self.s, self.sz, self.mu,
                                    self.residual_norm, self.step_distance])
            for row in rows:
                w.writerow([repr(float(v)) for v in row])


def _arclength_to(x_k, t_k, t_prev_x, target, params, protocol, ds, max_steps=2000):
    """Pseudo-arclength continuation in ``(x, ttilde)`` from ``t_k`` until ``ttilde >= target``.

    Returns the last two accepted points bracketing ``target``; raises
    ``BranchLostError`` when the branch turns back (fold) or stalls.
    """
    tol = _tolerance(params)

    def F(z):
        return sp_residual(z[:-1], z[-1], params, protocol)

    z = np.append(x_k, t_k)
    secant = None if t_prev_x is None else z - t_prev_x
    for _ in range(max_steps):
        jz = _jacobian(F, z)
        _, _, vt = np.linalg.svd(jz)
        tangent = vt[-1]
        ref = secant if secant is not None else np.eye(z.size)[-1]
        if np.dot(tangent, ref) < 0:
            tangent = -tangent
        if tangent[-1] <= 0:
            raise BranchLostError("fold: branch turns back in t~", t_k)
        accepted = False
        while ds > 1e-7:
            z_pred = z + ds * tangent

            def G(w):
                return np.append(F(w), np.dot(tangent, w - z) - ds)

            w = z_pred.copy()
            for _ in range(30):
                rg = G(w)
                if np.max(np.abs(rg)) < tol:
                    accepted = True
                    break
                jg = _jacobian(G, w)
                try:
                    w = w + np.linalg.solve(jg, -rg)
                except np.linalg.LinAlgError:
                    break
                if not np.all(np.isfinite(w)):
                    break
            if accepted:
                break
            ds *= 0.5
        if not accepted:
            raise BranchLostError("pseudo-arclength corrector failed", z[-1])
        if w[-1] <= z[-1]:
            raise BranchLostError("fold: branch turns back in t~", z[-1])
        if w[-1] >= target:
            return z, w
        secant = w - z
        z = w
        ds = min(ds * 1.5, 0.05)
    raise BranchLostError("pseudo-arclength did not reach the target", z[-1])


def diabatic_guess(x_last, ttilde, params: ChainParams, protocol: PulseProtocol):
    """Guess at ``ttilde`` keeping the terminal amplitude, qubit and ``mu`` of ``x_last``.

    The upstream amplitudes are re-solved from their (linear) stationary rows,
    which carries the branch across a narrow avoided crossing where the
    upstream cavities pass through resonance with ``mu``.
    """
    x = np.array(x_last, dtype=float)
    n = params.n_cavities
    mu = x[-1]
    J = protocol.couplings_at_ttilde(ttilde)
    det = np.asarray(params.detuning)
    m = n - 1
    M = np.diag(mu - det[:m])
    if m > 1:
        M += np.diag(J[: m - 1], 1) + np.diag(J[: m - 1], -1)
    rhs = np.zeros(m)
    rhs[-1] = -J[m - 1] * x[n - 1]
    a_up = np.linalg.lstsq(M, rhs, rcond=None)[0]
    budget = max(params.N - 0.5 - x[n + 1] - x[n - 1] ** 2, 0.0)
    norm2 = float(np.dot(a_up, a_up))
    if norm2 > budget > 0:
        a_up *= np.sqrt(budget / norm2)
    x[:m] = a_up
    return x


def _slow_distance(u, v, N):
    # terminal amplitude, qubit coherence and inversion only
    return float(np.linalg.norm([(u[-3] - v[-3]) / np.sqrt(N), u[-2] - v[-2], u[-1] - v[-1]]))


def continue_branch(seed: SPSolution, ttilde_grid, params: ChainParams, protocol: PulseProtocol,
                    trust=0.05, min_step=1e-4, max_jump=0.25, label="branch") -> SPBranch:
    """Follow the stationary point ``seed`` across ``ttilde_grid``.

    Predictor: linear extrapolation of the last two accepted points.
    Corrector: :func:`solve_sp`. A step is refined by halving (down to
    ``min_step``) when the corrector fails or lands farther than ``trust``
    from the prediction; below the floor a pseudo-arclength corrector takes
    over. When the branch folds away at a narrow avoided crossing, the
    continuation re-solves from :func:`diabatic_guess` at the next grid points
    (up to ``max_jump`` ahead); the jump is recorded in ``events`` and shows
    up as a spike in ``step_distance``. The grid must start at ``seed.ttilde``.
    """
    grid = np.asarray(ttilde_grid, dtype=float)
    if grid.size == 0 or np.any(np.diff(grid) <= 0):
        raise ValueError("ttilde_grid must be non-empty and strictly increasing")
    if not np.isclose(grid[0], seed.ttilde, rtol=0, atol=1e-12):
        raise ValueError("ttilde_grid must start at the seed's ttilde")
    N = params.N
    xs = [seed.unknowns]
    ts = [float(seed.ttilde)]
    out_x = [seed.unknowns]
    events = []

    def partial():
        return _assemble(grid[:len(out_x)], out_x, params, protocol, label, events)

    h = grid[1] - grid[0] if grid.size > 1 else 0.0
    k = 1
    while k < grid.size:
        target = grid[k]
        while ts[-1] < target - 1e-14:
            step = min(h, target - ts[-1])
            t_new = ts[-1] + step
            if t_new > target - 0.01 * min_step:
                t_new = target
                step = target - ts[-1]
            if len(xs) >= 2:
                x_pred = xs[-1] + (xs[-1] - xs[-2]) * (step / (ts[-1] - ts[-2]))
            else:
                x_pred = xs[-1]
            try:
                sol = solve_sp(x_pred, t_new, params, protocol)
                if state_distance(sol.values, x_pred[:-1], N) > trust:
                    sol = None
            except ConvergenceError:
                sol = None
            if sol is not None:
                xs.append(sol.unknowns)
                ts.append(t_new)
                h = min(2.0 * step, grid[1] - grid[0])
                continue
            if step / 2 >= min_step:
                h = step / 2
                continue
            try:
                prev = np.append(xs[-2], ts[-2]) if len(xs) >= 2 else None
                z0, z1 = _arclength_to(xs[-1], ts[-1], prev, target, params, protocol, ds=min_step)
                frac = (target - z0[-1]) / (z1[-1] - z0[-1])
                guess = z0[:-1] + frac * (z1[:-1] - z0[:-1])
                sol = solve_sp(guess, target, params, protocol)
            except (BranchLostError, ConvergenceError) as exc:
                landed = _jump(xs[-1], grid, k, params, protocol, trust, max_jump)
                if landed is None:
                    last = exc.last_ttilde if isinstance(exc, BranchLostError) else ts[-1]
                    raise BranchLostError("branch lost", last, partial()) from exc
                events.append((float(ts[-1]), float(grid[k + len(landed) - 1]), "diabatic jump"))
                out_x.extend(landed[:-1])
                k += len(landed) - 1
                target = grid[k]
                sol = SPSolution.from_unknowns(landed[-1], target)
                xs, ts = [], []
            xs.append(sol.unknowns)
            ts.append(target)
        out_x.append(xs[-1])
        k += 1
    return partial()


def _assemble(grid, out_x, params, protocol, label, events):
    X = np.array(out_x)
    res = np.array([np.max(np.abs(sp_residual(x, t, params, protocol))) for x, t in zip(X, grid)])
    dist = np.zeros(len(X))
    for i in range(1, len(X)):
        dist[i] = state_distance(X[i, :-1], X[i - 1, :-1], params.N)
    return SPBranch(np.array(grid), X[:, :-1].copy(), X[:, -1].copy(), res, dist, label,
                    events=list(events))


def _jump(x_last, grid, k, params, protocol, trust, max_jump):
    """Land past a fold with the diabatic guess, then back-fill the skipped grid points.

    Returns the unknowns at ``grid[k], ..., grid[k + m]`` or ``None``.
    """
    t0 = grid[k - 1]
    for j in range(k, grid.size):
        if grid[j] - t0 > max_jump:
            return None
        try:
            sol = solve_sp(diabatic_guess(x_last, grid[j], params, protocol), grid[j], params, protocol)
        except ConvergenceError:
            continue
        if _slow_distance(sol.unknowns[:-1], x_last[:-1], params.N) > trust:
            continue
        filled = [sol.unknowns]
        try:
            for i in range(j - 1, k - 1, -1):
                filled.append(_walk(filled[-1], grid[i + 1], grid[i], params, protocol))
        except ConvergenceError:
            continue
        return filled[::-1]
    return None


def _walk(x, t_from, t_to, params, protocol, min_step=1e-5):
    """Natural continuation from ``t_from`` to ``t_to`` with step halving (either direction)."""
    t = t_from
    h = t_to - t_from
    while t != t_to:
        step = h if abs(h) < abs(t_to - t) else t_to - t
        try:
            x = solve_sp(x, t + step, params, protocol).unknowns
        except ConvergenceError:
            if abs(step) / 2 < min_step:
                raise
            h = step / 2
            continue
        t = t_to if step == t_to - t else t + step
        h = 2 * step
    return x


def source_seed(params: ChainParams) -> np.ndarray:
    """Unknowns with all excitation in the source cavity and the qubit in its ground state."""
    x = np.zeros(params.n_cavities + 3)
    x[0] = np.sqrt(params.N)
    x[params.n_cavities + 1] = -0.5
    return x


def default_grid(protocol: PulseProtocol, spacing=0.01):
    """Multiples of ``spacing`` from 0, closed by ``ttilde_end``."""
    return uniform_grid(0.0, protocol.ttilde_end, spacing)


def uniform_grid(start, stop, spacing):
    count = int(np.floor((stop - start) / spacing + 1e-9))
    grid = np.round(start + spacing * np.arange(count + 1), 12)
    if stop - grid[-1] > 1e-9 * spacing:
        grid = np.append(grid, stop)
    return grid


def ssp_at(branch: SPBranch, ttilde, params: ChainParams, protocol: PulseProtocol) -> SPSolution:
    """SSP at ``ttilde``: the branch point itself, or a short walk from the nearest earlier one."""
    i = int(np.searchsorted(branch.ttilde, ttilde + 1e-12)) - 1
    i = min(max(i, 0), len(branch) - 1)
    if np.isclose(branch.ttilde[i], ttilde, rtol=0, atol=1e-10):
        return branch[i]
    x = _walk(np.append(branch.values[i], branch.mu[i]), branch.ttilde[i], ttilde, params, protocol)
    return SPSolution.from_unknowns(x, ttilde, np.max(np.abs(sp_residual(x, ttilde, params, protocol))))


def ssp_checks(branch: SPBranch, params: ChainParams):
    """Return ``(terminal_ok, intermediate_ok, diagnostics)`` for a candidate SSP branch.

    Terminal: final terminal occupation above 0.99 of the photon excitation
    available, ``N - 1/2 - sz``. Intermediate: every interior cavity stays
    below ``0.02 N`` along the branch.
    """
    diag = []
    n_end = branch.photon_numbers[-1]
    available = params.N - 0.5 - branch.sz[-1]
    terminal_ok = bool(n_end[-1] > TERMINAL_FRACTION * available)
    if not terminal_ok:
        diag.append(f"terminal occupation {n_end[-1]:.4g} <= {TERMINAL_FRACTION} x available {available:.4g}")
    interior = branch.photon_numbers[:, 1:-1]
    peak = float(interior.max()) if interior.size else 0.0
    intermediate_ok = peak < NEGLIGIBLE_FRACTION * params.N
    if not intermediate_ok:
        diag.append(f"intermediate occupation reaches {peak:.4g} >= {NEGLIGIBLE_FRACTION} N")
    return terminal_ok, intermediate_ok, diag


def find_ssp(params: ChainParams, protocol: PulseProtocol, ttilde_grid=None, **kwargs) -> SPBranch:
    """Track the special stationary-point branch that moves the excitation from source to terminal.

    Seeds at ``{a_1 = sqrt(N), 0, ..., s = 0, sz = -1/2}`` at the first grid
    point and continues to the last. ``ssp_ok`` is False when the terminal
    transfer condition fails; a non-negligible intermediate occupation is
    reported in ``diagnostics`` and ``intermediate_ok`` without failing the flag.
    """
    grid = default_grid(protocol) if ttilde_grid is None else np.asarray(ttilde_grid, dtype=float)
    seed = solve_sp(source_seed(params), grid[0], params, protocol)
    branch = continue_branch(seed, grid, params, protocol, label="SSP", **kwargs)
    terminal_ok, intermediate_ok, branch.diagnostics = ssp_checks(branch, params)
    branch.ssp_ok = terminal_ok
    branch.intermediate_ok = intermediate_ok
    return branch


def multistart(ttilde, params: ChainParams, protocol: PulseProtocol, n_starts=200, seed=0,
               mu_range=2.0, dedupe=1e-6):
    """Stationary points reached from random constraint-satisfying guesses.

    Exploratory only: returns the distinct converged solutions found.
    """
    rng = np.random.default_rng(seed)
    n = params.n_cavities
    found = []
    for _ in range(n_starts):
        sz = rng.uniform(-0.5, 0.5)
        s = rng.choice([-1.0, 1.0]) * np.sqrt(0.25 - sz * sz)
        a = rng.normal(size=n)
        a *= np.sqrt(max(params.N - 0.5 - sz, 0.0)) / np.linalg.norm(a)
        x0 = np.concatenate([a, [s, sz, rng.uniform(-mu_range, mu_range)]])
        try:
            sol = solve_sp(x0, ttilde, params, protocol)
        except ConvergenceError:
            continue
        if all(np.linalg.norm(sol.unknowns - f.unknowns) > dedupe for f in found):
            found.append(sol)
    return found


def continue_detuning(solution: SPSolution, params: ChainParams, protocol: PulseProtocol, target_delta,
                      steps=50) -> SPSolution:
    """Carry a stationary point at fixed ``ttilde`` to another interior detuning.

    ``params`` must have one common interior detuning; it is moved linearly to
    ``target_delta`` in ``steps`` Newton-corrected increments.
    """
    interior = np.asarray(params.detuning[1:-1])
    if interior.size == 0 or np.ptp(interior) != 0.0:
        raise ValueError("continue_detuning needs one common interior detuning")
    x = solution.unknowns
    moved = params
    for d in np.linspace(interior[0], float(target_delta), int(steps) + 1)[1:]:
        moved = replace(params, detuning=(0.0,) + (float(d),) * interior.size + (0.0,))
        x = solve_sp(x, solution.ttilde, moved, protocol).unknowns
    residual = np.max(np.abs(sp_residual(x, solution.ttilde, moved, protocol)))
    return SPSolution.from_unknowns(x, solution.ttilde, residual)
