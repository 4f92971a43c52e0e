"""Exact propagation of the chain Hamiltonian in a truncated Fock space.

In the frame rotating at the end-cavity frequency::

    H = sum_j D_j n_j + g (c^dag s^- + c s^+) - sum_i J_i(t) (a_i^dag a_{i+1} + h.c.)

Basis states are occupation tuples ``(n_1, ..., n_k, q)`` with ``q`` the
qubit excitation. Two bases are supported: the fixed-excitation sector
(exact, excitation-conserving) and a product basis with a per-cavity cutoff
for coherent initial states. H is real, so ``psi = x + i y`` evolves as
``dx/dt = H y``, ``dy/dt = -H x``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from math import comb
from typing import Optional

import numpy as np
from numba import njit

from .dynamics import IntegratorOptions, Trajectory, _sample_times, run_dopri, write_csv
from .exceptions import NormDriftError, ValidationError
from .model import ChainParams, PulseProtocol, check_valid

DIMENSION_CAP = 10**6
NORM_DRIFT_LIMIT = 1e-6


def sector_dimension(n_cavities, M):
    """Weak compositions of ``M`` into ``n_cavities`` parts plus those of ``M - 1``."""
    if M < 0:
        return 0
    k = n_cavities
    return comb(M + k - 1, k - 1) + (comb(M + k - 2, k - 1) if M >= 1 else 0)


@dataclass(frozen=True)
class ExcitationBasis:
    """Ordered occupation tuples with index lookup.

    ``states[i] = (n_1, ..., n_k, q)``; ``M`` is the conserved excitation for
    a sector basis and ``None`` for a product basis, whose ``cutoffs`` bound
    each cavity.
    """

    n_cavities: int
    states: np.ndarray
    M: Optional[int] = None
    cutoffs: Optional[tuple] = None

    def __post_init__(self):
        states = np.ascontiguousarray(self.states, dtype=np.int64)
        states.setflags(write=False)
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "_lookup", {tuple(s): i for i, s in enumerate(states.tolist())})

    @property
    def dim(self) -> int:
        return self.states.shape[0]

    def __len__(self):
        return self.dim

    def index(self, occupation) -> int:
        return self._lookup[tuple(int(v) for v in occupation)]

    def __contains__(self, occupation):
        return tuple(int(v) for v in occupation) in self._lookup

    def occupation(self, i) -> tuple:
        return tuple(int(v) for v in self.states[i])

    def to_csv(self, path):
        """Dump ``index, n_1..n_k, q``."""
        header = ["index"] + [f"n_{i + 1}" for i in range(self.n_cavities)] + ["q"]
        write_csv(path, header, [(i, *row) for i, row in enumerate(self.states.tolist())])


def _compositions(total, parts):
    if parts == 1:
        yield (total,)
        return
    for first in range(total + 1):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


def build_basis(n_cavities, M, cap=DIMENSION_CAP) -> ExcitationBasis:
    """Sector with total excitation ``M``, in lexicographic order of ``(n_1, ..., n_k, q)``."""
    n_cavities = int(n_cavities)
    M = int(M)
    if M < 0:
        raise ValidationError("M >= 0 violated")
    if n_cavities < 1:
        raise ValidationError("n_cavities >= 1 violated")
    dim = sector_dimension(n_cavities, M)
    if dim > cap:
        raise ValidationError(f"sector dimension {dim} exceeds cap {cap}")
    states = [c + (0,) for c in _compositions(M, n_cavities)]
    if M >= 1:
        states += [c + (1,) for c in _compositions(M - 1, n_cavities)]
    states.sort()
    return ExcitationBasis(n_cavities, np.array(states, dtype=np.int64).reshape(-1, n_cavities + 1), M)


def default_cutoff(mean, tol=1e-8):
    """Smallest Fock cutoff whose Poisson tail beyond it is at most ``tol``."""
    mean = float(mean)
    p = np.exp(-mean)
    total = p
    n = 0
    while 1.0 - total > tol:
        n += 1
        p *= mean / n
        total += p
    return n


def build_product_basis(n_cavities, cutoffs, cap=DIMENSION_CAP) -> ExcitationBasis:
    """All ``(n_1, ..., n_k, q)`` with ``n_i <= cutoffs[i]``, lexicographic."""
    cutoffs = tuple(int(c) for c in (cutoffs if np.ndim(cutoffs) else [cutoffs] * n_cavities))
    if len(cutoffs) != n_cavities or min(cutoffs) < 0:
        raise ValidationError("one non-negative cutoff per cavity required")
    dim = 2 * int(np.prod([c + 1 for c in cutoffs]))
    if dim > cap:
        raise ValidationError(f"product dimension {dim} exceeds cap {cap}")
    ranges = [range(c + 1) for c in cutoffs] + [range(2)]
    states = np.array(list(itertools.product(*ranges)), dtype=np.int64)
    return ExcitationBasis(n_cavities, states, None, cutoffs)


@dataclass(frozen=True)
class SparseHamiltonian:
    """CSR structure of H with a term tag per nonzero.

    ``kind[k] = -1`` marks a static entry (detuning, qubit exchange);
    ``kind[k] = b`` an entry multiplied by ``-J_b(t)``.
    """

    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray
    kind: np.ndarray
    dim: int
    n_bonds: int


def build_hamiltonian(basis: ExcitationBasis, params: ChainParams) -> SparseHamiltonian:
    n = basis.n_cavities
    if n != params.n_cavities:
        raise ValidationError("basis and params disagree on the number of cavities")
    det = np.asarray(params.detuning)
    g = params.g[-1]
    rows, cols, vals, kinds = [], [], [], []
    for i, occ in enumerate(basis.states.tolist()):
        diag = float(np.dot(det, occ[:n]))
        if diag != 0.0:
            rows.append(i), cols.append(i), vals.append(diag), kinds.append(-1)
        # qubit exchange c^dag s^- : (n_c, 1) -> (n_c + 1, 0)
        if g != 0.0 and occ[n] == 1:
            new = list(occ)
            new[n - 1] += 1
            new[n] = 0
            if tuple(new) in basis:
                j = basis.index(new)
                amp = g * np.sqrt(new[n - 1])
                rows += [j, i]
                cols += [i, j]
                vals += [amp, amp]
                kinds += [-1, -1]
        # hop a_b^dag a_{b+1} across bond b, plus its conjugate
        for b in range(n - 1):
            if occ[b + 1] == 0:
                continue
            new = list(occ)
            new[b + 1] -= 1
            new[b] += 1
            if tuple(new) not in basis:
                continue
            j = basis.index(new)
            amp = np.sqrt(occ[b + 1] * new[b])
            rows += [j, i]
            cols += [i, j]
            vals += [amp, amp]
            kinds += [b, b]
    rows = np.array(rows, dtype=np.int64)
    cols = np.array(cols, dtype=np.int64)
    order = np.lexsort((cols, rows))
    rows, cols = rows[order], cols[order]
    vals = np.array(vals, dtype=float)[order]
    kinds = np.array(kinds, dtype=np.int64)[order]
    indptr = np.zeros(basis.dim + 1, dtype=np.int64)
    np.add.at(indptr, rows + 1, 1)
    indptr = np.cumsum(indptr)
    return SparseHamiltonian(indptr, cols, vals, kinds, basis.dim, n - 1)


@njit(cache=True)
def _couplings(t, pulse):
    # pulse = [K, tau, frozen, centers..., frozen values...]
    nb = (pulse.size - 3) // 2
    J = np.empty(nb)
    for b in range(nb):
        if pulse[2] != 0.0:
            J[b] = pulse[3 + nb + b]
        else:
            x = t / pulse[1] - pulse[3 + b]
            J[b] = pulse[0] * np.exp(-x * x)
    return J


@njit(cache=True)
def _matvec(indptr, indices, data, kind, J, v, out):
    for i in range(indptr.size - 1):
        acc = 0.0
        for k in range(indptr[i], indptr[i + 1]):
            c = data[k] if kind[k] < 0 else -J[kind[k]] * data[k]
            acc += c * v[indices[k]]
        out[i] = acc


@njit(cache=True)
def schrodinger_rhs(t, y, args, out):
    indptr, indices, data, kind, pulse = args
    d = y.size // 2
    J = _couplings(t, pulse)
    hx = np.empty(d)
    hy = np.empty(d)
    _matvec(indptr, indices, data, kind, J, y[:d], hx)
    _matvec(indptr, indices, data, kind, J, y[d:], hy)
    for i in range(d):
        out[i] = hy[i]
        out[d + i] = -hx[i]


def _pulse_vector(protocol: PulseProtocol, frozen_ttilde=None):
    nb = protocol.n_bonds
    v = np.zeros(3 + 2 * nb)
    v[0], v[1] = protocol.K, protocol.tau
    v[3:3 + nb] = protocol.centers
    if frozen_ttilde is not None:
        v[2] = 1.0
        v[3 + nb:] = protocol.couplings_at_ttilde(frozen_ttilde)
    return v


def apply_hamiltonian(psi, basis: ExcitationBasis, params: ChainParams, protocol: PulseProtocol, t,
                      hamiltonian: Optional[SparseHamiltonian] = None) -> np.ndarray:
    """``H(t) psi`` without forming a dense matrix."""
    psi = np.asarray(psi, dtype=complex)
    if psi.shape != (basis.dim,):
        raise ValidationError(f"psi has shape {psi.shape}, basis dimension is {basis.dim}")
    H = hamiltonian or build_hamiltonian(basis, params)
    J = _couplings(float(t), _pulse_vector(protocol))
    re = np.empty(basis.dim)
    im = np.empty(basis.dim)
    _matvec(H.indptr, H.indices, H.data, H.kind, J, np.ascontiguousarray(psi.real), re)
    _matvec(H.indptr, H.indices, H.data, H.kind, J, np.ascontiguousarray(psi.imag), im)
    return re + 1j * im


def fock_state(basis: ExcitationBasis, occupation) -> np.ndarray:
    psi = np.zeros(basis.dim, dtype=complex)
    psi[basis.index(occupation)] = 1.0
    return psi


def source_fock_state(basis: ExcitationBasis, N) -> np.ndarray:
    """``|N, 0, ..., 0> (x) |ground>``."""
    return fock_state(basis, (int(N),) + (0,) * basis.n_cavities)


def coherent_amplitudes(alpha, cutoff):
    """Fock amplitudes ``e^{-|a|^2/2} a^n / sqrt(n!)`` for ``n = 0..cutoff`` and the lost norm."""
    alpha = complex(alpha)
    amps = np.empty(cutoff + 1, dtype=complex)
    amps[0] = np.exp(-0.5 * abs(alpha) ** 2)
    for n in range(1, cutoff + 1):
        amps[n] = amps[n - 1] * alpha / np.sqrt(n)
    tail = max(1.0 - float(np.sum(np.abs(amps) ** 2)), 0.0)
    return amps, tail


def coherent_initial_state(alphas, cutoff=None, basis: Optional[ExcitationBasis] = None,
                           tol=1e-8):
    """Truncated product of coherent states with the qubit in its ground state.

    Returns ``(psi, basis)`` over a product basis (built with ``cutoff`` per
    cavity unless ``basis`` is given). Raises when any mode loses more than
    ``tol`` of its norm to the truncation.
    """
    alphas = np.atleast_1d(np.asarray(alphas, dtype=complex))
    k = alphas.size
    if basis is None:
        if cutoff is None:
            cutoff = default_cutoff(float(np.max(np.abs(alphas) ** 2)), tol)
        basis = build_product_basis(k, cutoff)
    cutoffs = basis.cutoffs
    if cutoffs is None:
        raise ValidationError("coherent states need a product basis")
    factors = []
    for a, c in zip(alphas, cutoffs):
        amps, tail = coherent_amplitudes(a, c)
        if tail > tol:
            raise ValidationError(f"cutoff {c} too small for |alpha|^2 = {abs(a) ** 2:g}: "
                                  f"truncation loses {tail:.2e}")
        factors.append(amps)
    psi = np.ones(basis.dim, dtype=complex)
    for m in range(k):
        psi *= factors[m][basis.states[:, m]]
    psi[basis.states[:, k] == 1] = 0.0
    psi /= np.linalg.norm(psi)
    return psi, basis


@dataclass
class QuantumSeries:
    """Expectation values along a quantum run."""

    times: np.ndarray
    tau: float
    n: np.ndarray
    sz: np.ndarray
    norm: np.ndarray
    final_state: Optional[np.ndarray] = None

    @property
    def ttilde(self):
        return self.times / self.tau

    @property
    def n_cavities(self):
        return self.n.shape[1]

    @property
    def total_excitation(self):
        return self.n.sum(axis=1) + self.sz + 0.5 * self.norm

    def to_csv(self, path):
        """Write ``t, ttilde, <n_1>..<n_k>, <sz>, norm``."""
        header = ["t", "ttilde"] + [f"n_{i + 1}" for i in range(self.n_cavities)] + ["sz", "norm"]
        write_csv(path, header, np.column_stack([self.times, self.ttilde, self.n, self.sz, self.norm]))


def expectations(psi, basis: ExcitationBasis):
    """``(<n_1..n_k>, <sz>, norm)`` of ``psi`` (unnormalised expectations)."""
    p = np.abs(psi) ** 2
    occ = basis.states
    n = p @ occ[:, :-1]
    sz = float(p @ (occ[:, -1] - 0.5))
    return n, sz, float(p.sum())


def propagate(psi0, basis: ExcitationBasis, params: ChainParams, protocol: PulseProtocol, t_span=None,
              options: Optional[IntegratorOptions] = None, frozen_ttilde=None) -> QuantumSeries:
    """Integrate the Schrodinger equation with the adaptive Dormand-Prince pair.

    Defaults: the full protocol span and ``rtol = 1e-10, atol = 1e-12``.
    Raises ``NormDriftError`` when the norm moves by more than ``1e-6``.
    """
    check_valid(params, protocol)
    options = options or IntegratorOptions(rtol=1e-10, atol=1e-12)
    psi0 = np.asarray(psi0, dtype=complex)
    if psi0.shape != (basis.dim,):
        raise ValidationError("psi0 does not match the basis")
    if abs(np.linalg.norm(psi0) - 1.0) > 1e-10:
        raise ValidationError("psi0 must be normalised")
    H = build_hamiltonian(basis, params)
    args = (H.indptr, H.indices, H.data, H.kind, _pulse_vector(protocol, frozen_ttilde))
    t0, t1 = (0.0, protocol.t_end) if t_span is None else (float(t_span[0]), float(t_span[1]))
    t_eval = _sample_times(t0, t1, options.sample_spacing * protocol.tau)
    max_step = options.max_step if options.max_step is not None else protocol.tau / 50.0
    y0 = np.concatenate([psi0.real, psi0.imag])
    y_end, ys, _ = run_dopri(schrodinger_rhs, args, y0, t0, t1, t_eval, options.rtol, options.atol, max_step)
    d = basis.dim
    amps = ys[:, :d] + 1j * ys[:, d:]
    prob = np.abs(amps) ** 2
    norm = prob.sum(axis=1)
    n = prob @ basis.states[:, :-1]
    sz = prob @ (basis.states[:, -1] - 0.5)
    drift = np.abs(norm - 1.0)
    if drift.max() > NORM_DRIFT_LIMIT:
        i = int(np.argmax(drift > NORM_DRIFT_LIMIT))
        raise NormDriftError(float(drift[i]), float(t_eval[i]))
    return QuantumSeries(t_eval, protocol.tau, n, sz, norm, y_end[:d] + 1j * y_end[d:])


@dataclass
class DeviationReport:
    """Quantum minus semiclassical photon numbers on the quantum time grid."""

    max_deviation: np.ndarray
    rms_deviation: np.ndarray
    final_T_difference: float
    final_terminal_difference: float
    onset_ttilde: Optional[float]
    threshold: float

    def to_dict(self):
        return {
            "max_deviation": self.max_deviation.tolist(),
            "rms_deviation": self.rms_deviation.tolist(),
            "final_T_difference": self.final_T_difference,
            "final_terminal_difference": self.final_terminal_difference,
            "onset_ttilde": self.onset_ttilde,
            "threshold": self.threshold,
        }


def compare_semiclassical(series: QuantumSeries, traj: Trajectory, threshold=None) -> DeviationReport:
    """Deviation of the quantum photon numbers from a semiclassical run.

    The semiclassical numbers are interpolated linearly onto the quantum times
    inside the common range. ``T`` is normalised by the initial source
    occupation of each run. ``onset_ttilde`` is the first time any photon
    number differs by more than ``threshold`` (default ``0.1 N``, with ``N``
    the initial total excitation of the semiclassical run).
    """
    lo = max(series.times[0], traj.times[0])
    hi = min(series.times[-1], traj.times[-1])
    if not hi > lo:
        raise ValidationError("quantum and semiclassical time ranges do not overlap")
    mask = (series.times >= lo) & (series.times <= hi)
    t = series.times[mask]
    nq = series.n[mask]
    nc = np.column_stack([np.interp(t, traj.times, traj.photon_numbers[:, k])
                          for k in range(series.n_cavities)])
    diff = nq - nc
    N = float(traj.conserved[0])
    threshold = 0.1 * N if threshold is None else float(threshold)
    over = np.nonzero(np.max(np.abs(diff), axis=1) > threshold)[0]
    onset = float(t[over[0]] / series.tau) if over.size else None
    Tq = series.n[-1, -1] / series.n[0, 0]
    Tc = traj.photon_numbers[-1, -1] / traj.photon_numbers[0, 0]
    return DeviationReport(
        max_deviation=np.max(np.abs(diff), axis=0),
        rms_deviation=np.sqrt(np.mean(diff**2, axis=0)),
        final_T_difference=float(Tq - Tc),
        final_terminal_difference=float(diff[-1, -1]),
        onset_ttilde=onset,
        threshold=threshold,
    )
