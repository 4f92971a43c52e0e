"""Chain parameters, Gaussian pulse protocol and the semiclassical state.

Units: every frequency or rate is measured in units of the pulse amplitude
``K`` and every time in units of ``1/K``. The protocol coordinate is the
rescaled time ``ttilde = t / tau``.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .exceptions import ValidationError

# Pulse centers of the three-cavity protocol, in units of tau.
SOURCE_BOND_CENTER = 3.697
SECOND_BOND_CENTER = 2.4242
CENTER_GAP = SOURCE_BOND_CENTER - SECOND_BOND_CENTER

# Interior detuning that reproduces the reference stationary points.
REFERENCE_DETUNING = 0.5


def _as_tuple(values, n=None, dtype=float):
    if np.isscalar(values):
        if n is None:
            raise ValueError("scalar given where a sequence is required")
        return tuple(dtype(values) for _ in range(n))
    return tuple(dtype(v) for v in values)


@dataclass(frozen=True)
class ChainParams:
    """Static parameters of a linear chain of cavities.

    A single two-level qubit sits in the terminal cavity; ``g`` carries one
    coupling per cavity so that the invariant can be checked, but only the
    terminal entry enters the dynamics.
    """

    n_cavities: int = 3
    detuning: tuple = (0.0, 0.0, 0.0)
    g: tuple = (0.0, 0.0, 0.2)
    N: float = 20.0
    kappa: float = 0.0
    gamma: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "n_cavities", int(self.n_cavities))
        object.__setattr__(self, "detuning", _as_tuple(self.detuning, self.n_cavities))
        object.__setattr__(self, "g", _as_tuple(self.g, self.n_cavities))
        object.__setattr__(self, "N", float(self.N))
        object.__setattr__(self, "kappa", float(self.kappa))
        object.__setattr__(self, "gamma", float(self.gamma))

    @classmethod
    def chain(cls, n_cavities=3, g_terminal=0.2, delta=0.0, N=20.0, kappa=0.0, gamma=0.0):
        """Chain with resonant end cavities and every interior cavity detuned by ``delta``."""
        n = int(n_cavities)
        detuning = [0.0] + [float(delta)] * (n - 2) + [0.0]
        g = [0.0] * (n - 1) + [float(g_terminal)]
        return cls(n, tuple(detuning), tuple(g), N, kappa, gamma)

    @property
    def g_terminal(self) -> float:
        return self.g[-1]

    @property
    def hermitian(self) -> bool:
        return self.kappa == 0.0 and self.gamma == 0.0

    @property
    def state_size(self) -> int:
        return 2 * self.n_cavities + 3

    def linear(self) -> "ChainParams":
        """Copy with the light-matter coupling switched off."""
        return replace(self, g=(0.0,) * self.n_cavities)

    def with_g(self, g_terminal) -> "ChainParams":
        return replace(self, g=(0.0,) * (self.n_cavities - 1) + (float(g_terminal),))

    def to_dict(self):
        return {
            "n_cavities": self.n_cavities,
            "detuning": list(self.detuning),
            "g": list(self.g),
            "N": self.N,
            "kappa": self.kappa,
            "gamma": self.gamma,
        }


def default_centers(n_cavities: int) -> tuple:
    """Counter-intuitive pulse centers (in units of tau) for ``n_cavities``.

    The source bond peaks last at 3.697; each bond further down the chain
    peaks one gap (3.697 - 2.4242) earlier.
    """
    return tuple(round(SOURCE_BOND_CENTER - i * CENTER_GAP, 10) for i in range(n_cavities - 1))


@dataclass(frozen=True)
class PulseProtocol:
    """Gaussian tunnelling pulses ``J_i(t) = K exp(-((t - c_i tau) / tau)^2)``.

    ``centers[i]`` is the peak of bond ``i`` (between cavities ``i`` and
    ``i + 1``) in units of ``tau``.
    """

    tau: float = 1.0 / 0.0202
    centers: tuple = (SOURCE_BOND_CENTER, SECOND_BOND_CENTER)
    K: float = 1.0
    t_end_factor: Optional[float] = None
    counter_intuitive: bool = True

    def __post_init__(self):
        object.__setattr__(self, "tau", float(self.tau))
        object.__setattr__(self, "K", float(self.K))
        object.__setattr__(self, "centers", _as_tuple(self.centers))
        if self.t_end_factor is not None:
            object.__setattr__(self, "t_end_factor", float(self.t_end_factor))

    @classmethod
    def from_rate(cls, rate, n_cavities=3, **kwargs):
        kwargs.setdefault("centers", default_centers(n_cavities))
        return cls(tau=1.0 / float(rate), **kwargs)

    @property
    def rate(self) -> float:
        return 1.0 / self.tau

    @property
    def n_bonds(self) -> int:
        return len(self.centers)

    @property
    def ttilde_end(self) -> float:
        if self.t_end_factor is not None:
            return self.t_end_factor
        return max(self.centers) + 3.0

    @property
    def t_end(self) -> float:
        return self.ttilde_end * self.tau

    def with_rate(self, rate) -> "PulseProtocol":
        return replace(self, tau=1.0 / float(rate))

    def couplings(self, t) -> np.ndarray:
        """All bond couplings at time ``t`` (shape ``(n_bonds,)``)."""
        x = t / self.tau - np.asarray(self.centers)
        return self.K * np.exp(-x * x)

    def couplings_at_ttilde(self, ttilde) -> np.ndarray:
        return self.couplings(ttilde * self.tau)

    def to_dict(self):
        return {
            "K": self.K,
            "tau": self.tau,
            "centers": list(self.centers),
            "t_end_factor": self.t_end_factor,
            "counter_intuitive": self.counter_intuitive,
        }


@dataclass(frozen=True)
class SemiclassicalState:
    """Phase-space point: cavity amplitudes, qubit coherence and inversion.

    ``amps[i]`` is the mean field of cavity ``i`` (photon number
    ``|amps[i]|**2``), ``s`` the expectation of the qubit lowering operator
    and ``sz`` the inversion in ``[-1/2, 1/2]``.
    """

    amps: np.ndarray
    s: complex = 0j
    sz: float = -0.5

    def __post_init__(self):
        amps = np.array(self.amps, dtype=complex)
        amps.setflags(write=False)
        object.__setattr__(self, "amps", amps)
        object.__setattr__(self, "s", complex(self.s))
        object.__setattr__(self, "sz", float(self.sz))

    @classmethod
    def source_filled(cls, N, n_cavities=3):
        """All excitation in the source cavity, qubit in its ground state."""
        amps = np.zeros(n_cavities, dtype=complex)
        amps[0] = np.sqrt(N)
        return cls(amps, 0j, -0.5)

    @classmethod
    def from_vector(cls, y):
        y = np.asarray(y, dtype=float)
        n = (y.size - 3) // 2
        amps = y[: 2 * n : 2] + 1j * y[1 : 2 * n : 2]
        return cls(amps, complex(y[2 * n], y[2 * n + 1]), y[2 * n + 2])

    def to_vector(self) -> np.ndarray:
        n = self.amps.size
        y = np.empty(2 * n + 3)
        y[: 2 * n : 2] = self.amps.real
        y[1 : 2 * n : 2] = self.amps.imag
        y[2 * n] = self.s.real
        y[2 * n + 1] = self.s.imag
        y[2 * n + 2] = self.sz
        return y

    @property
    def n_cavities(self) -> int:
        return self.amps.size

    @property
    def photon_numbers(self) -> np.ndarray:
        return np.abs(self.amps) ** 2

    @property
    def spin_length_sq(self) -> float:
        return abs(self.s) ** 2 + self.sz**2

    def total_excitation(self) -> float:
        return float(np.sum(self.photon_numbers) + self.sz + 0.5)

    def check(self, tol=1e-8) -> list:
        """Invariant violations of this state (empty when none)."""
        problems = []
        y = self.to_vector()
        if not np.all(np.isfinite(y)):
            problems.append("state has non-finite components")
            return problems
        if self.total_excitation() < -tol:
            problems.append("total excitation is negative")
        if self.spin_length_sq > 0.25 + tol:
            problems.append("|s|^2 + sz^2 <= 1/4 violated")
        return problems


def pulse_value(protocol: PulseProtocol, bond: int, t: float) -> float:
    """Tunnelling amplitude of ``bond`` at time ``t`` (units of K)."""
    if not 0 <= bond < protocol.n_bonds:
        raise IndexError(f"bond index {bond} outside [0, {protocol.n_bonds})")
    x = (t - protocol.centers[bond] * protocol.tau) / protocol.tau
    return protocol.K * float(np.exp(-x * x))


def mixing_angle(protocol: PulseProtocol, t: float) -> float:
    """Dark-state mixing angle, ``cos(theta) = J2 / sqrt(J1^2 + J2^2)``.

    Defined for the three-cavity protocol only. Raises ``ValueError`` when
    both pulses have underflowed to zero.
    """
    if protocol.n_bonds != 2:
        raise ValueError("mixing angle is defined for the three-cavity protocol")
    j1 = pulse_value(protocol, 0, t)
    j2 = pulse_value(protocol, 1, t)
    if j1 == 0.0 and j2 == 0.0:
        raise ValueError(f"mixing angle undefined at t = {t}: both couplings vanish")
    return float(np.arctan2(j1, j2))


def validate(params: ChainParams, protocol: Optional[PulseProtocol] = None) -> list:
    """Return every invariant violation as a message naming the field.

    An empty list means the configuration is valid.
    """
    diag = []
    n = params.n_cavities
    if n < 3:
        diag.append("n_cavities >= 3 violated")
    if len(params.detuning) != n:
        diag.append(f"detuning length {len(params.detuning)} != n_cavities {n}")
    if len(params.g) != n:
        diag.append(f"g length {len(params.g)} != n_cavities {n}")
    elif any(v != 0.0 for v in params.g[:-1]):
        diag.append("g must vanish except at the terminal cavity (single terminal qubit)")
    if not params.N > 0:
        diag.append("N > 0 violated")
    if not params.kappa >= 0:
        diag.append("kappa >= 0 violated")
    if not params.gamma >= 0:
        diag.append("gamma >= 0 violated")
    values = [params.N, params.kappa, params.gamma, *params.detuning, *params.g]
    if not all(np.isfinite(values)):
        diag.append("params contain non-finite values")

    if protocol is not None:
        if not protocol.tau > 0:
            diag.append("tau > 0 violated")
        if not protocol.K > 0:
            diag.append("K > 0 violated")
        if len(protocol.centers) != n - 1:
            diag.append(f"centers length {len(protocol.centers)} != n_cavities - 1 = {n - 1}")
        if not all(np.isfinite(protocol.centers)):
            diag.append("centers contain non-finite values")
        elif protocol.counter_intuitive and np.any(np.diff(protocol.centers) >= 0):
            diag.append("centers must be strictly decreasing from source bond (counter-intuitive order)")
        if protocol.t_end_factor is not None and not protocol.t_end_factor > 0:
            diag.append("t_end_factor > 0 violated")
    return diag


def check_valid(params, protocol=None):
    diag = validate(params, protocol)
    if diag:
        raise ValidationError(diag)


def reference_three_cavity(g_c=0.2, rate=0.0202, delta=REFERENCE_DETUNING, N=20.0, kappa=0.0, gamma=0.0):
    """Three-cavity chain and protocol with the reference pulse centers."""
    params = ChainParams.chain(3, g_c, delta, N, kappa, gamma)
    protocol = PulseProtocol(tau=1.0 / rate, centers=(SOURCE_BOND_CENTER, SECOND_BOND_CENTER))
    return params, protocol


def reference_four_cavity(g_d=0.2, rate=0.0101, delta=REFERENCE_DETUNING, N=20.0):
    params = ChainParams.chain(4, g_d, delta, N)
    protocol = PulseProtocol.from_rate(rate, n_cavities=4)
    return params, protocol
