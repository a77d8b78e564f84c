"""Finite-difference 1D wave equations with switched (delayed) damping.

Both problems are diagonalized exactly at the semi-discrete level and then
handed to the modal integrator, so the delay and breakpoint handling is shared.

* internal:  u_tt - u_xx + b1 chi_w1 u_t + b2 chi_w2 u_t(t - tau) = 0, u = 0 at both ends.
* boundary:  u_tt - u_xx + b2 chi_w u_t(t - tau) = 0, u(0) = 0, u_x(L) = -b1 u_t(L).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import eigh

from .errors import CFLError, ConfigurationError
from .modal import ModalState, ModalSystem, Trace, simulate
from .schedule import FeedbackProfile, SwitchingSchedule


@dataclass(frozen=True)
class Grid1D:
    L: float
    J: int

    def __post_init__(self):
        if self.J < 3 or not self.L > 0:
            raise ConfigurationError("need J >= 3 interior nodes and L > 0")

    @property
    def h(self) -> float:
        return self.L / (self.J + 1)

    @property
    def x(self) -> np.ndarray:
        """Interior nodes ``x_1 .. x_J``."""
        return self.h * np.arange(1, self.J + 1)


@dataclass(frozen=True)
class DampingRegion:
    """Nodes ``first..last`` (1-based, inclusive) carrying a damping term."""

    first: int
    last: int

    @classmethod
    def from_interval(cls, grid: Grid1D, a: float, b: float, n_nodes: int | None = None) -> "DampingRegion":
        """Nodes with ``a <= x_j <= b`` (``x_j`` up to ``x_{n_nodes}``)."""
        n = grid.J if n_nodes is None else n_nodes
        x = grid.h * np.arange(1, n + 1)
        idx = np.nonzero((x >= a - 1e-12) & (x <= b + 1e-12))[0]
        if idx.size == 0:
            raise ConfigurationError(f"region [{a}, {b}] contains no grid nodes")
        return cls(int(idx[0]) + 1, int(idx[-1]) + 1)

    @classmethod
    def whole(cls, grid: Grid1D) -> "DampingRegion":
        return cls(1, grid.J)

    def mask(self, n_nodes: int) -> np.ndarray:
        if not 1 <= self.first <= self.last <= n_nodes:
            raise ConfigurationError(f"region {self.first}..{self.last} outside nodes 1..{n_nodes}")
        m = np.zeros(n_nodes)
        m[self.first - 1 : self.last] = 1.0
        return m


@dataclass
class WaveState:
    t: float
    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        self.u = np.array(self.u, dtype=float)
        self.v = np.array(self.v, dtype=float)
        if self.u.shape != self.v.shape:
            raise ConfigurationError("u and v must have the same shape")


@dataclass(frozen=True)
class WaveSystem:
    """Semi-discrete wave operator with mass ``M`` (diagonal), stiffness ``K`` and its eigenbasis."""

    grid: Grid1D
    kind: str
    mass: np.ndarray
    stiffness: np.ndarray
    phi: np.ndarray  # columns are M-orthonormal eigenvectors
    modal: ModalSystem

    @property
    def n_nodes(self) -> int:
        return self.mass.size

    def to_modal(self, state: WaveState) -> ModalState:
        if state.u.shape != (self.n_nodes,):
            raise ConfigurationError(f"nodal data must have {self.n_nodes} entries")
        return ModalState(state.t, self.phi.T @ (self.mass * state.u), self.phi.T @ (self.mass * state.v))

    def to_nodal(self, state: ModalState) -> WaveState:
        return WaveState(state.t, self.phi @ state.a, self.phi @ state.adot)

    def energy(self, state: WaveState) -> float:
        """``0.5 * (v'Mv + u'Ku)``: the discrete kinetic plus gradient energy."""
        return float(0.5 * (state.v @ (self.mass * state.v) + state.u @ (self.stiffness @ state.u)))


def _stiffness(n: int, h: float, free_end: bool) -> np.ndarray:
    K = (2.0 * np.eye(n) - np.eye(n, k=1) - np.eye(n, k=-1)) / h
    if free_end:
        K[-1, -1] = 1.0 / h
    return K


def internal_system(grid: Grid1D, omega1: DampingRegion, omega2: DampingRegion | None = None) -> WaveSystem:
    """Dirichlet problem; damping on ``omega1`` (undelayed) and ``omega2`` (delayed)."""
    omega2 = omega1 if omega2 is None else omega2
    J, h = grid.J, grid.h
    k = np.arange(1, J + 1)
    lam = (4.0 / h**2) * np.sin(k * np.pi / (2 * (J + 1))) ** 2
    phi = np.sqrt(2.0 / grid.L) * np.sin(np.outer(np.arange(1, J + 1), k) * np.pi / (J + 1))
    m1, m2 = omega1.mask(J), omega2.mask(J)
    D1 = h * (phi.T * m1) @ phi
    D2 = D1 if omega2 == omega1 else h * (phi.T * m2) @ phi
    modal = ModalSystem(lam, D1, D2, D1, None if omega2 == omega1 else D2)
    return WaveSystem(grid, "internal", np.full(J, h), _stiffness(J, h, False), phi, modal)


def boundary_system(grid: Grid1D, omega: DampingRegion) -> WaveSystem:
    """Dirichlet at 0, damped Neumann at ``L`` (node ``J+1``, half cell); delay on ``omega``."""
    n, h = grid.J + 1, grid.h
    mass = np.full(n, h)
    mass[-1] = 0.5 * h
    K = _stiffness(n, h, True)
    isq = 1.0 / np.sqrt(mass)
    lam, Y = eigh(isq[:, None] * K * isq[None, :])
    phi = isq[:, None] * Y
    mw = omega.mask(n)
    D1 = np.outer(phi[-1], phi[-1])
    D2 = (phi.T * (mass * mw)) @ phi
    modal = ModalSystem(lam, D1, D2, D2)
    return WaveSystem(grid, "boundary", mass, K, phi, modal)


def mode_sum(system: WaveSystem, coeffs) -> np.ndarray:
    """Nodal values of ``sum_k c_k sin(k pi x / L)`` (quarter-wave sines for the free end)."""
    c = np.atleast_1d(np.asarray(coeffs, dtype=float))
    x = system.grid.h * np.arange(1, system.n_nodes + 1)
    k = np.arange(1, c.size + 1)
    if system.kind == "boundary":
        arg = np.outer(x, k - 0.5) * np.pi / system.grid.L
    else:
        arg = np.outer(x, k) * np.pi / system.grid.L
    return np.sin(arg) @ c


def cfl_check(grid: Grid1D, dt: float) -> bool:
    """True iff ``dt <= h`` (unit wave speed)."""
    return dt <= grid.h * (1 + 1e-12)


def wave_energy(state: WaveState, system: WaveSystem) -> float:
    return system.energy(state)


def _run(system: WaveSystem, schedule, profile, initial: WaveState, dt, **kw) -> Trace:
    if not cfl_check(system.grid, dt):
        raise CFLError(f"dt={dt} exceeds h={system.grid.h}")
    tr = simulate(system.modal, schedule, profile, system.to_modal(initial), dt, **kw)
    tr.meta["wave_system"] = system
    return tr


def simulate_internal(
    grid: Grid1D,
    schedule: SwitchingSchedule,
    profile: FeedbackProfile,
    omega1: DampingRegion,
    omega2: DampingRegion,
    initial: WaveState,
    dt: float,
    **kw,
) -> Trace:
    """Internal-feedback wave on ``(0, L)``; energies in the trace are the discrete ones."""
    return _run(internal_system(grid, omega1, omega2), schedule, profile, initial, dt, **kw)


def simulate_boundary(
    grid: Grid1D,
    schedule: SwitchingSchedule,
    profile: FeedbackProfile,
    omega: DampingRegion,
    initial: WaveState,
    dt: float,
    **kw,
) -> Trace:
    """Boundary-damped wave with internal delayed feedback on ``omega``."""
    return _run(boundary_system(grid, omega), schedule, profile, initial, dt, **kw)
