"""Observability constants of the conservative and the damped (delay-free) flows."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.polynomial import polynomial as P
from scipy.linalg import eigh
from scipy.optimize import linprog

from .errors import ConfigurationError, InsufficientDataError, UnobservableError
from .modal import ModalSystem, _Rotator, lawson_rk4

_NULL_TOL = 1e-12


@dataclass(frozen=True)
class Gramian:
    """``z' G z`` is the observed integral over ``[0, T]`` for initial data ``z = (a0, a1)``."""

    T: float
    G: np.ndarray

    def value(self, z) -> float:
        z = np.asarray(z, dtype=float)
        return float(z @ self.G @ z)


def _cos_int(g: np.ndarray, T: float) -> np.ndarray:
    """``int_0^T cos(g t) dt``."""
    return T * np.sinc(g * T / np.pi)


def _sin_int(g: np.ndarray, T: float) -> np.ndarray:
    """``int_0^T sin(g t) dt``."""
    return T * np.sin(0.5 * g * T) * np.sinc(g * T / (2 * np.pi))


def gramian(system: ModalSystem, T: float, W: np.ndarray | None = None) -> Gramian:
    """Closed-form Gramian of the conservative flow observed through ``W`` (default ``obsW``).

    Mode ``k`` has velocity ``-w_k sin(w_k t) a0_k + cos(w_k t) a1_k``; every
    product integral reduces to ``int cos`` and ``int sin`` at sum and
    difference frequencies.
    """
    if not T > 0:
        raise ConfigurationError("observation time must be positive")
    W = system.obsW if W is None else np.asarray(W, dtype=float)
    w = system.omega
    dif = w[:, None] - w[None, :]
    tot = w[:, None] + w[None, :]
    ss = 0.5 * (_cos_int(dif, T) - _cos_int(tot, T))
    cc = 0.5 * (_cos_int(dif, T) + _cos_int(tot, T))
    sc = 0.5 * (_sin_int(tot, T) + _sin_int(dif, T))  # sin(w_j t) cos(w_k t)
    G00 = W * np.outer(w, w) * ss
    G11 = W * cc
    G01 = -W * w[:, None] * sc
    G = np.block([[G00, G01], [G01.T, G11]])
    return Gramian(float(T), 0.5 * (G + G.T))


def _energy_weights(system: ModalSystem) -> np.ndarray:
    return 0.5 * np.concatenate([system.lam, np.ones(system.K)])


def observability_constant(system: ModalSystem, T: float) -> float:
    """Smallest ``c`` with ``E_S(0) <= c * int_0^T |w_t|_W^2`` on the truncated system."""
    G = gramian(system, T).G
    s = 1.0 / np.sqrt(_energy_weights(system))
    mu, V = np.linalg.eigh(s[:, None] * G * s[None, :])
    if mu[0] <= _NULL_TOL * max(mu[-1], 1e-300):
        z = s * V[:, 0]
        raise UnobservableError(f"Gramian is singular at T={T}", null_direction=z / np.linalg.norm(z))
    return float(1.0 / mu[0])


@dataclass(frozen=True)
class TruncationCheck:
    c: float
    c_half: float
    rel_change: float
    flagged: bool

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def truncation_check(system: ModalSystem, T: float, threshold: float = 0.05) -> TruncationCheck:
    """Compare ``c`` with the value on the first half of the modes; flag drifts above ``threshold``."""
    c = observability_constant(system, T)
    half = max(1, system.K // 2)
    c_half = observability_constant(system.truncate(half), T)
    rel = abs(c - c_half) / c
    return TruncationCheck(c, c_half, rel, bool(rel > threshold))


def _as_gain(b1) -> Callable[[np.ndarray], np.ndarray]:
    if callable(b1):
        return b1
    coeffs = np.atleast_1d(np.asarray(b1, dtype=float))
    return lambda t: P.polyval(t, coeffs)


def damped_sweep(
    system: ModalSystem,
    gain,
    T: float,
    Z0: np.ndarray,
    n_steps: int = 4096,
    weight=None,
    full: bool = True,
):
    """Propagate columns of ``Z0`` under ``a'' + lam a + gain(t) D1 a' = 0`` on ``[0, T]``.

    Returns the final states and the Simpson-accumulated integral of
    ``weight(t) * a'^T D1 a'`` (``weight`` defaults to ``gain``); as a full
    Gram matrix over the columns or as its diagonal.  ``gain`` may return one
    value per column.
    """
    if n_steps < 2 or n_steps % 2:
        raise ConfigurationError("n_steps must be even and >= 2")
    gain = _as_gain(gain)
    weight = gain if weight is None else _as_gain(weight)
    K = system.K
    Z0 = np.asarray(Z0, dtype=float)
    A, V = Z0[:K].copy(), Z0[K:].copy()
    h = T / n_steps
    rot = _Rotator(system.omega)
    D1 = system.D1

    def accumulate(t, V, wq):
        g = np.broadcast_to(weight(t), (V.shape[1],)) if np.ndim(weight(t)) else weight(t)
        DV = D1 @ V
        if full:
            return wq * (V.T @ (DV * g))
        return wq * np.sum(V * DV, axis=0) * g

    acc = accumulate(0.0, V, h / 3.0)
    for j in range(n_steps):
        t0 = j * h
        gs = [gain(t0), gain(t0 + 0.5 * h), gain(t0 + h)]

        def force(i, a, v, gs=gs):
            return -(D1 @ v) * gs[i]

        A, V = lawson_rk4(rot, A, V, h, force)
        wq = h / 3.0 * (1.0 if j == n_steps - 1 else (4.0 if j % 2 == 0 else 2.0))
        acc = acc + accumulate(t0 + h, V, wq)
    if full:
        acc = 0.5 * (acc + acc.T)
    return np.vstack([A, V]), acc


def damped_observability_constant(system: ModalSystem, b1, T: float, n_steps: int = 4096) -> float:
    """Smallest ``d`` with ``E_S(T) <= d * int_0^T b1 |D1^1/2 w_t|^2`` for the damped flow.

    ``b1`` is a constant, ascending polynomial coefficients in local time, or a callable.
    """
    if not T > 0:
        raise ConfigurationError("observation time must be positive")
    K2 = 2 * system.K
    Phi, Gd = damped_sweep(system, b1, T, np.eye(K2), n_steps)
    e = _energy_weights(system)
    Pm = Phi.T @ (e[:, None] * Phi)
    mu, V = np.linalg.eigh(Gd)
    if mu[-1] <= 0 or mu[0] <= _NULL_TOL * mu[-1]:
        raise UnobservableError("damped Gramian is singular", null_direction=V[:, 0])
    vals = eigh(Pm, Gd, eigvals_only=True)
    return float(vals[-1])


@dataclass
class AlphaFit:
    """Empirical quasi-observability constants; a lower estimate, not a proof."""

    alphas: tuple[float, float, float]
    T: float
    T_bar: float
    samples: int
    feasible: bool
    worst_sample: dict | None = None
    label: str = "EMPIRICAL"
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "alphas": list(self.alphas),
            "T": self.T,
            "T_bar": self.T_bar,
            "samples": self.samples,
            "feasible": self.feasible,
            "worst_sample": self.worst_sample,
            "label": self.label,
        }


def estimate_boundary_alphas(
    system: ModalSystem,
    T: float,
    T_bar: float,
    sample_count: int = 200,
    seed: int = 0,
    f_max: float = 2.0,
    f_values: np.ndarray | None = None,
    n_steps: int = 1024,
    zero_data: bool = False,
) -> AlphaFit:
    """Fit the least ``alpha1 + alpha2 + alpha3`` (all >= 0) with

        (T - T_bar) E_S(T) <= alpha1 int f^2 w_t(L)^2 + alpha2 int f w_t(L)^2 + alpha3 int w_t(L)^2

    on random initial data and random constant boundary gains ``f``.  ``D1`` of
    ``system`` must be the boundary trace form (as built by the boundary wave
    model), so ``dw/dnu = -f w_t`` gives the first integral.
    """
    if sample_count < 100:
        raise ConfigurationError("sample_count must be at least 100")
    rng = np.random.default_rng(seed)
    K = system.K
    f = rng.uniform(0.0, f_max, sample_count) if f_values is None else np.resize(np.asarray(f_values, float), sample_count)
    Z = rng.standard_normal((2 * K, sample_count))
    Z[:K] /= system.omega[:, None]
    if zero_data:
        Z[:] = 0.0
    ZT, I3 = damped_sweep(system, lambda t: f, T, Z, n_steps, weight=1.0, full=False)
    e = _energy_weights(system)
    ES = np.sum(e[:, None] * ZT * ZT, axis=0)
    lhs = (T - T_bar) * ES
    A = np.stack([f * f * I3, f * I3, I3], axis=1)
    if np.all(lhs <= 0):
        return AlphaFit((0.0, 0.0, 0.0), T, T_bar, sample_count, True)
    res = linprog(np.ones(3), A_ub=-A, b_ub=-lhs, bounds=[(0, None)] * 3, method="highs")
    if res.status != 0:
        scale = np.where(I3 > 0, lhs / np.maximum(I3, 1e-300), np.inf)
        i = int(np.argmax(scale))
        worst = {"index": i, "f": float(f[i]), "lhs": float(lhs[i]), "boundary_integral": float(I3[i])}
        return AlphaFit((np.inf, np.inf, np.inf), T, T_bar, sample_count, False, worst)
    alphas = tuple(float(x) for x in res.x)
    slack = A @ res.x - lhs
    i = int(np.argmin(slack))
    worst = {"index": i, "f": float(f[i]), "slack": float(slack[i])}
    return AlphaFit(alphas, T, T_bar, sample_count, True, worst)


def observability_table(system: ModalSystem, times) -> list[tuple[float, float]]:
    """``(T, c)`` rows; ``c`` is ``inf`` where the truncation is unobservable."""
    rows = []
    for T in times:
        try:
            rows.append((float(T), observability_constant(system, float(T))))
        except UnobservableError:
            rows.append((float(T), float("inf")))
    if not rows:
        raise InsufficientDataError("no observation times given")
    return rows
