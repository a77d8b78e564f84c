"""Modal truncation of the damped/delayed second-order system and its integrator.

In modal coordinates the state is ``(a, adot)`` with

    a'' + diag(lam) a + b1(t) D1 a'(t) + b2(t) D2 a'(t - tau) = 0.

The conservative part is a set of exact rotations; the feedback terms are
integrated by a classical 4-stage Runge-Kutta scheme written in the rotating
frame (integrating-factor / Lawson form).  With no feedback a step is exactly
the rotation, so standard energy is conserved to roundoff.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.polynomial import polynomial as P

from .errors import ConfigurationError, HistoryUnderflowError, SimulationRefused
from .schedule import (
    BoundTails,
    FeedbackProfile,
    SwitchingSchedule,
    ValidationMode,
    classify,
    validate,
)

_SYM_TOL = 1e-10


def _check_psd(name: str, M: np.ndarray, K: int) -> np.ndarray:
    M = np.array(M, dtype=float)
    if M.shape != (K, K):
        raise ConfigurationError(f"{name} must be {K}x{K}, got {M.shape}")
    scale = max(1.0, float(np.max(np.abs(M))))
    if np.max(np.abs(M - M.T)) > _SYM_TOL * scale:
        raise ConfigurationError(f"{name} must be symmetric")
    M = 0.5 * (M + M.T)
    if K and np.linalg.eigvalsh(M)[0] < -1e-9 * scale:
        raise ConfigurationError(f"{name} must be positive semidefinite")
    return M


def _relative_bounds(D: np.ndarray, W: np.ndarray) -> tuple[float, float]:
    """Best ``lo, hi`` with ``lo * u'Wu <= u'Du <= hi * u'Wu`` for all ``u``."""
    if np.array_equal(D, W):
        return 1.0, 1.0
    w, Q = np.linalg.eigh(W)
    tol = 1e-10 * max(1.0, float(np.max(np.abs(w))))
    R, N = Q[:, w > tol], Q[:, w <= tol]
    if R.shape[1] == 0:
        return math.inf, math.inf
    Dq = Q.T @ D @ Q
    r = w > tol
    D_RR, D_RN, D_NN = Dq[np.ix_(r, r)], Dq[np.ix_(r, ~r)], Dq[np.ix_(~r, ~r)]
    hi = math.inf if N.shape[1] and np.max(np.abs(D_NN)) > tol else None
    schur = D_RR - D_RN @ np.linalg.pinv(D_NN, rcond=1e-10) @ D_RN.T if N.shape[1] else D_RR
    isq = 1.0 / np.sqrt(w[r])
    lo = float(np.linalg.eigvalsh(isq[:, None] * schur * isq[None, :])[0])
    if hi is None:
        hi = float(np.linalg.eigvalsh(isq[:, None] * D_RR * isq[None, :])[-1])
    return max(lo, 0.0), hi


@dataclass(frozen=True)
class ModalSystem:
    """Eigenvalues of ``A`` plus feedback and observation forms in modal coordinates.

    ``obsW`` defines the seminorm of the observed channel; ``obsW2`` (defaults
    to ``obsW``) the one used for the delayed channel when the two differ.
    """

    lam: np.ndarray
    D1: np.ndarray
    D2: np.ndarray
    obsW: np.ndarray
    obsW2: np.ndarray | None = None

    def __post_init__(self):
        lam = np.atleast_1d(np.array(self.lam, dtype=float))
        if lam.ndim != 1 or lam.size == 0:
            raise ConfigurationError("lam must be a nonempty vector")
        if np.any(lam <= 0) or np.any(~np.isfinite(lam)):
            raise ConfigurationError("eigenvalues must be positive and finite")
        if np.any(np.diff(lam) < 0):
            raise ConfigurationError("eigenvalues must be sorted ascending")
        K = lam.size
        object.__setattr__(self, "lam", lam)
        for name in ("D1", "D2", "obsW"):
            object.__setattr__(self, name, _check_psd(name, getattr(self, name), K))
        if self.obsW2 is not None:
            object.__setattr__(self, "obsW2", _check_psd("obsW2", self.obsW2, K))

    @classmethod
    def identity(cls, lam) -> "ModalSystem":
        """Full observation and damping on every mode."""
        K = np.atleast_1d(lam).size
        I = np.eye(K)
        return cls(np.asarray(lam, dtype=float), I, I, I)

    @property
    def K(self) -> int:
        return self.lam.size

    @property
    def omega(self) -> np.ndarray:
        return np.sqrt(self.lam)

    @property
    def W2(self) -> np.ndarray:
        return self.obsW if self.obsW2 is None else self.obsW2

    @property
    def same_observation(self) -> bool:
        return self.obsW2 is None or np.array_equal(self.obsW, self.obsW2)

    def embedding_constant(self, which: int = 1) -> float:
        W = self.obsW if which == 1 else self.W2
        return float(np.linalg.eigvalsh(W)[-1])

    def relative_bounds(self) -> tuple[float, float, float]:
        """``(lo1, hi1, hi2)`` comparing ``D1`` with ``obsW`` and ``D2`` with ``obsW2``."""
        lo1, hi1 = _relative_bounds(self.D1, self.obsW)
        _, hi2 = _relative_bounds(self.D2, self.W2) if np.any(self.D2) else (0.0, 0.0)
        return lo1, hi1, hi2

    def truncate(self, K: int) -> "ModalSystem":
        if not 1 <= K <= self.K:
            raise ConfigurationError(f"cannot truncate {self.K} modes to {K}")
        s = slice(0, K)
        W2 = None if self.obsW2 is None else self.obsW2[s, s]
        return ModalSystem(self.lam[s], self.D1[s, s], self.D2[s, s], self.obsW[s, s], W2)


def effective_tails(profile: FeedbackProfile, system: ModalSystem) -> BoundTails:
    """Bound tails of the operators ``b_i D_i`` measured in the observation seminorms."""
    lo1, hi1, hi2 = system.relative_bounds()
    return profile.tails.scaled(lo1, hi1, hi2)


def effective_bounds(profile: FeedbackProfile, system: ModalSystem) -> np.ndarray:
    lo1, hi1, hi2 = system.relative_bounds()
    return np.array(profile.bounds, dtype=float) * np.array([lo1, hi1, hi2])


@dataclass
class ModalState:
    t: float
    a: np.ndarray
    adot: np.ndarray

    def __post_init__(self):
        self.a = np.array(self.a, dtype=float)
        self.adot = np.array(self.adot, dtype=float)
        if self.a.shape != self.adot.shape:
            raise ConfigurationError("a and adot must have the same shape")

    def copy(self) -> "ModalState":
        return ModalState(self.t, self.a.copy(), self.adot.copy())


def standard_energy(lam: np.ndarray, a: np.ndarray, adot: np.ndarray) -> np.ndarray:
    """``0.5 * sum(lam a^2 + adot^2)`` along the last axis."""
    return 0.5 * (np.sum(lam * a * a, axis=-1) + np.sum(adot * adot, axis=-1))


def _qform(M: np.ndarray, V: np.ndarray) -> np.ndarray:
    return np.einsum("...i,ij,...j->...", V, M, V)


def _lagrange(x: np.ndarray, s: np.ndarray) -> np.ndarray:
    """Lagrange weights; ``x`` is (n, m) nodes, ``s`` is (n,) points."""
    m = x.shape[1]
    w = np.ones_like(x)
    for j in range(m):
        for i in range(m):
            if i != j:
                w[:, j] *= (s - x[:, i]) / (x[:, j] - x[:, i])
    return w


class DelayHistory:
    """Velocity samples on a trailing window, with cubic interpolation.

    Samples live on the (possibly non-uniform) integration nodes.  Nodes where
    the velocity loses smoothness are flagged as breaks; interpolation stencils
    never cross a break, so a query uses four samples from one smooth segment.
    A break may carry a separate left value (the jump between the prescribed
    prehistory and the initial velocity).
    """

    def __init__(self, K: int, dt: float, tau: float):
        if not (dt > 0 and tau > 0):
            raise ConfigurationError("dt and tau must be positive")
        self.K, self.dt, self.tau = int(K), float(dt), float(tau)
        cap = int(2 * (tau / dt + 8))
        self._t = np.empty(cap)
        self._v = np.empty((cap, self.K))
        self._n = 0
        self._base = 0
        self._breaks: list[int] = []
        self._left: dict[int, np.ndarray] = {}
        self.interp_order = 3

    @classmethod
    def with_prehistory(
        cls, K: int, dt: float, tau: float, v0, prehistory: Callable | np.ndarray | None = None, t0: float = 0.0
    ) -> "DelayHistory":
        """History on ``[t0 - tau, t0]`` from ``prehistory`` (zero by default), then ``v0`` at ``t0``."""
        h = cls(K, dt, tau)
        n_pre = int(math.ceil(tau / dt - 1e-9)) + 3
        ts = t0 - dt * np.arange(n_pre, -1, -1)
        if prehistory is None:
            vals = np.zeros((ts.size, K))
        elif callable(prehistory):
            vals = np.array([np.broadcast_to(prehistory(s), (K,)) for s in ts], dtype=float)
        else:
            vals = np.broadcast_to(np.asarray(prehistory, dtype=float), (ts.size, K)).copy()
        h.append_many(ts, vals)
        h.mark_jump(np.asarray(v0, dtype=float))
        return h

    def __len__(self):
        return self._n

    @property
    def times(self) -> np.ndarray:
        return self._t[: self._n]

    @property
    def values(self) -> np.ndarray:
        return self._v[: self._n]

    @property
    def t_last(self) -> float:
        return float(self._t[self._n - 1])

    @property
    def t_first(self) -> float:
        return float(self._t[0])

    def _grow(self, extra: int):
        need = self._n + extra
        if need <= self._t.size:
            return
        cap = max(need, 2 * self._t.size)
        t = np.empty(cap)
        v = np.empty((cap, self.K))
        t[: self._n] = self._t[: self._n]
        v[: self._n] = self._v[: self._n]
        self._t, self._v = t, v

    def append(self, t: float, v, brk: bool = False):
        if self._n and not t > self._t[self._n - 1]:
            raise ConfigurationError("history times must increase")
        self._grow(1)
        self._t[self._n] = t
        self._v[self._n] = v
        if brk:
            self._breaks.append(self._base + self._n)
        self._n += 1

    def append_many(self, ts: np.ndarray, vs: np.ndarray, brk_mask: np.ndarray | None = None):
        ts = np.asarray(ts, dtype=float)
        if ts.size == 0:
            return
        if (self._n and not ts[0] > self._t[self._n - 1]) or np.any(np.diff(ts) <= 0):
            raise ConfigurationError("history times must increase")
        self._grow(ts.size)
        self._t[self._n : self._n + ts.size] = ts
        self._v[self._n : self._n + ts.size] = vs
        if brk_mask is not None:
            self._breaks.extend((self._base + self._n + np.nonzero(brk_mask)[0]).tolist())
        self._n += ts.size

    def mark_jump(self, v_right: np.ndarray):
        """Turn the newest node into a break whose right value is ``v_right``."""
        idx = self._base + self._n - 1
        self._left[idx] = self._v[self._n - 1].copy()
        self._v[self._n - 1] = v_right
        if not self._breaks or self._breaks[-1] != idx:
            self._breaks.append(idx)

    def trim(self, keep_from: float):
        """Drop samples not needed for queries at or after ``keep_from``."""
        i = int(np.searchsorted(self._t[: self._n], keep_from, side="right")) - 5
        if i <= max(64, self._n // 2):
            return
        self._t[: self._n - i] = self._t[i : self._n]
        self._v[: self._n - i] = self._v[i : self._n]
        self._n -= i
        self._base += i
        self._breaks = [b for b in self._breaks if b >= self._base]
        self._left = {k: v for k, v in self._left.items() if k >= self._base}

    def _segments(self, cells: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        brk = np.asarray(self._breaks, dtype=int) - self._base
        brk = brk[(brk >= 0) & (brk < self._n)]
        if brk.size == 0:
            return np.zeros_like(cells), np.full_like(cells, self._n - 1)
        pos = np.searchsorted(brk, cells, side="right")
        lo = np.where(pos > 0, brk[np.maximum(pos - 1, 0)], 0)
        pos2 = np.searchsorted(brk, cells + 1, side="left")
        hi = np.where(pos2 < brk.size, brk[np.minimum(pos2, brk.size - 1)], self._n - 1)
        return lo, hi

    def interpolate(self, s, ref=None) -> np.ndarray:
        """Velocities at times ``s``; ``ref`` (same shape) selects the smooth segment.

        A query exactly on a break is read from the segment containing ``ref``;
        by default that is the segment to the right of the break.
        """
        s = np.atleast_1d(np.asarray(s, dtype=float))
        ref = s if ref is None else np.broadcast_to(np.asarray(ref, dtype=float), s.shape)
        t = self._t[: self._n]
        eps = 1e-9 * max(1.0, abs(t[-1]))
        if np.any(s < t[0] - eps) or np.any(s > t[-1] + eps):
            raise HistoryUnderflowError(f"query outside buffered span [{t[0]}, {t[-1]}]")
        n = self._n
        ref_cell = np.clip(np.searchsorted(t, ref, side="right") - 1, 0, n - 2)
        lo, hi = self._segments(ref_cell)
        cell = np.clip(np.searchsorted(t, s, side="right") - 1, lo, np.maximum(hi - 1, lo))
        out = np.empty((s.size, self.K))
        wide = hi - lo >= 3
        if np.any(wide):
            c, l_, h_ = cell[wide], lo[wide], hi[wide]
            start = np.minimum(np.maximum(c - 1, l_), h_ - 3)
            idx = start[:, None] + np.arange(4)[None, :]
            vals = self._v[idx]
            self._apply_left(idx, h_, vals)
            w = _lagrange(t[idx], s[wide])
            out[wide] = np.einsum("qm,qmk->qk", w, vals)
        for q in np.nonzero(~wide)[0]:
            idx = np.arange(lo[q], hi[q] + 1)[None, :]
            vals = self._v[idx]
            self._apply_left(idx, hi[q : q + 1], vals)
            w = _lagrange(t[idx], s[q : q + 1])
            out[q] = w[0] @ vals[0]
        return out

    def _apply_left(self, idx, hi, vals):
        if not self._left:
            return
        for absi, lv in self._left.items():
            li = absi - self._base
            rows, cols = np.nonzero((idx == li) & (hi[:, None] == li))
            vals[rows, cols] = lv

    def window_pieces(self, a: float, b: float, cuts=()) -> np.ndarray:
        """Sorted breakpoints of ``[a, b]``: the ends, interior nodes and ``cuts``."""
        t = self._t[: self._n]
        inner = t[(t > a) & (t < b)]
        extra = [c for c in cuts if a < c < b]
        pts = np.unique(np.concatenate([[a, b], inner, extra]))
        return pts


def delayed_velocity(history: DelayHistory, s: float) -> np.ndarray:
    """Velocity at ``s`` from the history; ``s`` must lie in ``[t - tau, t]``."""
    t_now = history.t_last
    eps = 1e-9 * max(1.0, abs(t_now))
    if s < t_now - history.tau - eps or s > t_now + eps:
        raise HistoryUnderflowError(f"s={s} outside the delay window [{t_now - history.tau}, {t_now}]")
    return history.interpolate(np.array([s]))[0]


def delay_integral(
    system: ModalSystem,
    history: DelayHistory,
    t: float,
    schedule: SwitchingSchedule,
    profile: FeedbackProfile,
) -> float:
    """``int_{t-tau}^t |b2(s+tau)| * a'(s)^T D2 a'(s) ds`` by piecewise Simpson.

    The window is split at history nodes and at the points where ``s + tau``
    crosses a switch time, so every piece sees a smooth integrand.
    """
    tau = schedule.tau
    lo = t - tau
    if lo < history.t_first - 1e-9 * max(1.0, abs(t)):
        raise HistoryUnderflowError("history does not span the delay window")
    pts = history.window_pieces(lo, t, cuts=schedule.t - tau)
    a, b = pts[:-1], pts[1:]
    mid = 0.5 * (a + b)
    k = np.searchsorted(schedule.t, mid + tau, side="right") - 1
    live = (k >= 0) & (k < schedule.n_intervals) & (k % 2 == 1)
    if not np.any(live):
        return 0.0
    a, b, mid, k = a[live], b[live], mid[live], k[live]
    s3 = np.stack([a, mid, b], axis=1)
    v = history.interpolate(s3.ravel(), np.repeat(mid, 3)).reshape(a.size, 3, system.K)
    q = _qform(system.D2, v)
    wgt = np.empty_like(s3)
    for kk in np.unique(k):
        sel = k == kk
        wgt[sel] = np.abs(P.polyval(s3[sel] + tau - schedule.t[kk], profile.coeffs(int(kk))))
    f = wgt * q
    return float(np.sum((b - a) / 6.0 * (f[:, 0] + 4 * f[:, 1] + f[:, 2])))


def conservative_flow(system: ModalSystem, state: ModalState, dt: float) -> ModalState:
    """Exact undamped evolution by ``dt``: each mode rotates by ``sqrt(lam) * dt``."""
    if not dt > 0:
        raise ConfigurationError("dt must be positive")
    w = system.omega
    c, s = np.cos(w * dt), np.sin(w * dt)
    a = c * state.a + s / w * state.adot
    adot = -w * s * state.a + c * state.adot
    return ModalState(state.t + dt, a, adot)


class _Rotator:
    def __init__(self, omega: np.ndarray):
        self.omega = omega
        self._cache: dict[float, tuple[np.ndarray, np.ndarray]] = {}

    def cs(self, h: float):
        got = self._cache.get(h)
        if got is None:
            got = (np.cos(self.omega * h), np.sin(self.omega * h))
            if len(self._cache) < 256:
                self._cache[h] = got
        return got

    def rotate(self, h, a, adot):
        c, s = self.cs(h)
        if a.ndim == 2:
            c, s = c[:, None], s[:, None]
            w = self.omega[:, None]
        else:
            w = self.omega
        return c * a + (s / w) * adot, -w * s * a + c * adot

    def rotate_velocity(self, h, f):
        """Rotation applied to ``(0, f)``."""
        c, s = self.cs(h)
        w = self.omega
        if f.ndim == 2:
            c, s, w = c[:, None], s[:, None], w[:, None]
        return (s / w) * f, c * f


def lawson_rk4(rot: _Rotator, a, adot, h: float, force: Callable[[int, np.ndarray, np.ndarray], np.ndarray]):
    """One integrating-factor RK4 step; ``force(stage, a, adot)`` gives the feedback acceleration.

    Stages 0, 1/2, 1/2, 1 correspond to ``force`` stage indices 0, 1, 1, 2.
    """
    f1 = force(0, a, adot)
    a2, v2 = rot.rotate(0.5 * h, a, adot + 0.5 * h * f1)
    f2 = force(1, a2, v2)
    ah, vh = rot.rotate(0.5 * h, a, adot)
    f3 = force(1, ah, vh + 0.5 * h * f2)
    aF, vF = rot.rotate(h, a, adot)
    ra, rv = rot.rotate_velocity(0.5 * h, f3)
    f4 = force(2, aF + h * ra, vF + h * rv)
    r1a, r1v = rot.rotate_velocity(h, f1)
    r23a, r23v = rot.rotate_velocity(0.5 * h, f2 + f3)
    a_new = aF + h / 6.0 * (r1a + 2.0 * r23a)
    v_new = vF + h / 6.0 * (r1v + 2.0 * r23v + f4)
    return a_new, v_new


def _feedback_force(system, k, coeffs, t_loc, h, history, t_abs, tau):
    """Force closure for one step inside interval ``k`` starting at local time ``t_loc``."""
    stages = np.array([t_loc, t_loc + 0.5 * h, t_loc + h])
    gains = P.polyval(stages, coeffs)
    if k % 2 == 0:
        D1 = system.D1
        return lambda i, a, v: -gains[i] * (D1 @ v)
    s = np.array([t_abs, t_abs + 0.5 * h, t_abs + h]) - tau
    vd = history.interpolate(s, np.full(3, t_abs + 0.5 * h - tau))
    pushes = -gains[:, None] * (vd @ system.D2.T)
    return lambda i, a, v: pushes[i] if v.ndim == 1 else pushes[i][:, None]


def step(
    system: ModalSystem,
    state: ModalState,
    history: DelayHistory,
    profile: FeedbackProfile,
    schedule: SwitchingSchedule,
    dt: float,
) -> ModalState:
    """Advance one step inside the current interval and append the new velocity."""
    if dt > history.dt * (1 + 1e-9) or not dt > 0:
        raise ConfigurationError(f"step {dt} incompatible with history spacing {history.dt}")
    if abs(history.t_last - state.t) > 1e-9 * max(1.0, abs(state.t)):
        raise ConfigurationError("history is not synchronized with the state")
    k, _ = classify(schedule, state.t)
    t1 = state.t + dt
    eps = 1e-9 * max(1.0, abs(t1))
    if t1 > schedule.t[k + 1] + eps:
        raise ConfigurationError("step straddles a switch time")
    bps = schedule.breakpoints()
    if np.any((bps > state.t + eps) & (bps < t1 - eps)):
        raise ConfigurationError("step straddles a delay breakpoint")
    rot = _Rotator(system.omega)
    if profile.is_silent(k):
        new = conservative_flow(system, state, dt)
    else:
        force = _feedback_force(
            system, k, profile.coeffs(k), state.t - schedule.t[k], dt, history, state.t, schedule.tau
        )
        a, v = lawson_rk4(rot, state.a, state.adot, dt, force)
        new = ModalState(t1, a, v)
    history.append(t1, new.adot, brk=bool(np.any(np.abs(bps[bps > 0] - t1) <= eps)))
    return new


@dataclass
class Trace:
    """Sampled energies and observation integrands of one run."""

    t: np.ndarray
    E_S: np.ndarray
    J: np.ndarray  # delay integral, E = E_S + xi/2 * J
    vD1: np.ndarray
    vW1: np.ndarray
    vW2: np.ndarray
    vdW2: np.ndarray
    interval: np.ndarray
    switch_times: np.ndarray
    switch_index: np.ndarray
    snapshots: list
    xi: float
    dt: float
    tau: float
    states: tuple | None = None
    final: ModalState | None = None
    meta: dict = field(default_factory=dict)

    @property
    def E(self) -> np.ndarray:
        return self.E_S + 0.5 * self.xi * self.J

    def energy(self, which: str = "E") -> np.ndarray:
        return self.E if which == "E" else self.E_S

    def switch_energy(self, which: str = "E") -> np.ndarray:
        return self.energy(which)[self.switch_index]

    def with_xi(self, xi: float) -> "Trace":
        import dataclasses

        return dataclasses.replace(self, xi=float(xi))

    def interval_slice(self, k: int) -> slice:
        return slice(int(self.switch_index[k]), int(self.switch_index[k + 1]) + 1)

    @property
    def n_complete_intervals(self) -> int:
        return len(self.switch_index) - 1


def time_nodes(schedule: SwitchingSchedule, dt: float, t_end: float):
    """Integration nodes: a uniform ``dt`` grid merged with switch and delay breakpoints.

    Returns ``(nodes, is_break, switch_idx)`` where ``switch_idx[n]`` locates
    ``t_n`` (only switch times up to ``t_end``; ``t_end`` itself is appended).
    """
    n_grid = int(math.floor(t_end / dt + 1e-9))
    grid = dt * np.arange(n_grid + 1)
    sw = schedule.t[schedule.t <= t_end * (1 + 1e-14)]
    brk = schedule.breakpoints(orders=(0, 1, 2, 3), t_end=t_end)
    cuts = schedule.breakpoints(orders=(-1,), t_end=t_end)
    special = np.unique(np.concatenate([sw, brk, cuts, [t_end]]))
    near = np.searchsorted(special, grid)
    d_lo = np.abs(grid - special[np.maximum(near - 1, 0)])
    d_hi = np.abs(special[np.minimum(near, special.size - 1)] - grid)
    keep = np.minimum(d_lo, d_hi) > 0.01 * dt
    nodes = np.unique(np.concatenate([grid[keep], special]))
    nodes = nodes[nodes <= t_end]
    is_break = np.isin(nodes, brk) | (nodes == 0.0)
    switch_idx = np.searchsorted(nodes, sw)
    if nodes[switch_idx[-1]] != t_end:
        switch_idx = np.append(switch_idx, nodes.size - 1)
    return nodes, is_break, switch_idx


def simulate(
    system: ModalSystem,
    schedule: SwitchingSchedule,
    profile: FeedbackProfile,
    initial: ModalState,
    dt: float,
    sample_stride: int = 1,
    prehistory=None,
    xi: float | None = None,
    mode: ValidationMode | str | None = None,
    T_bar: float | None = None,
    t_end: float | None = None,
    record_states: bool = False,
) -> Trace:
    """Integrate over the schedule; switch times are always sampled.

    ``dt`` is the nominal step; nodes are added at switch times ``t_n`` and at
    ``t_n + j*tau`` so no step straddles a point where the right-hand side or
    the delayed velocity loses smoothness.  If ``mode`` is given, the scenario
    is validated first and refused on any violation.
    """
    if mode is not None:
        rep = validate(schedule, profile, mode, schedule.t[1] * 0.5 if T_bar is None else T_bar)
        if not rep.valid:
            raise SimulationRefused(rep)
    if not dt > 0 or sample_stride < 1:
        raise ConfigurationError("dt must be positive and sample_stride >= 1")
    if initial.a.shape != (system.K,):
        raise ConfigurationError(f"initial state must have {system.K} modes")
    if profile.n_cycles != schedule.n_cycles:
        raise ConfigurationError("profile and schedule cover different horizons")
    t_end = schedule.horizon if t_end is None else float(t_end)
    if not 0 < t_end <= schedule.horizon * (1 + 1e-12):
        raise ConfigurationError("t_end must lie in (0, horizon]")
    if xi is None:
        from .energy import select_xi

        try:
            xi = select_xi(effective_tails(profile, system)).xi
        except Exception:
            xi = 0.0

    tau = schedule.tau
    nodes, is_break, switch_idx = time_nodes(schedule, dt, t_end)
    hist = DelayHistory.with_prehistory(system.K, dt, tau, initial.adot, prehistory)
    rot = _Rotator(system.omega)
    lam, D1, W1, W2 = system.lam, system.D1, system.obsW, system.W2
    need_J = profile.has_delay

    rows: list[tuple] = []
    st_a, st_v = [], []
    snapshots = []
    a, v = initial.a.copy(), initial.adot.copy()

    def record(ts, A, V):
        Vd = hist.interpolate(ts - tau, ts - tau)
        Js = [delay_integral(system, hist, float(x), schedule, profile) for x in ts] if need_J else [0.0] * len(ts)
        ES = standard_energy(lam, A, V)
        rows.append((ts, ES, np.asarray(Js), _qform(D1, V), _qform(W1, V), _qform(W2, V), _qform(W2, Vd)))
        if record_states:
            st_a.append(A.copy())
            st_v.append(V.copy())

    record(np.array([0.0]), a[None, :], v[None, :])
    snapshots.append(ModalState(0.0, a.copy(), v.copy()))
    sample_idx = [0]
    interval_of = [0]

    n_int = len(switch_idx) - 1
    for k in range(n_int):
        i0, i1 = int(switch_idx[k]), int(switch_idx[k + 1])
        tk = schedule.t[k]
        ts = nodes[i0 : i1 + 1]
        local = np.arange(1, ts.size)
        take = (local % sample_stride == 0) | (local == ts.size - 1)
        if profile.is_silent(k):
            th = system.omega[None, :] * (ts[1:] - ts[0])[:, None]
            c, s = np.cos(th), np.sin(th)
            w = system.omega
            A = c * a + s / w * v
            V = -w * s * a + c * v
            hist.append_many(ts[1:], V, is_break[i0 + 1 : i1 + 1])
            a, v = A[-1].copy(), V[-1].copy()
            record(ts[1:][take], A[take], V[take])
        else:
            coeffs = profile.coeffs(k)
            buf_t, buf_a, buf_v = [], [], []
            for j in range(ts.size - 1):
                h = float(ts[j + 1] - ts[j])
                force = _feedback_force(system, k, coeffs, float(ts[j] - tk), h, hist, float(ts[j]), tau)
                a, v = lawson_rk4(rot, a, v, h, force)
                hist.append(float(ts[j + 1]), v, bool(is_break[i0 + j + 1]))
                if take[j]:
                    buf_t.append(ts[j + 1])
                    buf_a.append(a.copy())
                    buf_v.append(v.copy())
                    if need_J:
                        record(np.array([ts[j + 1]]), a[None, :], v[None, :])
            if not need_J:
                record(np.array(buf_t), np.array(buf_a), np.array(buf_v))
        n_new = int(np.count_nonzero(take))
        sample_idx.append(sample_idx[-1] + n_new)
        interval_of.extend([k] * n_new)
        snapshots.append(ModalState(float(ts[-1]), a.copy(), v.copy()))
        hist.trim(float(ts[-1]) - tau - 2 * dt)

    cols = [np.concatenate([r[i] for r in rows]) for i in range(7)]
    t_s = cols[0]
    interval = np.array(interval_of)
    # a sample sitting on t_n (n >= 1) opens interval n
    interval[np.array(sample_idx[1:-1], dtype=int)] = np.arange(1, len(sample_idx) - 1)
    states = (np.concatenate(st_a), np.concatenate(st_v)) if record_states else None
    return Trace(
        t=t_s,
        E_S=cols[1],
        J=cols[2],
        vD1=cols[3],
        vW1=cols[4],
        vW2=cols[5],
        vdW2=cols[6],
        interval=interval,
        switch_times=nodes[switch_idx],
        switch_index=np.array(sample_idx, dtype=int),
        snapshots=snapshots,
        xi=float(xi),
        dt=float(dt),
        tau=tau,
        states=states,
        final=ModalState(float(nodes[-1]), a.copy(), v.copy()),
    )


def integrate(
    system: ModalSystem,
    state: ModalState,
    t_end: float,
    dt: float,
    b1: float = 0.0,
    b2: float = 0.0,
    tau: float = 1.0,
    prehistory=None,
) -> ModalState:
    """Integrate with constant gains ``b1``, ``b2`` acting together on ``[0, t_end]``.

    A plain driver outside the switching setting, used for oracle comparisons.
    Nodes sit on the ``dt`` grid plus multiples of ``tau``.
    """
    n_grid = int(math.floor(t_end / dt + 1e-9))
    special = tau * np.arange(0, int(t_end / tau) + 1)
    nodes = np.unique(np.concatenate([dt * np.arange(n_grid + 1), special, [t_end]]))
    nodes = nodes[nodes <= t_end]
    hist = DelayHistory.with_prehistory(system.K, dt, tau, state.adot, prehistory)
    rot = _Rotator(system.omega)
    a, v = state.a.copy(), state.adot.copy()
    for j in range(nodes.size - 1):
        t0, h = float(nodes[j]), float(nodes[j + 1] - nodes[j])
        s = np.array([t0, t0 + 0.5 * h, t0 + h]) - tau
        vd = hist.interpolate(s, np.full(3, t0 + 0.5 * h - tau)) if b2 else np.zeros((3, system.K))
        push = -b2 * (vd @ system.D2.T)

        def force(i, aa, vv, push=push):
            return -b1 * (system.D1 @ vv) + push[i]

        a, v = lawson_rk4(rot, a, v, h, force)
        brk = bool(np.any(np.abs(special - nodes[j + 1]) < 1e-12))
        hist.append(float(nodes[j + 1]), v, brk)
    return ModalState(float(nodes[-1]), a, v)
