"""Switching schedules, feedback profiles and their structural checks.

Time is split into half-open intervals ``[t_n, t_{n+1})``.  Even intervals carry
the undelayed damping ``b1``; odd intervals carry the delayed feedback ``b2``.
Bound sequences that extend past the materialized horizon are described by a
:class:`Tail`, a closed family ``scale * ratio**n / (n+1)**exponent`` on which
infima, suprema and series convergence are decidable exactly.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.polynomial import polynomial as P

from .errors import (
    BoundMismatchError,
    ConfigurationError,
    OutOfRangeError,
    UndecidableError,
)

_ONE_TOL = 1e-12


def _snap_one(r: float) -> float:
    return 1.0 if abs(r - 1.0) <= _ONE_TOL else r


@dataclass(frozen=True)
class Tail:
    """Sequence ``a_n = scale * ratio**n / (n+1)**exponent``, or an explicit list.

    Explicit tails only know their materialized values; anything that needs the
    whole sequence raises :class:`UndecidableError` for them.
    """

    scale: float
    ratio: float = 1.0
    exponent: float = 0.0
    values: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.values is None:
            if not (self.scale >= 0 and math.isfinite(self.scale)):
                raise ConfigurationError(f"tail scale must be finite and >= 0, got {self.scale}")
            if not (self.ratio > 0 and math.isfinite(self.ratio)):
                raise ConfigurationError(f"tail ratio must be > 0, got {self.ratio}")
            object.__setattr__(self, "ratio", _snap_one(float(self.ratio)))

    @classmethod
    def constant(cls, value: float) -> "Tail":
        return cls(float(value))

    @classmethod
    def geometric(cls, value: float, ratio: float) -> "Tail":
        return cls(float(value), ratio=float(ratio))

    @classmethod
    def power(cls, value: float, exponent: float) -> "Tail":
        return cls(float(value), exponent=float(exponent))

    @classmethod
    def explicit(cls, values: Sequence[float]) -> "Tail":
        vals = tuple(float(v) for v in values)
        if not vals:
            raise ConfigurationError("explicit tail needs at least one value")
        return cls(0.0, values=vals)

    @property
    def decidable(self) -> bool:
        return self.values is None

    @property
    def kind(self) -> str:
        if self.values is not None:
            return "explicit"
        if self.scale == 0 or (self.ratio == 1 and self.exponent == 0):
            return "constant"
        if self.exponent == 0:
            return "geometric"
        if self.ratio == 1:
            return "power"
        return "mixed"

    def __call__(self, n):
        n_arr = np.asarray(n)
        if self.values is not None:
            if np.any(n_arr >= len(self.values)) or np.any(n_arr < 0):
                raise UndecidableError("explicit tail queried beyond its declared values")
            return np.asarray(self.values)[n_arr] if n_arr.ndim else self.values[int(n_arr)]
        out = self.scale * self.ratio ** n_arr / (n_arr + 1.0) ** self.exponent
        return float(out) if np.ndim(out) == 0 else out

    def _require(self):
        if self.values is not None:
            raise UndecidableError("explicit tail: infinite-horizon property is undecidable")

    def limit(self) -> float:
        self._require()
        if self.scale == 0:
            return 0.0
        if self.ratio < 1:
            return 0.0
        if self.ratio > 1:
            return math.inf
        if self.exponent > 0:
            return 0.0
        if self.exponent < 0:
            return math.inf
        return self.scale

    def _candidates(self) -> list[int]:
        cands = [0]
        lr = math.log(self.ratio)
        if lr != 0 and self.exponent != 0:
            x = self.exponent / lr - 1.0
            if 0 < x < 1e15:
                cands += [int(math.floor(x)), int(math.ceil(x))]
        return cands

    def inf(self) -> float:
        self._require()
        if self.scale == 0:
            return 0.0
        return min([self(n) for n in self._candidates()] + [self.limit()])

    def sup(self) -> float:
        self._require()
        if self.scale == 0:
            return 0.0
        return max([self(n) for n in self._candidates()] + [self.limit()])

    def summable(self) -> bool:
        """Whether the series of the tail converges."""
        self._require()
        if self.scale == 0 or self.ratio < 1:
            return True
        if self.ratio > 1:
            return False
        return self.exponent > 1

    def growth(self) -> tuple[float, float]:
        """Sort key for asymptotic size: larger key means faster growth."""
        self._require()
        return (self.ratio, -self.exponent)

    def _binary(self, other, op):
        if isinstance(other, (int, float)):
            other = Tail.constant(float(other)) if other >= 0 else None
            if other is None:
                raise ConfigurationError("tails only combine with nonnegative scalars")
        if self.values is not None or other.values is not None:
            n = min(len(t.values) if t.values is not None else math.inf for t in (self, other))
            n = int(n)
            a = np.array([self(i) for i in range(n)])
            b = np.array([other(i) for i in range(n)])
            return Tail.explicit(op(a, b))
        if op is np.multiply:
            return Tail(self.scale * other.scale, self.ratio * other.ratio, self.exponent + other.exponent)
        if other.scale == 0:
            raise ZeroDivisionError("division by a zero tail")
        return Tail(self.scale / other.scale, self.ratio / other.ratio, self.exponent - other.exponent)

    def __mul__(self, other):
        return self._binary(other, np.multiply)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return self._binary(other, np.divide)

    def __pow__(self, k: float):
        if self.values is not None:
            return Tail.explicit(np.asarray(self.values) ** k)
        return Tail(self.scale ** k, self.ratio ** k, self.exponent * k)

    def reciprocal(self) -> "Tail":
        if self.values is not None:
            return Tail.explicit(1.0 / np.asarray(self.values))
        if self.scale == 0:
            raise ZeroDivisionError("reciprocal of a zero tail")
        return Tail(1.0 / self.scale, 1.0 / self.ratio, -self.exponent)

    def to_dict(self) -> dict:
        if self.values is not None:
            return {"kind": "explicit", "values": list(self.values)}
        return {"kind": self.kind, "scale": self.scale, "ratio": self.ratio, "exponent": self.exponent}


def tail_from_decl(decl) -> Tail:
    """Parse a number or a ``{"kind": ...}`` mapping into a :class:`Tail`."""
    if isinstance(decl, Tail):
        return decl
    if isinstance(decl, (int, float)):
        return Tail.constant(float(decl))
    if not isinstance(decl, dict) or "kind" not in decl:
        raise ConfigurationError(f"cannot parse tail declaration {decl!r}")
    kind = decl["kind"]
    if kind == "explicit":
        return Tail.explicit(decl["values"])
    value = float(decl.get("value", decl.get("scale", 0.0)))
    if kind == "constant":
        return Tail.constant(value)
    if kind == "geometric":
        r = float(decl["ratio"])
        if not 0 < r < 1:
            raise ConfigurationError("geometric tail ratio must lie in (0, 1)")
        return Tail.geometric(value, r)
    if kind == "power":
        return Tail.power(value, float(decl["exponent"]))
    if kind == "mixed":
        return Tail(value, float(decl.get("ratio", 1.0)), float(decl.get("exponent", 0.0)))
    raise ConfigurationError(f"unknown tail kind {kind!r}")


class Parity(str, enum.Enum):
    EVEN = "even"
    ODD = "odd"


@dataclass(frozen=True)
class SwitchingSchedule:
    t: np.ndarray
    tau: float
    n_cycles: int
    T_even_tail: Tail
    T_odd_tail: Tail

    @property
    def lengths(self) -> np.ndarray:
        return np.diff(self.t)

    @property
    def T_even(self) -> np.ndarray:
        return self.lengths[0::2]

    @property
    def T_odd(self) -> np.ndarray:
        return self.lengths[1::2]

    @property
    def horizon(self) -> float:
        return float(self.t[-1])

    @property
    def n_intervals(self) -> int:
        return 2 * self.n_cycles

    @property
    def is_periodic(self) -> bool:
        tails_const = all(
            t.decidable and t.kind == "constant" for t in (self.T_even_tail, self.T_odd_tail)
        )
        return tails_const and np.ptp(self.T_even) == 0 and np.ptp(self.T_odd) == 0

    def interval(self, k: int) -> tuple[float, float]:
        return float(self.t[k]), float(self.t[k + 1])

    def breakpoints(self, orders: Sequence[int] = (-1, 0, 1, 2, 3), t_end: float | None = None) -> np.ndarray:
        """Switch times shifted by multiples of the delay, clipped to ``[0, t_end]``."""
        t_end = self.horizon if t_end is None else t_end
        pts = np.concatenate([self.t + j * self.tau for j in orders])
        pts = pts[(pts >= 0) & (pts <= t_end)]
        return np.unique(pts)


def _materialize(decl, n: int, what: str) -> tuple[np.ndarray, Tail]:
    if isinstance(decl, dict):
        decl = tail_from_decl(decl)
    if isinstance(decl, Tail):
        tail = decl
        vals = np.array([tail(i) for i in range(n)], dtype=float)
    elif np.ndim(decl) == 0:
        tail = Tail.constant(float(decl))
        vals = np.full(n, float(decl))
    else:
        vals = np.asarray(decl, dtype=float)
        if vals.shape != (n,):
            raise ConfigurationError(f"{what}: expected {n} per-cycle lengths, got {vals.shape}")
        tail = Tail.constant(vals[0]) if np.ptp(vals) == 0 else Tail.explicit(vals)
    if np.any(~np.isfinite(vals)) or np.any(vals <= 0):
        raise ConfigurationError(f"{what}: interval lengths must be positive and finite")
    return vals, tail


def build_schedule(T_even, T_odd, tau: float, n_cycles: int) -> SwitchingSchedule:
    """Alternate active/delayed intervals starting at ``t_0 = 0``."""
    if not isinstance(n_cycles, (int, np.integer)) or n_cycles < 1:
        raise ConfigurationError("n_cycles must be a positive integer")
    if not (tau > 0 and math.isfinite(tau)):
        raise ConfigurationError("tau must be positive")
    ev, ev_tail = _materialize(T_even, n_cycles, "T_even")
    od, od_tail = _materialize(T_odd, n_cycles, "T_odd")
    lengths = np.empty(2 * n_cycles)
    lengths[0::2] = ev
    lengths[1::2] = od
    t = np.concatenate([[0.0], np.cumsum(lengths)])
    return SwitchingSchedule(t=t, tau=float(tau), n_cycles=int(n_cycles), T_even_tail=ev_tail, T_odd_tail=od_tail)


def classify(schedule: SwitchingSchedule, t: float) -> tuple[int, Parity]:
    """Index ``n`` with ``t`` in ``[t_n, t_{n+1})`` and its parity."""
    if not (0 <= t < schedule.t[-1]):
        raise OutOfRangeError(f"t={t} outside [0, {schedule.t[-1]})")
    n = int(np.searchsorted(schedule.t, t, side="right") - 1)
    return n, (Parity.EVEN if n % 2 == 0 else Parity.ODD)


@dataclass(frozen=True)
class BoundTails:
    m: Tail
    M_even: Tail
    M_odd: Tail

    def scaled(self, m_factor: float, M_even_factor: float, M_odd_factor: float) -> "BoundTails":
        return BoundTails(self.m * m_factor, self.M_even * M_even_factor, self.M_odd * M_odd_factor)


def _as_coeffs(c) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(c, dtype=float))
    if arr.ndim != 1 or arr.size > 4:
        raise ConfigurationError("profiles are polynomials of degree <= 3 per interval")
    return arr


def _per_cycle(decl, n_cycles: int, what: str) -> tuple[np.ndarray, ...]:
    if decl is None:
        decl = 0.0
    nested = isinstance(decl, (list, tuple)) and decl and isinstance(decl[0], (list, tuple, np.ndarray))
    if isinstance(decl, np.ndarray) and decl.ndim == 2:
        nested = True
    if not nested:
        c = _as_coeffs(decl)
        return tuple(c.copy() for _ in range(n_cycles))
    if len(decl) != n_cycles:
        raise ConfigurationError(f"{what}: expected {n_cycles} per-cycle polynomials, got {len(decl)}")
    return tuple(_as_coeffs(c) for c in decl)


def poly_range(coeffs: np.ndarray, length: float) -> tuple[float, float]:
    """Exact min and max of a polynomial (local time) on ``[0, length]``."""
    pts = [0.0, length]
    if len(coeffs) > 2:
        for r in P.polyroots(P.polyder(coeffs)):
            if abs(r.imag) < 1e-12 and 0 < r.real < length:
                pts.append(r.real)
    vals = P.polyval(np.asarray(pts), coeffs)
    return float(vals.min()), float(vals.max())


@dataclass(frozen=True)
class FeedbackProfile:
    """Per-interval polynomial feedback gains and their declared bounds.

    ``b1[n]`` holds the ascending coefficients of ``b1`` on ``I_{2n}`` in local
    time ``t - t_{2n}``; ``b2[n]`` likewise on ``I_{2n+1}``.
    """

    b1: tuple[np.ndarray, ...]
    b2: tuple[np.ndarray, ...]
    tails: BoundTails
    bounds: tuple[tuple[float, float, float], ...] = field(default=())

    def __post_init__(self):
        if len(self.b1) != len(self.b2):
            raise ConfigurationError("b1 and b2 must cover the same number of cycles")
        if not self.bounds:
            n = np.arange(len(self.b1))
            try:
                b = tuple(
                    (float(self.tails.m(i)), float(self.tails.M_even(i)), float(self.tails.M_odd(i))) for i in n
                )
            except UndecidableError as exc:
                raise ConfigurationError("explicit tails must cover the materialized cycles") from exc
            object.__setattr__(self, "bounds", b)

    @property
    def n_cycles(self) -> int:
        return len(self.b1)

    def coeffs(self, k: int) -> np.ndarray:
        """Coefficients of the active gain on interval ``k`` (b1 if even, b2 if odd)."""
        return self.b1[k // 2] if k % 2 == 0 else self.b2[k // 2]

    def gains_on(self, k: int, s) -> tuple:
        """``(b1, b2)`` at local times ``s`` of interval ``k``."""
        v = P.polyval(np.asarray(s, dtype=float), self.coeffs(k))
        z = np.zeros_like(v)
        return (v, z) if k % 2 == 0 else (z, v)

    def is_silent(self, k: int) -> bool:
        return not np.any(self.coeffs(k))

    @property
    def has_delay(self) -> bool:
        return any(np.any(c) for c in self.b2)

    def b1_at(self, schedule: SwitchingSchedule, t) -> np.ndarray:
        return self._at(schedule, t, 0)

    def b2_at(self, schedule: SwitchingSchedule, t) -> np.ndarray:
        return self._at(schedule, t, 1)

    def _at(self, schedule, t, which):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        out = np.zeros_like(t)
        k = np.searchsorted(schedule.t, t, side="right") - 1
        inside = (k >= 0) & (k < schedule.n_intervals)
        for kk in np.unique(k[inside]):
            if kk % 2 != which:
                continue
            sel = k == kk
            out[sel] = P.polyval(t[sel] - schedule.t[kk], self.coeffs(int(kk)))
        return out

    def scaled(self, b1_factor: float = 1.0, b2_factor: float = 1.0) -> "FeedbackProfile":
        tails = self.tails.scaled(b1_factor, b1_factor, abs(b2_factor))
        bounds = tuple((m * b1_factor, M * b1_factor, Mo * abs(b2_factor)) for m, M, Mo in self.bounds)
        return FeedbackProfile(
            tuple(c * b1_factor for c in self.b1), tuple(c * b2_factor for c in self.b2), tails, bounds
        )


def make_profile(
    n_cycles: int,
    b1=1.0,
    b2=0.0,
    m=None,
    M_even=None,
    M_odd=None,
    schedule: SwitchingSchedule | None = None,
) -> FeedbackProfile:
    """Build a profile; missing bound tails become constants sampled from the gains."""
    p1 = _per_cycle(b1, n_cycles, "b1")
    p2 = _per_cycle(b2, n_cycles, "b2")
    if m is None or M_even is None or M_odd is None:
        if schedule is None:
            raise ConfigurationError("a schedule is needed to infer bounds from the gains")
        lo1, hi1, hi2 = math.inf, 0.0, 0.0
        for n in range(n_cycles):
            a, b = poly_range(p1[n], schedule.T_even[n])
            c, d = poly_range(p2[n], schedule.T_odd[n])
            lo1, hi1, hi2 = min(lo1, a), max(hi1, b), max(hi2, abs(c), abs(d))
        m = lo1 if m is None else m
        M_even = hi1 if M_even is None else M_even
        M_odd = hi2 if M_odd is None else M_odd
    tails = BoundTails(tail_from_decl(m), tail_from_decl(M_even), tail_from_decl(M_odd))
    return FeedbackProfile(p1, p2, tails)


def profile_bounds(
    profile: FeedbackProfile, schedule: SwitchingSchedule, n: int, samples: int = 100
) -> tuple[float, float, float]:
    """Declared ``(m_{2n}, M_{2n}, M_{2n+1})``, verified against the gains."""
    if not 0 <= n < min(profile.n_cycles, schedule.n_cycles):
        raise OutOfRangeError(f"cycle {n} not materialized")
    m, M, Mo = profile.bounds[n]
    T1, T2 = schedule.T_even[n], schedule.T_odd[n]
    s1 = np.linspace(0.0, T1, max(samples, 100))
    s2 = np.linspace(0.0, T2, max(samples, 100))
    v1 = P.polyval(s1, profile.b1[n])
    v2 = np.abs(P.polyval(s2, profile.b2[n]))
    lo1, hi1 = poly_range(profile.b1[n], T1)
    lo2, hi2 = poly_range(profile.b2[n], T2)
    b1_min, b1_max = min(v1.min(), lo1), max(v1.max(), hi1)
    b2_max = max(v2.max(), abs(lo2), abs(hi2))
    tol = 1e-12 * max(1.0, abs(M), abs(Mo))
    problems = []
    if b1_min < m - tol:
        problems.append(f"b1 dips to {b1_min:.6g} below declared m={m:.6g}")
    if b1_max > M + tol:
        problems.append(f"b1 reaches {b1_max:.6g} above declared M_even={M:.6g}")
    if b2_max > Mo + tol:
        problems.append(f"|b2| reaches {b2_max:.6g} above declared M_odd={Mo:.6g}")
    if problems:
        raise BoundMismatchError(f"cycle {n}: " + "; ".join(problems))
    return m, M, Mo


class ValidationMode(str, enum.Enum):
    GENERAL = "GENERAL"
    RESTRICTED = "RESTRICTED"
    UNBOUNDED = "UNBOUNDED"
    PERIODIC = "PERIODIC"


@dataclass(frozen=True)
class Violation:
    name: str
    detail: str


@dataclass
class ValidationReport:
    mode: ValidationMode
    violations: list[Violation] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    @property
    def valid(self) -> bool:
        return not self.violations

    @property
    def names(self) -> list[str]:
        return [v.name for v in self.violations]

    def to_dict(self) -> dict:
        return {
            "mode": self.mode.value,
            "valid": self.valid,
            "violations": [{"name": v.name, "detail": v.detail} for v in self.violations],
            "notes": list(self.notes),
        }


def _tail_extreme(tail: Tail, materialized: np.ndarray, which: str, notes: list[str], label: str) -> float:
    if tail.decidable:
        return tail.inf() if which == "inf" else tail.sup()
    notes.append(f"{label}: explicit tail, checked over materialized cycles only")
    return float(materialized.min() if which == "inf" else materialized.max())


def ratio_floor(tails: BoundTails) -> float:
    """``inf_n m_{2n} / M_{2n+1}`` (``inf`` when the delayed gain vanishes)."""
    if tails.M_odd.decidable and tails.M_odd.scale == 0:
        return math.inf
    if tails.m.decidable and tails.M_odd.decidable and not math.isfinite(tails.m.scale / tails.M_odd.scale):
        return math.inf
    return (tails.m / tails.M_odd).inf()


def validate(
    schedule: SwitchingSchedule,
    profile: FeedbackProfile,
    mode: ValidationMode | str,
    T_bar: float | Sequence[float],
) -> ValidationReport:
    """List every structural hypothesis of ``mode`` that fails; empty means valid."""
    mode = ValidationMode(mode)
    rep = ValidationReport(mode)
    add = lambda name, detail: rep.violations.append(Violation(name, detail))  # noqa: E731

    if profile.n_cycles != schedule.n_cycles:
        add("horizon_mismatch", f"profile has {profile.n_cycles} cycles, schedule {schedule.n_cycles}")
        return rep

    for n in range(schedule.n_cycles):
        m, M, Mo = profile.bounds[n]
        if not (0 < m <= M) or Mo < 0:
            add("bound_consistency", f"cycle {n}: need 0 < m <= M_even and M_odd >= 0, got ({m}, {M}, {Mo})")
            continue
        try:
            profile_bounds(profile, schedule, n)
        except BoundMismatchError as exc:
            add("bound_consistency", str(exc))

    grid_prod = 0.0
    for k in range(schedule.n_intervals):
        s = np.linspace(*schedule.interval(k), 64, endpoint=False)
        grid_prod = max(grid_prod, float(np.max(np.abs(profile.b1_at(schedule, s) * profile.b2_at(schedule, s)))))
    if grid_prod != 0.0:
        add("disjoint_supports", f"max |b1*b2| = {grid_prod}")

    T_star = _tail_extreme(schedule.T_even_tail, schedule.T_even, "inf", rep.notes, "T_even")
    tau = schedule.tau
    if T_star < tau:
        add("active_shorter_than_delay", f"inf T_even = {T_star} < tau = {tau}")

    bars = np.atleast_1d(np.asarray(T_bar, dtype=float))
    if mode is ValidationMode.UNBOUNDED:
        if bars.size not in (1, schedule.n_cycles):
            add("interval_observation_time", "T_bar must be scalar or one value per cycle")
        else:
            bars_full = np.broadcast_to(bars, (schedule.n_cycles,))
            bad = np.nonzero(schedule.T_even <= bars_full)[0]
            if bad.size:
                add("interval_observation_time", f"T_even <= T_bar on cycles {bad.tolist()}")
            if bars.size == 1 and T_star <= bars[0]:
                add("observation_time", f"inf T_even = {T_star} <= T_bar = {bars[0]}")
    elif T_star <= bars.max():
        add("observation_time", f"T* = inf T_even = {T_star} <= T_bar = {bars.max()}")

    if mode is ValidationMode.GENERAL:
        try:
            rf = ratio_floor(profile.tails)
        except UndecidableError:
            ms = np.array([b[0] for b in profile.bounds])
            mo = np.array([b[2] for b in profile.bounds])
            rf = np.inf if not np.any(mo) else float(np.min(ms[mo > 0] / mo[mo > 0]))
            rep.notes.append("ratio floor: explicit tail, checked over materialized cycles only")
        if not rf > 0:
            add("ratio_floor", "inf m_{2n}/M_{2n+1} = 0")

    if mode in (ValidationMode.RESTRICTED, ValidationMode.UNBOUNDED):
        T_odd_sup = _tail_extreme(schedule.T_odd_tail, schedule.T_odd, "sup", rep.notes, "T_odd")
        if T_odd_sup > tau * (1 + 1e-12):
            add("delayed_interval_exceeds_delay", f"sup T_odd = {T_odd_sup} > tau = {tau}")

    if mode is ValidationMode.PERIODIC and not schedule.is_periodic:
        add("not_periodic", "active and delayed interval lengths are not constant")
    return rep
