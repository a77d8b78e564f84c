"""Energy functionals and checks of their differential estimates on traces."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import polynomial as P
from scipy.integrate import simpson

from .errors import ConditionViolatedError, ConfigurationError, ResolutionError, UndecidableError
from .modal import DelayHistory, ModalState, ModalSystem, Trace, delay_integral, effective_tails, standard_energy
from .schedule import BoundTails, FeedbackProfile, SwitchingSchedule, ValidationMode, ratio_floor

XI_RULES = ("half", "near_one")


@dataclass(frozen=True)
class XiChoice:
    """Weight of the delay integral; ``xi < inf_ratio`` must hold."""

    xi: float
    inf_ratio: float
    rule: str = "half"
    alternative: float = float("nan")

    def to_dict(self) -> dict:
        return {"xi": self.xi, "inf_ratio": self.inf_ratio, "rule": self.rule, "alternative": self.alternative}


def select_xi(bounds: FeedbackProfile | BoundTails, rule: str = "half", system: ModalSystem | None = None) -> XiChoice:
    """Half the infimum of ``m_{2n} / M_{2n+1}`` (or ``min(1, 0.99 inf)`` with ``rule='near_one'``).

    With no delayed gain at all the ratio is infinite and ``xi = 1``, the
    minimizer of ``xi + 1/xi``.
    """
    if rule not in XI_RULES:
        raise ConfigurationError(f"unknown xi rule {rule!r}")
    if isinstance(bounds, FeedbackProfile):
        tails = effective_tails(bounds, system) if system is not None else bounds.tails
    else:
        tails = bounds
    try:
        r = ratio_floor(tails)
    except UndecidableError as exc:
        raise UndecidableError("ratio floor needs decidable tails for m and M_odd") from exc
    if not r > 0:
        raise ConditionViolatedError(f"inf m_2n/M_2n+1 = {r}: the delayed gain is not dominated")
    if math.isinf(r):
        return XiChoice(1.0, r, rule, 1.0)
    half, near = 0.5 * r, min(1.0, 0.99 * r)
    return XiChoice(half if rule == "half" else near, r, rule, near if rule == "half" else half)


def energy_standard(state, system=None) -> float:
    """Kinetic plus potential energy; modal states need the system's eigenvalues."""
    if isinstance(state, ModalState):
        lam = system.lam if system is not None else np.ones_like(state.a)
        return float(standard_energy(lam, state.a, state.adot))
    from .wave import WaveState, wave_energy

    if isinstance(state, WaveState):
        return wave_energy(state, system)
    raise ConfigurationError(f"no energy for {type(state).__name__}")


def energy_full(
    state: ModalState,
    history: DelayHistory,
    xi: float,
    profile: FeedbackProfile,
    schedule: SwitchingSchedule,
    system: ModalSystem,
) -> float:
    """Standard energy plus ``xi/2`` times the weighted delay window integral."""
    if abs(history.t_last - state.t) > 1e-9 * max(1.0, abs(state.t)):
        raise ConfigurationError("history does not end at the state time")
    J = delay_integral(system, history, state.t, schedule, profile)
    return energy_standard(state, system) + 0.5 * xi * J


@dataclass
class IntervalCheck:
    k: int
    parity: str
    estimate: str
    pointwise: float
    integrated: float
    samples: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class DissipationReport:
    """Largest excess of the measured energy change over each estimate.

    Violations are divided by the initial energy so the tolerance is scale free.
    """

    tol: float
    checks: list[IntervalCheck] = field(default_factory=list)

    @property
    def max_violation(self) -> float:
        if not self.checks:
            return 0.0
        return max(max(c.pointwise, c.integrated) for c in self.checks)

    @property
    def violations(self) -> list[IntervalCheck]:
        return [c for c in self.checks if max(c.pointwise, c.integrated) > self.tol]

    @property
    def passed(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict:
        return {
            "tol": self.tol,
            "passed": self.passed,
            "max_violation": self.max_violation,
            "checks": [c.to_dict() for c in self.checks],
        }


def _families(mode: ValidationMode, schedule: SwitchingSchedule) -> list[str]:
    if mode is ValidationMode.GENERAL:
        return ["augmented"]
    if mode is ValidationMode.RESTRICTED:
        return ["standard"]
    if mode is ValidationMode.UNBOUNDED:
        return ["undelayed_trace"]
    fams = ["augmented"]
    if np.all(schedule.T_odd <= schedule.tau * (1 + 1e-12)):
        fams.append("standard")
    return fams


def _bound_rate(family, k, tr, sl, schedule, profile, xi, eff):
    """Right-hand side of the estimate at the samples of interval ``k``."""
    n = k // 2
    m, _, Mo = eff[n]
    if k % 2 == 0:
        if family == "augmented":
            return -0.5 * m * tr.vW1[sl], "E' <= -m/2 |v|_W^2"
        if family == "standard":
            return -m * tr.vW1[sl], "E_S' <= -m |v|_W1^2"
        b1 = P.polyval(tr.t[sl] - schedule.t[k], profile.coeffs(k))
        return -b1 * tr.vD1[sl], "E_S' <= -b1 |D1^1/2 v|^2"
    if family == "augmented":
        return 0.5 * Mo * (xi + 1.0 / xi) * tr.vW2[sl], "E' <= M/2 (xi + 1/xi) |v|_W^2"
    return 0.5 * Mo * (tr.vW2[sl] + tr.vdW2[sl]), "E_S' <= M/2 (|v|_W2^2 + |v(t-tau)|_W2^2)"


def _simpson3(t, f):
    """Simpson's rule on three possibly unequal nodes."""
    h0, h1 = t[1] - t[0], t[2] - t[1]
    H = h0 + h1
    return H / 6.0 * ((2 - h1 / h0) * f[0] + H * H / (h0 * h1) * f[1] + (2 - h0 / h1) * f[2])


def check_dissipation(
    trace: Trace,
    schedule: SwitchingSchedule,
    profile: FeedbackProfile,
    xi: float | None = None,
    mode: ValidationMode | str = ValidationMode.GENERAL,
    system: ModalSystem | None = None,
    tol: float | None = None,
    min_samples: int = 20,
) -> DissipationReport:
    """Compare measured energy changes with the differential estimates, interval by interval.

    Each interval is checked pointwise on centered three-sample windows
    (``E(t+) - E(t-)`` against the Simpson integral of the bound) and in
    integrated form across the whole interval.  Bounds use the feedback bounds
    measured in the observation seminorms.
    """
    mode = ValidationMode(mode)
    xi = trace.xi if xi is None else float(xi)
    tol = 10.0 * trace.dt**2 if tol is None else float(tol)
    if system is not None:
        lo1, hi1, hi2 = system.relative_bounds()
        eff = [(m * lo1, M * hi1, Mo * hi2) for m, M, Mo in profile.bounds]
    else:
        eff = list(profile.bounds)
    tr = trace.with_xi(xi)
    E0 = max(float(tr.E[0]), float(tr.E_S[0]))
    scale = E0 if E0 > 0 else 1.0
    rep = DissipationReport(tol)
    for family in _families(mode, schedule):
        if family == "augmented" and not xi > 0:
            raise ConfigurationError("the augmented energy needs xi > 0")
        energy = tr.E if family == "augmented" else tr.E_S
        for k in range(tr.n_complete_intervals):
            sl = tr.interval_slice(k)
            t = tr.t[sl]
            if t.size < min_samples:
                raise ResolutionError(f"interval {k} has {t.size} samples, need {min_samples}")
            e = energy[sl]
            B, name = _bound_rate(family, k, tr, sl, schedule, profile, xi, eff)
            dE = e[2:] - e[:-2]
            win = np.stack([t[:-2], t[1:-1], t[2:]])
            fb = np.stack([B[:-2], B[1:-1], B[2:]])
            intB = _simpson3(win, fb)
            point = np.max((dE - intB) / (win[2] - win[0])) / scale
            integ = (e[-1] - e[0] - simpson(B, x=t)) / (scale * (t[-1] - t[0]))
            rep.checks.append(
                IntervalCheck(k, "even" if k % 2 == 0 else "odd", name, float(point), float(integ), int(t.size))
            )
    return rep
