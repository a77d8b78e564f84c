"""Contraction and growth constants, stability conditions and their confrontation with traces.

Four certificate chains are supported:

* ``augmented``: augmented energy ``E``; contraction ``c_n`` from the
  conservative observability constant, growth ``exp(C (xi + 1/xi) M T)``.
* ``standard``: standard energy ``E_S`` when delayed intervals are no longer
  than the delay; contraction ``c_hat_n``, cycle bracket ``e^x c_hat + e^x - 1``.
* ``damped``: ``E_S`` with contraction ``d_n / (d_n + 1)`` from the damped
  observability constant of each active interval.
* ``boundary``: as ``damped`` with ``d_n`` from quasi-observability constants
  ``alpha`` of the boundary-damped wave.
"""
from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, InsufficientDataError, UndecidableError
from .schedule import BoundTails, SwitchingSchedule, Tail

PASS, FAIL, UNDECIDABLE, NOT_APPLICABLE = "PASS", "FAIL", "UNDECIDABLE", "NOT_APPLICABLE"
CONVERGES, DIVERGES = "CONVERGES", "DIVERGES"
UNDERFLOW = 1e-14


def _positive(**kw):
    for k, v in kw.items():
        if not (v > 0 and math.isfinite(v)):
            raise ConfigurationError(f"{k} must be positive and finite, got {v}")


def contraction_cn(c: float, C: float, T_2n: float, M_2n: float, m_2n: float) -> float:
    """``4c(1+4C^2T^2M^2) / (m + 4c(1+4C^2T^2M^2))``."""
    _positive(c=c, C=C, T_2n=T_2n, M_2n=M_2n, m_2n=m_2n)
    q = 4 * c * (1 + 4 * C**2 * T_2n**2 * M_2n**2)
    return q / (m_2n + q)


def contraction_cn_hat(c: float, C1: float, T_2n: float, M_2n: float, m_2n: float) -> float:
    """``2c(1+4C1^2T^2M^2) / (m + 2c(1+4C1^2T^2M^2))``."""
    _positive(c=c, C1=C1, T_2n=T_2n, M_2n=M_2n, m_2n=m_2n)
    q = 2 * c * (1 + 4 * C1**2 * T_2n**2 * M_2n**2)
    return q / (m_2n + q)


def contraction_dn_hat(d_n: float) -> float:
    _positive(d_n=d_n)
    return d_n / (d_n + 1.0)


def boundary_dn(alpha1: float, alpha2: float, alpha3: float, M_2n: float, m_2n: float, T_2n: float, T_bar: float) -> float:
    """``(alpha1 M m + alpha2 m + alpha3) / (m (T - T_bar))``."""
    if T_2n <= T_bar:
        raise ConfigurationError(f"active length {T_2n} must exceed the observation time {T_bar}")
    _positive(M_2n=M_2n, m_2n=m_2n)
    if min(alpha1, alpha2, alpha3) < 0 or alpha1 + alpha2 + alpha3 <= 0:
        raise ConfigurationError("alphas must be nonnegative and not all zero")
    return (alpha1 * M_2n * m_2n + alpha2 * m_2n + alpha3) / (m_2n * (T_2n - T_bar))


def growth_factor_E(C: float, xi: float, M_odd: float, T_odd: float) -> float:
    """``exp(C (xi + 1/xi) M T)``, the worst-case amplification of ``E`` on a delayed interval."""
    _positive(C=C, xi=xi)
    if M_odd < 0 or T_odd < 0:
        raise ConfigurationError("M_odd and T_odd must be nonnegative")
    return math.exp(C * (xi + 1.0 / xi) * M_odd * T_odd)


def cycle_bound_ES(C2: float, M_odd: float, T_odd: float, c_hat: float) -> float:
    """``e^x c_hat + e^x - 1`` with ``x = C2 M T``; the per-cycle factor on ``E_S``."""
    if C2 < 0 or M_odd < 0 or T_odd < 0 or not 0 <= c_hat <= 1:
        raise ConfigurationError("need C2, M_odd, T_odd >= 0 and c_hat in [0, 1]")
    g = math.exp(C2 * M_odd * T_odd)
    return g * c_hat + g - 1.0


# ---------------------------------------------------------------- series


class Series(str, enum.Enum):
    AUGMENTED = "augmented"  # summable delay budget, divergent gain series
    AUGMENTED_PRODUCT = "augmented_product"  # log-product of the E cycle factors
    STANDARD_PRODUCT = "standard_product"  # log-product of the E_S cycle factors
    DAMPED_OBSERVABILITY = "damped_observability"  # summable delay budget, sum log d_hat = -inf
    BOUNDARY_EXPLICIT = "boundary_explicit"  # as above with the explicit boundary d_n


@dataclass
class SeriesVerdict:
    which: str
    verdict: str
    parts: list[tuple[str, str, str]] = field(default_factory=list)  # (series, CONVERGES/DIVERGES/..., reason)

    def to_dict(self) -> dict:
        return {
            "which": self.which,
            "verdict": self.verdict,
            "parts": [{"series": a, "behaviour": b, "reason": c} for a, b, c in self.parts],
        }


def _key(t: Tail) -> tuple[float, float]:
    return t.growth()


def _gain_series_tail(bounds: BoundTails, T_even: Tail, C: float) -> Tail:
    """Tail asymptotically equivalent to ``m / (1 + 4 C^2 T^2 M^2)``."""
    x = T_even * bounds.M_even
    if x.limit() == math.inf:
        return bounds.m * (x.reciprocal() ** 2) * (1.0 / (4 * C**2))
    L = x.limit()
    return bounds.m * (1.0 / (1 + 4 * C**2 * L**2))


def _diverges(t: Tail) -> bool:
    return t.limit() > 0 or not t.summable()


def _budget(bounds: BoundTails, T_odd: Tail) -> tuple[Tail, tuple[str, str, str]]:
    a = bounds.M_odd * T_odd
    beh = CONVERGES if a.summable() else DIVERGES
    return a, ("sum M_odd T_odd", beh, f"{a.kind} tail, ratio {a.ratio:g}, exponent {a.exponent:g}")


def _product_series(a: Tail, z: Tail, term, k_small: float, z_small: float, label: str) -> tuple[str, str]:
    """Decide ``sum term(a_n, z_n) = -inf`` from the asymptotics of ``a`` and ``z``.

    Near zero the summand behaves like ``k_small * a - z_small * z``.
    """
    aL, zL = a.limit(), z.limit()
    if a.summable():
        if _diverges(z):
            return PASS, f"{label}: delay budget summable and gain series diverges"
        return FAIL, f"{label}: both series converge, the log-product stays finite"
    if aL == math.inf:
        if zL == math.inf:
            return UNDECIDABLE, f"{label}: both sequences unbounded"
        return FAIL, f"{label}: growth exponent unbounded"
    if zL == math.inf:
        return PASS, f"{label}: contraction tends to zero"
    if aL == 0 and zL == 0:
        ka, zz = a * k_small, z * z_small
        if _key(zz) > _key(ka):
            return PASS, f"{label}: gain term dominates the delay term asymptotically"
        if _key(zz) < _key(ka):
            return FAIL, f"{label}: delay term dominates the gain term asymptotically"
        if ka.scale < zz.scale:
            return PASS, f"{label}: same asymptotic class, gain coefficient larger"
        if ka.scale > zz.scale:
            return FAIL, f"{label}: same asymptotic class, delay coefficient larger"
        return UNDECIDABLE, f"{label}: leading terms cancel"
    L = term(aL, zL)
    if abs(L) <= 1e-14:
        return UNDECIDABLE, f"{label}: summand tends to 0 from an undetermined side"
    return (PASS if L < 0 else FAIL), f"{label}: summand tends to {L:.6g}"


def check_series(
    which: Series | str,
    bounds: BoundTails,
    T_even: Tail,
    T_odd: Tail,
    *,
    c: float | None = None,
    C: float = 1.0,
    C2: float = 1.0,
    xi: float | None = None,
    d_tail: Tail | None = None,
    alphas: tuple[float, float, float] | None = None,
    T_bar: float | None = None,
) -> SeriesVerdict:
    """Decide a stability series condition symbolically from the declared tails.

    Any explicit (non-family) tail makes the verdict UNDECIDABLE.
    """
    which = Series(which)
    try:
        return _check_series(which, bounds, T_even, T_odd, c, C, C2, xi, d_tail, alphas, T_bar)
    except UndecidableError as exc:
        return SeriesVerdict(which.value, UNDECIDABLE, [("all", UNDECIDABLE, str(exc))])


def _check_series(which, bounds, T_even, T_odd, c, C, C2, xi, d_tail, alphas, T_bar) -> SeriesVerdict:
    a, part_a = _budget(bounds, T_odd)
    out = SeriesVerdict(which.value, FAIL, [part_a])
    if which is Series.AUGMENTED:
        z = _gain_series_tail(bounds, T_even, C)
        div = _diverges(z)
        out.parts.append(("sum m/(1+4C^2T^2M^2)", DIVERGES if div else CONVERGES, f"asymptotic {z.kind} tail"))
        out.verdict = PASS if (a.summable() and div) else FAIL
        return out
    if which in (Series.AUGMENTED_PRODUCT, Series.STANDARD_PRODUCT):
        if c is None:
            raise ConfigurationError("product series need the observability constant c")
        z = _gain_series_tail(bounds, T_even, C)
        if which is Series.AUGMENTED_PRODUCT:
            if xi is None:
                raise ConfigurationError("the augmented product series needs xi")
            k = C * (xi + 1.0 / xi)
            term = lambda aL, zL: k * aL - math.log1p(zL / (4 * c))  # noqa: E731
            verdict, why = _product_series(a, z, term, k, 1.0 / (4 * c), "log-product of E factors")
        else:
            term = lambda aL, zL: C2 * aL + math.log(1 / (1 + zL / (2 * c)) + 1 - math.exp(-C2 * aL))  # noqa: E731
            verdict, why = _product_series(a, z, term, 2 * C2, 1.0 / (2 * c), "log-product of E_S factors")
        out.parts.append(("sum of log cycle factors", "-inf" if verdict == PASS else verdict, why))
        out.verdict = verdict
        return out
    if which is Series.DAMPED_OBSERVABILITY:
        if d_tail is None:
            raise ConfigurationError("damped series needs the damped observability tail")
        inv = d_tail.reciprocal()
        div = _diverges(inv)
        out.parts.append(("sum log d_hat", "-inf" if div else "finite", "via sum 1/d_n"))
        out.verdict = PASS if (a.summable() and div) else FAIL
        return out
    # boundary explicit
    if alphas is None or T_bar is None:
        raise ConfigurationError("boundary series needs alphas and T_bar")
    TL = T_even.limit()
    if TL == math.inf:
        gap = T_even
    elif TL > T_bar:
        gap = Tail.constant(TL - T_bar)
    else:
        out.parts.append(("sum m(T-T_bar)/(...)", UNDECIDABLE, "active lengths approach T_bar"))
        out.verdict = UNDECIDABLE
        return out
    terms = [t for al, t in zip(alphas, (bounds.M_even * bounds.m * alphas[0], bounds.m * alphas[1], Tail.constant(alphas[2]))) if al > 0]
    terms = [t for t in terms if t.scale > 0]
    if not terms:
        raise ConfigurationError("alphas must not all vanish")
    top = max(_key(t) for t in terms)
    lead = [t for t in terms if _key(t) == top]
    den = Tail(sum(t.scale for t in lead), lead[0].ratio, lead[0].exponent)
    q = bounds.m * gap / den
    div = _diverges(q)
    out.parts.append(("sum m(T-T_bar)/(a1 M m + a2 m + a3)", DIVERGES if div else CONVERGES, f"asymptotic {q.kind} tail"))
    out.verdict = PASS if (a.summable() and div) else FAIL
    return out


# ---------------------------------------------------------------- sup conditions


@dataclass
class ExponentialVerdict:
    condition: str
    value: float
    verdict: str
    note: str = ""

    @property
    def passed(self) -> bool:
        return self.verdict == PASS

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _cn_vec(c, C, T, M, m, factor):
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        q = factor * c * (1 + 4 * C**2 * T**2 * np.asarray(M, float) ** 2)
        y = np.asarray(m, float) / q
        return np.where(np.isfinite(y), 1.0 / (1.0 + y), np.where(np.isinf(y), 0.0, 1.0))


def _sup_over_tails(expr, tails: list[Tail], n_eval: int = 20000) -> float:
    """Upper bound, tight in practice, of ``sup_n expr(*[t(n) for t in tails])``.

    ``expr`` must be monotone in each argument.  Each tail is monotone past its
    last critical index, so beyond ``n_eval`` the box spanned by the value at
    ``n_eval`` and the limit bounds every remaining term.
    """
    for t in tails:
        if not t.decidable:
            raise UndecidableError("explicit tail: supremum over all cycles is undecidable")
    N = max([n_eval] + [max(t._candidates()) + 2 for t in tails])
    N = min(N, 10**7)
    n = np.arange(N)
    with np.errstate(over="ignore", invalid="ignore"):
        best = float(np.nanmax(expr(*[np.asarray(t(n), float) for t in tails])))
        corners = [(float(t(N)), t.limit()) for t in tails]
        for pick in np.ndindex(*([2] * len(tails))):
            v = float(expr(*[np.array([corners[i][p]]) for i, p in enumerate(pick)])[0])
            best = max(best, v if math.isfinite(v) or v > 0 else best)
    return best


def check_exponential(
    chain: str,
    bounds: BoundTails,
    schedule: SwitchingSchedule,
    *,
    c: float | None = None,
    C: float = 1.0,
    C2: float = 1.0,
    xi: float | None = None,
    d_tail: Tail | None = None,
    alphas: tuple[float, float, float] | None = None,
    T_bar: float | None = None,
) -> ExponentialVerdict:
    """Sup condition for exponential decay on a periodic schedule; PASS iff the value is below 1."""
    if not schedule.is_periodic:
        raise ConfigurationError("exponential conditions need a periodic schedule")
    Ts, Tt = float(schedule.T_even[0]), float(schedule.T_odd[0])
    try:
        if chain == "augmented":
            k = C * (xi + 1.0 / xi)
            expr = lambda m, M, Mo: np.exp(k * Mo * Tt) * _cn_vec(c, C, Ts, M, m, 4.0)  # noqa: E731
            name = "sup exp((xi+1/xi) C M_odd T~) c_n"
            val = _sup_over_tails(expr, [bounds.m, bounds.M_even, bounds.M_odd])
        elif chain == "standard":
            expr = lambda m, M, Mo: np.exp(C2 * Mo * Tt) * (_cn_vec(c, C, Ts, M, m, 2.0) + 1) - 1  # noqa: E731
            name = "sup exp(C2 M_odd T~)(c_hat_n + 1) - 1"
            val = _sup_over_tails(expr, [bounds.m, bounds.M_even, bounds.M_odd])
        elif chain == "damped":
            if d_tail is None:
                raise ConfigurationError("damped chain needs d_n")
            expr = lambda d, Mo: np.exp(C2 * Mo * Tt) * (d / (d + 1) + 1) - 1  # noqa: E731
            name = "sup exp(C M_odd T~)(d_hat_n + 1) - 1"
            val = _sup_over_tails(expr, [d_tail, bounds.M_odd])
        elif chain == "boundary":
            a1, a2, a3 = alphas
            num = lambda m, M: a1 * M * m + a2 * m + a3  # noqa: E731
            expr = lambda m, M, Mo: np.exp(C2 * Mo * Tt) * (  # noqa: E731
                num(m, M) / (num(m, M) + m * (Ts - T_bar)) + 1
            ) - 1
            name = "sup exp(C M_odd T~)(d_hat_n + 1) - 1 (explicit d_n)"
            val = _sup_over_tails(expr, [bounds.m, bounds.M_even, bounds.M_odd])
        else:
            raise ConfigurationError(f"unknown chain {chain!r}")
    except UndecidableError as exc:
        return ExponentialVerdict(chain, float("nan"), UNDECIDABLE, str(exc))
    return ExponentialVerdict(name, val, PASS if val < 1 else FAIL)


@dataclass
class WindowedVerdict:
    window: int
    value: float
    verdict: str
    note: str = "materialized cycles only"

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def windowed_product(factors, covers_tail: bool = True) -> WindowedVerdict:
    """Smallest over window lengths ``w`` of the largest product over consecutive blocks of ``w`` factors.

    ``covers_tail`` says whether the given factors represent every cycle (for
    instance constant tails).  Without it a product below one only yields
    UNDECIDABLE.
    """
    f = np.asarray(factors, dtype=float)
    if f.size == 0:
        raise InsufficientDataError("no cycle factors")
    best_w, best = 1, math.inf
    with np.errstate(divide="ignore", over="ignore"):
        lf = np.log(f)
        for w in range(1, f.size + 1):
            nb = f.size // w
            val = float(np.exp(np.max(np.sum(lf[: nb * w].reshape(nb, w), axis=1))))
            if val < best:
                best_w, best = w, val
    if best >= 1:
        return WindowedVerdict(best_w, best, FAIL)
    if not covers_tail:
        return WindowedVerdict(best_w, best, UNDECIDABLE, "materialized cycles only; tails beyond them are unknown")
    return WindowedVerdict(best_w, best, PASS)


# ---------------------------------------------------------------- measured side


@dataclass
class CycleRow:
    n: int
    ratio: float | None
    bound: float
    margin: float | None
    verdict: str

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def per_cycle_verify(energies_at_switch, bounds, tol: float = 0.02, stride: int = 1, underflow: float = UNDERFLOW) -> list[CycleRow]:
    """Compare ``E(t_{k+stride}) / E(t_k)`` at even ``k = 2n`` with ``bounds[n] + tol``.

    ``stride = 1`` checks active intervals, ``stride = 2`` whole cycles.  Ratios
    whose denominator is below ``underflow * E(t_0)`` are skipped.
    """
    e = np.asarray(energies_at_switch, dtype=float)
    b = np.broadcast_to(np.asarray(bounds, dtype=float), (max(len(e) // 2, 1),))
    floor = underflow * max(e[0], 0.0) if e.size else 0.0
    rows = []
    for n in range(len(e) // 2):
        k = 2 * n
        if k + stride >= len(e):
            break
        if e[k] <= floor or e[k] <= 0:
            rows.append(CycleRow(n, None, float(b[n]), None, "SKIPPED"))
            continue
        r = float(e[k + stride] / e[k])
        rows.append(CycleRow(n, r, float(b[n]), float(b[n] + tol - r), PASS if r <= b[n] + tol else FAIL))
    return rows


@dataclass(frozen=True)
class DecayFit:
    mu: float
    gamma: float
    residual: float
    points: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def fit_decay_rate(times, energies=None, which: str = "E", underflow: float = UNDERFLOW) -> DecayFit:
    """Least-squares line through ``(t_{2n}, ln E(t_{2n}))``; ``mu = -slope``.

    Accepts a trace (cycle starts are taken from it) or explicit arrays.
    """
    if energies is None:
        tr = times
        e = tr.switch_energy(which)[0::2]
        t = tr.switch_times[: len(tr.switch_index)][0::2]
    else:
        t, e = np.asarray(times, float), np.asarray(energies, float)
    keep = (e > 0) & (e >= underflow * (e[0] if e.size and e[0] > 0 else 0.0))
    t, e = t[keep], e[keep]
    if t.size < 4:
        raise InsufficientDataError(f"need at least 4 positive cycle energies, got {t.size}")
    y = np.log(e)
    slope, icpt = np.polyfit(t, y, 1)
    res = float(np.max(np.abs(y - (slope * t + icpt))))
    return DecayFit(float(-slope) + 0.0, float(math.exp(icpt) / e[0]), res, int(t.size))


# ---------------------------------------------------------------- report


@dataclass
class ChainResult:
    name: str
    energy: str
    applicable: bool
    reason: str = ""
    contraction: list[float] = field(default_factory=list)
    growth: list[float] = field(default_factory=list)
    cycle_bound: list[float] = field(default_factory=list)
    series: list[SeriesVerdict] = field(default_factory=list)
    exponential: ExponentialVerdict | None = None
    windowed: WindowedVerdict | None = None
    active_check: list[CycleRow] = field(default_factory=list)
    cycle_check: list[CycleRow] = field(default_factory=list)
    exponential_check: list[CycleRow] = field(default_factory=list)
    fit: DecayFit | None = None
    extra: dict = field(default_factory=dict)

    @property
    def stability(self) -> str:
        if not self.applicable:
            return NOT_APPLICABLE
        verdicts = [s.verdict for s in self.series]
        if self.exponential is not None:
            verdicts.append(self.exponential.verdict)
        if self.windowed is not None:
            verdicts.append(self.windowed.verdict)
        if PASS in verdicts:
            return PASS
        if UNDECIDABLE in verdicts:
            return UNDECIDABLE
        return FAIL

    @property
    def measured_ok(self) -> bool:
        rows = self.active_check + self.cycle_check + self.exponential_check
        return all(r.verdict != FAIL for r in rows)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "energy": self.energy,
            "applicable": self.applicable,
            "reason": self.reason,
            "stability": self.stability,
            "measured_ok": self.measured_ok,
            "contraction": self.contraction,
            "growth": self.growth,
            "cycle_bound": self.cycle_bound,
            "series": [s.to_dict() for s in self.series],
            "exponential": None if self.exponential is None else self.exponential.to_dict(),
            "windowed": None if self.windowed is None else self.windowed.to_dict(),
            "active_check": [r.to_dict() for r in self.active_check],
            "cycle_check": [r.to_dict() for r in self.cycle_check],
            "exponential_check": [r.to_dict() for r in self.exponential_check],
            "fit": None if self.fit is None else self.fit.to_dict(),
            "extra": self.extra,
        }


@dataclass
class CertificateReport:
    constants: dict
    chains: dict[str, ChainResult]
    validation: dict | None = None
    dissipation: dict | None = None
    notes: list[str] = field(default_factory=list)

    @property
    def measured_ok(self) -> bool:
        return all(ch.measured_ok for ch in self.chains.values() if ch.applicable)

    @property
    def exit_code(self) -> int:
        """0 certified and consistent, 1 fail, 2 undecidable."""
        if not self.measured_ok or (self.dissipation is not None and not self.dissipation.get("passed", True)):
            return 1
        states = [ch.stability for ch in self.chains.values()]
        if PASS in states:
            return 0
        if UNDECIDABLE in states:
            return 2
        return 1

    @property
    def verdict(self) -> str:
        return {0: PASS, 1: FAIL, 2: UNDECIDABLE}[self.exit_code]

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "exit_code": self.exit_code,
            "constants": self.constants,
            "chains": {k: v.to_dict() for k, v in self.chains.items()},
            "validation": self.validation,
            "dissipation": self.dissipation,
            "notes": self.notes,
        }

    def to_json(self) -> str:
        return json.dumps(_jsonable(self.to_dict()), indent=2, sort_keys=True)

    def to_table(self) -> str:
        lines = [f"overall: {self.verdict}"]
        for k in sorted(self.constants):
            lines.append(f"  {k:<14} {_fmt(self.constants[k])}")
        for ch in self.chains.values():
            lines.append(f"chain {ch.name} ({ch.energy}): {ch.stability}" + ("" if ch.applicable else f" - {ch.reason}"))
            if not ch.applicable:
                continue
            for s in ch.series:
                lines.append(f"  series {s.which:<22} {s.verdict}")
            if ch.exponential is not None:
                lines.append(f"  exponential {ch.exponential.value:.6g} {ch.exponential.verdict}")
            if ch.windowed is not None:
                lines.append(f"  windowed (w={ch.windowed.window}) {ch.windowed.value:.6g} {ch.windowed.verdict}")
            lines.append("   n   contraction   measured   cycle_bound   measured   verdict")
            for i, row in enumerate(ch.active_check):
                cyc = ch.cycle_check[i] if i < len(ch.cycle_check) else None
                v = row.verdict if cyc is None or cyc.verdict in (PASS, "SKIPPED") else cyc.verdict
                lines.append(
                    f"  {row.n:>2}   {_fmt(row.bound):>11}   {_fmt(row.ratio):>8}   "
                    f"{_fmt(cyc.bound if cyc else None):>11}   {_fmt(cyc.ratio if cyc else None):>8}   {v}"
                )
            if ch.fit is not None:
                lines.append(f"  fitted rate mu={ch.fit.mu:.6g} gamma={ch.fit.gamma:.6g}")
        return "\n".join(lines)


def _fmt(x) -> str:
    if x is None:
        return "-"
    if isinstance(x, float):
        return f"{x:.6g}"
    return str(x)


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else str(x)
    if isinstance(x, np.bool_):
        return bool(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    return x


# ---------------------------------------------------------------- orchestration

CHAINS = ("augmented", "standard", "damped", "boundary")


def _tail_of(values) -> Tail:
    v = np.asarray(values, dtype=float)
    if np.allclose(v, v[0], rtol=1e-9, atol=0):
        return Tail.constant(float(v[0]))
    return Tail.explicit(v)


def _inf_tail(tail: Tail, materialized) -> float:
    return tail.inf() if tail.decidable else float(np.min(materialized))


def build_certificate(
    system,
    schedule: SwitchingSchedule,
    profile,
    *,
    T_bar: float,
    trace=None,
    chains=("augmented", "standard", "damped"),
    c: float | None = None,
    xi: float | None = None,
    xi_rule: str = "half",
    alphas: tuple[float, float, float] | None = None,
    d_values=None,
    n_steps: int = 4096,
    tol_cycle: float = 0.02,
    truncation: bool = True,
) -> CertificateReport:
    """Compute every constant of the requested chains and confront them with ``trace``.

    ``c`` defaults to the observability constant of ``system`` at the shortest
    active length; ``d_values`` (per cycle) default to damped observability
    constants computed over each active interval.
    """
    from .energy import check_dissipation, select_xi
    from .errors import ConditionViolatedError, ResolutionError, UnobservableError
    from .modal import effective_tails
    from .observability import damped_observability_constant, observability_constant, truncation_check
    from .schedule import ValidationMode, validate

    unknown = set(chains) - set(CHAINS)
    if unknown:
        raise ConfigurationError(f"unknown chains {sorted(unknown)}")
    eff = effective_tails(profile, system)
    lo1, hi1, hi2 = system.relative_bounds()
    eff_bounds = [(m * lo1, M * hi1, Mo * hi2) for m, M, Mo in profile.bounds]
    C, C2 = system.embedding_constant(1), system.embedding_constant(2)
    T_star = _inf_tail(schedule.T_even_tail, schedule.T_even)
    periodic = schedule.is_periodic
    consts: dict = {"C": C, "C2": C2, "T_star": T_star, "T_bar": T_bar, "tau": schedule.tau, "periodic": periodic}
    if periodic:
        consts["T_tilde"] = float(schedule.T_odd[0])
    notes: list[str] = []
    tails_known = all(
        t.decidable and t.kind == "constant"
        for t in (eff.m, eff.M_even, eff.M_odd, schedule.T_even_tail, schedule.T_odd_tail)
    )

    if c is None and {"augmented", "standard"} & set(chains):
        try:
            c = observability_constant(system, T_star)
            if truncation and system.K > 1:
                tc = truncation_check(system, T_star)
                consts["truncation"] = tc.to_dict()
                if tc.flagged:
                    notes.append(f"observability constant moved {tc.rel_change:.1%} between K/2 and K modes")
        except UnobservableError as exc:
            notes.append(f"conservative observability fails: {exc}")
    consts["c"] = c
    if xi is None:
        try:
            xc = select_xi(eff, xi_rule)
            xi = xc.xi
            consts["xi_choice"] = xc.to_dict()
        except (ConditionViolatedError, UndecidableError) as exc:
            notes.append(f"no admissible xi: {exc}")
    consts["xi"] = xi

    results: dict[str, ChainResult] = {}
    tr = None if trace is None else (trace.with_xi(xi) if xi is not None else trace)
    kw = dict(c=c, C=C, C2=C2, xi=xi)

    def measured(ch: ChainResult, energy: str, active_bound, cycle_bound):
        if tr is None:
            return
        e = tr.switch_energy(energy)
        ch.active_check = per_cycle_verify(e, active_bound, tol_cycle, stride=1)
        ch.cycle_check = per_cycle_verify(e, cycle_bound, tol_cycle, stride=2)
        if ch.exponential is not None and ch.exponential.passed:
            ch.exponential_check = per_cycle_verify(e, ch.exponential.value, tol_cycle, stride=2)
        try:
            ch.fit = fit_decay_rate(tr, which=energy)
        except InsufficientDataError as exc:
            ch.extra["fit"] = str(exc)

    def structural(mode, name):
        rep = validate(schedule, profile, mode, T_bar)
        return rep, (None if rep.valid else f"{name} hypotheses fail: {', '.join(rep.names)}")

    n_cyc = schedule.n_cycles
    Te, To = schedule.T_even, schedule.T_odd

    if "augmented" in chains:
        rep, why = structural(ValidationMode.PERIODIC if periodic else ValidationMode.GENERAL, "augmented")
        ch = ChainResult("augmented", "E", why is None)
        missing = [name for name, gone in (("observability constant", c is None), ("admissible xi", xi is None), ("D1 dominating the observation form", lo1 <= 0)) if gone]
        if why is None and missing:
            ch.applicable, why = False, "missing " + ", ".join(missing)
        ch.reason = why or ""
        if ch.applicable:
            ch.contraction = [contraction_cn(c, C, Te[n], eff_bounds[n][1], eff_bounds[n][0]) for n in range(n_cyc)]
            ch.growth = [growth_factor_E(C, xi, eff_bounds[n][2], To[n]) for n in range(n_cyc)]
            ch.cycle_bound = [g * k for g, k in zip(ch.growth, ch.contraction)]
            args = (eff, schedule.T_even_tail, schedule.T_odd_tail)
            ch.series = [check_series(Series.AUGMENTED, *args, **kw), check_series(Series.AUGMENTED_PRODUCT, *args, **kw)]
            if periodic:
                ch.exponential = check_exponential("augmented", eff, schedule, **kw)
                ch.windowed = windowed_product(ch.cycle_bound, tails_known)
            measured(ch, "E", ch.contraction, ch.cycle_bound)
        results["augmented"] = ch

    if "standard" in chains:
        rep, why = structural(ValidationMode.RESTRICTED, "standard")
        ch = ChainResult("standard", "E_S", why is None)
        missing = [name for name, gone in (("observability constant", c is None), ("D1 dominating the observation form", lo1 <= 0)) if gone]
        if why is None and missing:
            ch.applicable, why = False, "missing " + ", ".join(missing)
        ch.reason = why or ""
        if ch.applicable:
            ch.contraction = [contraction_cn_hat(c, C, Te[n], eff_bounds[n][1], eff_bounds[n][0]) for n in range(n_cyc)]
            ch.growth = [math.exp(C2 * eff_bounds[n][2] * To[n]) for n in range(n_cyc)]
            ch.cycle_bound = [cycle_bound_ES(C2, eff_bounds[n][2], To[n], k) for n, k in enumerate(ch.contraction)]
            args = (eff, schedule.T_even_tail, schedule.T_odd_tail)
            ch.series = [check_series(Series.AUGMENTED, *args, **kw), check_series(Series.STANDARD_PRODUCT, *args, **kw)]
            if periodic:
                ch.exponential = check_exponential("standard", eff, schedule, **kw)
                ch.windowed = windowed_product(ch.cycle_bound, tails_known)
            measured(ch, "E_S", ch.contraction, ch.cycle_bound)
        results["standard"] = ch

    if "damped" in chains:
        rep, why = structural(ValidationMode.UNBOUNDED, "damped")
        ch = ChainResult("damped", "E_S", why is None, why or "")
        if ch.applicable:
            if d_values is None:
                cache: dict = {}
                d_values = []
                try:
                    for n in range(n_cyc):
                        key = (tuple(profile.b1[n]), float(Te[n]))
                        if key not in cache:
                            cache[key] = damped_observability_constant(system, profile.b1[n], float(Te[n]), n_steps)
                        d_values.append(cache[key])
                except UnobservableError as exc:
                    ch.applicable, ch.reason = False, f"damped observability fails: {exc}"
            if ch.applicable:
                d = [float(x) for x in np.broadcast_to(np.asarray(d_values, float), (n_cyc,))]
                d_tail = _tail_of(d)
                ch.extra["d"] = d
                ch.contraction = [contraction_dn_hat(x) for x in d]
                ch.growth = [math.exp(C2 * eff_bounds[n][2] * To[n]) for n in range(n_cyc)]
                ch.cycle_bound = [cycle_bound_ES(C2, eff_bounds[n][2], To[n], k) for n, k in enumerate(ch.contraction)]
                ch.series = [
                    check_series(Series.DAMPED_OBSERVABILITY, eff, schedule.T_even_tail, schedule.T_odd_tail, d_tail=d_tail)
                ]
                if periodic:
                    ch.exponential = check_exponential("damped", eff, schedule, C2=C2, d_tail=d_tail)
                    ch.windowed = windowed_product(ch.cycle_bound, tails_known)
                measured(ch, "E_S", ch.contraction, ch.cycle_bound)
        results["damped"] = ch

    if "boundary" in chains:
        rep, why = structural(ValidationMode.UNBOUNDED, "boundary")
        ch = ChainResult("boundary", "E_S", why is None, why or "")
        if ch.applicable and alphas is None:
            ch.applicable, ch.reason = False, "needs quasi-observability constants alpha"
        if ch.applicable:
            raw, Mo_eff = profile.tails, eff.M_odd
            bt = BoundTails(raw.m, raw.M_even, Mo_eff)
            d = [boundary_dn(*alphas, profile.bounds[n][1], profile.bounds[n][0], Te[n], T_bar) for n in range(n_cyc)]
            ch.extra["d"] = d
            ch.contraction = [contraction_dn_hat(x) for x in d]
            ch.growth = [math.exp(C2 * eff_bounds[n][2] * To[n]) for n in range(n_cyc)]
            ch.cycle_bound = [cycle_bound_ES(C2, eff_bounds[n][2], To[n], k) for n, k in enumerate(ch.contraction)]
            ch.series = [
                check_series(
                    Series.BOUNDARY_EXPLICIT, bt, schedule.T_even_tail, schedule.T_odd_tail, alphas=alphas, T_bar=T_bar
                )
            ]
            if periodic:
                ch.exponential = check_exponential("boundary", bt, schedule, C2=C2, alphas=alphas, T_bar=T_bar)
                ch.windowed = windowed_product(ch.cycle_bound, tails_known)
            measured(ch, "E_S", ch.contraction, ch.cycle_bound)
        results["boundary"] = ch

    diss = None
    if tr is not None:
        from .schedule import ValidationMode as VM

        mode = None
        if results.get("augmented") and results["augmented"].applicable:
            mode = VM.PERIODIC if periodic else VM.GENERAL
        elif results.get("standard") and results["standard"].applicable:
            mode = VM.RESTRICTED
        elif any(results.get(k) and results[k].applicable for k in ("damped", "boundary")):
            mode = VM.UNBOUNDED
        if mode is not None:
            try:
                diss = check_dissipation(tr, schedule, profile, xi, mode, system).to_dict()
                diss["mode"] = mode.value
            except ResolutionError as exc:
                notes.append(f"dissipation check skipped: {exc}")
    return CertificateReport(consts, results, None, diss, notes)
