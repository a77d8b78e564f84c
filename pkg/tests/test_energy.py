import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from delaydamp.energy import check_dissipation, energy_full, energy_standard, select_xi
from delaydamp.errors import ConditionViolatedError, ResolutionError
from delaydamp.modal import DelayHistory, ModalState, ModalSystem, delay_integral, simulate
from delaydamp.schedule import BoundTails, Tail, ValidationMode, build_schedule, make_profile


def test_standard_energy_examples():
    assert energy_standard(ModalState(0, [1.0], [0.0]), ModalSystem.identity([1.0])) == 0.5
    assert energy_standard(ModalState(0, [1.0], [1.0]), ModalSystem.identity([4.0])) == 2.5
    assert energy_standard(ModalState(0, [0.0, 0.0], [0.0, 0.0]), ModalSystem.identity([1.0, 2.0])) == 0.0


def test_xi_is_half_the_ratio_floor():
    xc = select_xi(BoundTails(Tail.constant(1.0), Tail.constant(1.0), Tail.constant(2.0)))
    assert (xc.inf_ratio, xc.xi) == (0.5, 0.25)
    assert xc.alternative == pytest.approx(0.495)
    xc = select_xi(BoundTails(Tail.constant(1.0), Tail.constant(1.0), Tail.power(1.0, 1.0)))
    assert (xc.inf_ratio, xc.xi) == (1.0, 0.5)
    assert select_xi(BoundTails(Tail.constant(3.0), Tail.constant(3.0), Tail.constant(1.0)), rule="near_one").xi == 1.0
    with pytest.raises(ConditionViolatedError):
        select_xi(BoundTails(Tail.power(1.0, 1.0), Tail.constant(1.0), Tail.constant(1.0)))


def test_xi_without_delayed_gain_is_one():
    assert select_xi(BoundTails(Tail.constant(1.0), Tail.constant(1.0), Tail.constant(0.0))).xi == 1.0


def _window_setup(velocity, b2=1.0):
    # odd interval [1, 4) so that s + tau stays inside it for s in [1, 2]
    sched = build_schedule(1.0, 3.0, 1.0, 1)
    prof = make_profile(1, 1.0, b2, schedule=sched)
    sys1 = ModalSystem.identity([1.0])
    h = DelayHistory(1, 0.05, 1.0)
    ts = np.linspace(0.0, 2.0, 41)
    h.append_many(ts, velocity(ts)[:, None])
    return sched, prof, sys1, h, ModalState(2.0, [0.3], [float(velocity(np.array([2.0]))[0])])


def test_full_energy_with_unit_window():
    sched, prof, s, h, st0 = _window_setup(lambda t: np.ones_like(t))
    assert energy_full(st0, h, 0.5, prof, sched, s) == pytest.approx(energy_standard(st0, s) + 0.25 * 1.0, abs=1e-13)


def test_full_energy_reduces_to_standard():
    sched, prof, s, h, st0 = _window_setup(lambda t: np.zeros_like(t))
    assert energy_full(st0, h, 0.5, prof, sched, s) == energy_standard(st0, s)
    sched, prof, s, h, st0 = _window_setup(lambda t: np.ones_like(t), b2=0.0)
    assert energy_full(st0, h, 0.5, prof, sched, s) == energy_standard(st0, s)


def test_delay_integral_exact_for_cubic_integrands():
    # |b2(s + tau)| v(s)^2 with b2 linear in local time and v linear: degree 3
    sched = build_schedule(1.0, 3.0, 1.0, 1)
    prof = make_profile(1, 1.0, [0.5, 0.25], schedule=sched)
    s = ModalSystem.identity([1.0])
    h = DelayHistory(1, 0.1, 1.0)
    ts = np.linspace(0.0, 2.0, 21)
    h.append_many(ts, (1.0 + ts)[:, None])
    # window s in [1, 2], b2(s + 1) = 0.5 + 0.25 (s + 1 - 1) = 0.5 + 0.25 s
    poly = np.polynomial.Polynomial([0.5, 0.25]) * np.polynomial.Polynomial([1.0, 1.0]) ** 2
    exact = poly.integ()(2.0) - poly.integ()(1.0)
    assert delay_integral(s, h, 2.0, sched, prof) == pytest.approx(exact, rel=1e-13)


def _trace(system, sched, prof, a0, v0, dt, xi=None):
    return simulate(system, sched, prof, ModalState(0.0, a0, v0), dt, xi=xi)


def test_conservative_trace_passes():
    sched = build_schedule(2.0, 1.0, 1.0, 2)
    prof = make_profile(2, 0.0, 0.0, m=1.0, M_even=1.0, M_odd=0.0)
    s = ModalSystem.identity([1.0, 4.0])
    tr = _trace(s, sched, prof, [1.0, 0.2], [0.0, 0.5], 0.02, xi=1.0)
    rep = check_dissipation(tr, sched, prof, 1.0, ValidationMode.UNBOUNDED, s)
    assert rep.passed and abs(rep.max_violation) < 1e-12


def test_damped_oscillator_meets_the_bound_with_equality():
    sched = build_schedule(2.0, 1.0, 1.0, 2)
    prof = make_profile(2, 1.0, 0.0, schedule=sched)
    s = ModalSystem.identity([1.0])
    tr = _trace(s, sched, prof, [1.0], [0.0], 0.02, xi=1.0)
    rep = check_dissipation(tr, sched, prof, 1.0, ValidationMode.UNBOUNDED, s)
    assert rep.passed
    even = [c for c in rep.checks if c.parity == "even"]
    assert max(abs(c.integrated) for c in even) <= rep.tol
    assert max(abs(c.pointwise) for c in even) <= rep.tol


def test_delayed_interval_with_zero_history_passes():
    # the delayed channel only sees mode 2, which stays at rest
    sched = build_schedule(1.0, 1.0, 1.0, 1)
    prof = make_profile(1, 1.0, 1.0, schedule=sched)
    D2 = np.diag([0.0, 1.0])
    s = ModalSystem([1.0, 4.0], np.eye(2), D2, np.eye(2), D2)
    tr = simulate(s, sched, prof, ModalState(0.0, [1.0, 0.0], [0.0, 0.0]), 0.02, xi=1.0)
    odd = tr.E_S[tr.interval_slice(1)]
    assert np.ptp(odd) <= 1e-13 * odd[0]
    assert check_dissipation(tr, sched, prof, 1.0, ValidationMode.RESTRICTED, s).passed


def test_sparse_trace_rejected():
    sched = build_schedule(2.0, 1.0, 1.0, 1)
    prof = make_profile(1, 1.0, 0.1, schedule=sched)
    s = ModalSystem.identity([1.0])
    tr = _trace(s, sched, prof, [1.0], [0.0], 0.25)
    with pytest.raises(ResolutionError):
        check_dissipation(tr, sched, prof, None, ValidationMode.GENERAL, s)


@settings(max_examples=10)
@given(seed=st.integers(0, 10_000), b2=st.floats(-1.0, 1.0))
def test_augmented_energy_dominates_and_decreases_on_active_intervals(seed, b2):
    rng = np.random.default_rng(seed)
    sched = build_schedule(1.5, 0.8, 0.8, 2)
    prof = make_profile(2, 1.0, b2, schedule=sched)
    s = ModalSystem.identity([1.0, 3.0])
    xi = select_xi(prof, system=s).xi
    tr = _trace(s, sched, prof, rng.standard_normal(2), rng.standard_normal(2), 0.02, xi=xi)
    assert np.all(tr.E >= tr.E_S) and np.all(tr.E_S >= 0)
    tol = 10 * tr.dt**2
    for k in range(0, tr.n_complete_intervals, 2):
        e = tr.E[tr.interval_slice(k)]
        assert e[-1] <= e[0] + tol * (sched.t[k + 1] - sched.t[k]) * tr.E[0]


def test_tolerance_defaults_to_ten_dt_squared():
    sched = build_schedule(2.0, 1.0, 1.0, 1)
    prof = make_profile(1, 1.0, 0.0, schedule=sched)
    s = ModalSystem.identity([1.0])
    tr = _trace(s, sched, prof, [1.0], [0.0], 0.05, xi=1.0)
    assert check_dissipation(tr, sched, prof, 1.0, "UNBOUNDED", s).tol == pytest.approx(10 * 0.05**2)
    assert math.isfinite(check_dissipation(tr, sched, prof, 1.0, "UNBOUNDED", s).max_violation)
