import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from delaydamp.errors import ConfigurationError, HistoryUnderflowError, SimulationRefused
from delaydamp.modal import (
    DelayHistory,
    ModalState,
    ModalSystem,
    conservative_flow,
    delayed_velocity,
    integrate,
    simulate,
    step,
)
from delaydamp.schedule import build_schedule, make_profile


def one_mode(lam=1.0):
    return ModalSystem.identity([lam])


@pytest.mark.parametrize(
    "lam, state, dt, expected",
    [
        (1.0, (1.0, 0.0), math.pi / 2, (0.0, -1.0)),
        (4.0, (1.0, 0.0), math.pi, (1.0, 0.0)),
        (1.0, (0.0, 0.0), 0.7, (0.0, 0.0)),
    ],
)
def test_conservative_flow(lam, state, dt, expected):
    out = conservative_flow(one_mode(lam), ModalState(0.0, [state[0]], [state[1]]), dt)
    assert np.allclose([out.a[0], out.adot[0]], expected, atol=1e-15)
    assert out.t == dt


def test_system_validation():
    with pytest.raises(ConfigurationError):
        ModalSystem.identity([0.0, 1.0])
    with pytest.raises(ConfigurationError):
        ModalSystem.identity([2.0, 1.0])
    with pytest.raises(ConfigurationError):
        ModalSystem([1.0, 2.0], np.eye(2), np.array([[1.0, 0.0], [0.0, -1.0]]), np.eye(2))
    s = ModalSystem([1.0, 4.0], np.eye(2), np.eye(2), 3 * np.eye(2))
    assert s.embedding_constant(1) == pytest.approx(3.0)


def _stepper(system, b1, b2, T_even, T_odd, tau, dt, a0, v0):
    sched = build_schedule(T_even, T_odd, tau, 1)
    prof = make_profile(1, b1, b2, schedule=sched)
    hist = DelayHistory.with_prehistory(system.K, dt, tau, v0)
    return sched, prof, hist, ModalState(0.0, a0, v0)


def test_step_without_feedback_is_the_exact_rotation():
    s = ModalSystem.identity([1.0, 9.0])
    sched, prof, hist, st0 = _stepper(s, 0.0, 0.0, 2.0, 1.0, 1.0, 0.01, [1.0, 0.3], [0.2, -0.5])
    out = step(s, st0, hist, prof, sched, 0.01)
    ref = conservative_flow(s, st0, 0.01)
    assert np.allclose(out.a, ref.a, atol=1e-14) and np.allclose(out.adot, ref.adot, atol=1e-14)


def test_step_matches_damped_oscillator():
    # u'' + u' + u = 0, u(0) = 1, u'(0) = 0
    s = one_mode()
    dt = 1e-3
    sched, prof, hist, state = _stepper(s, 1.0, 0.0, 2.0, 1.0, 1.0, dt, [1.0], [0.0])
    for _ in range(1000):
        state = step(s, state, hist, prof, sched, dt)
    w = math.sqrt(3) / 2
    u = math.exp(-0.5) * (math.cos(w) + math.sin(w) / math.sqrt(3))
    du = -math.exp(-0.5) * math.sin(w) * (w + 0.25 / w)
    assert state.a[0] == pytest.approx(u, abs=1e-8)
    assert state.adot[0] == pytest.approx(du, abs=1e-8)


def test_step_rejects_mismatched_spacing():
    s = one_mode()
    sched, prof, hist, st0 = _stepper(s, 1.0, 0.0, 2.0, 1.0, 1.0, 0.01, [1.0], [0.0])
    with pytest.raises(ConfigurationError):
        step(s, st0, hist, prof, sched, 0.02)


def test_step_refuses_to_cross_a_switch():
    s = one_mode()
    sched, prof, hist, st0 = _stepper(s, 1.0, 0.0, 1.0, 1.0, 1.0, 0.3, [1.0], [0.0])
    state = st0
    for _ in range(3):
        state = step(s, state, hist, prof, sched, 0.3)
    with pytest.raises(ConfigurationError):
        step(s, state, hist, prof, sched, 0.3)


def test_delay_term_reads_zero_history_on_first_window():
    s = one_mode()
    out = integrate(s, ModalState(0.0, [1.0], [0.0]), 1.0, 0.01, b2=1.0, tau=1.0)
    assert out.a[0] == pytest.approx(math.cos(1.0), abs=1e-13)
    assert out.adot[0] == pytest.approx(-math.sin(1.0), abs=1e-13)


def test_delayed_velocity_constant_and_cubic():
    h = DelayHistory(1, 0.1, 1.0)
    ts = np.arange(0, 21) * 0.1
    h.append_many(ts, np.full((ts.size, 1), 2.5))
    assert delayed_velocity(h, 1.537)[0] == pytest.approx(2.5, abs=1e-14)
    h = DelayHistory(1, 0.1, 1.0)
    h.append_many(ts, (ts**2)[:, None])
    assert delayed_velocity(h, 1.55)[0] == pytest.approx(1.55**2, abs=1e-13)
    h3 = DelayHistory(1, 0.1, 1.0)
    h3.append_many(ts, (ts**3 - ts)[:, None])
    assert delayed_velocity(h3, 1.23)[0] == pytest.approx(1.23**3 - 1.23, abs=1e-12)
    with pytest.raises(HistoryUnderflowError):
        delayed_velocity(h, 2.0 - 1.01)
    with pytest.raises(HistoryUnderflowError):
        delayed_velocity(h, 2.05)


def _periodic(b1=1.0, b2=0.0, n=2, T_even=2.0, T_odd=1.0, tau=1.0):
    sched = build_schedule(T_even, T_odd, tau, n)
    return sched, make_profile(n, b1, b2, schedule=sched)


def test_simulate_zero_feedback_conserves():
    sched, prof = _periodic(0.0, 0.0, n=3)
    s = ModalSystem.identity([1.0, 4.0, 9.0])
    tr = simulate(s, sched, prof, ModalState(0.0, [1.0, 0.5, 0.1], [0.0, 0.2, 0.0]), 0.05)
    assert np.max(np.abs(tr.E_S / tr.E_S[0] - 1)) < 1e-8


def test_simulate_damping_monotone_on_active_intervals():
    sched, prof = _periodic(1.0, 0.0, n=3)
    tr = simulate(one_mode(), sched, prof, ModalState(0.0, [1.0], [0.3]), 0.01)
    for k in range(0, tr.n_complete_intervals, 2):
        e = tr.E_S[tr.interval_slice(k)]
        assert np.all(np.diff(e) <= 1e-12 * e[0])


def test_simulate_zero_data_gives_zero_trace():
    sched, prof = _periodic(1.0, 0.5)
    tr = simulate(one_mode(), sched, prof, ModalState(0.0, [0.0], [0.0]), 0.05)
    assert not np.any(tr.E_S) and not np.any(tr.E)


def test_trace_hits_every_switch_time():
    sched = build_schedule(1.3, 0.7, 0.7, 3)
    prof = make_profile(3, 1.0, 0.2, schedule=sched)
    tr = simulate(one_mode(), sched, prof, ModalState(0.0, [1.0], [0.0]), 0.1, sample_stride=3)
    assert np.array_equal(tr.t[tr.switch_index], sched.t)
    assert np.all(np.diff(tr.t) > 0)


def test_simulate_refuses_invalid_scenarios():
    sched, prof = _periodic(1.0, 0.5, T_odd=2.0)
    with pytest.raises(SimulationRefused) as info:
        simulate(one_mode(), sched, prof, ModalState(0.0, [1.0], [0.0]), 0.05, mode="RESTRICTED", T_bar=1.0)
    assert "delayed_interval_exceeds_delay" in info.value.report.names


@given(
    lam=st.lists(st.floats(0.2, 30.0), min_size=1, max_size=5, unique=True),
    seed=st.integers(0, 10_000),
)
def test_conservative_invariance(lam, seed):
    lam = sorted(lam)
    rng = np.random.default_rng(seed)
    K = len(lam)
    sched, prof = _periodic(0.0, 0.0, n=1, T_even=3.0, T_odd=1.0)
    tr = simulate(ModalSystem.identity(lam), sched, prof, ModalState(0.0, rng.standard_normal(K), rng.standard_normal(K)), 0.05)
    assert np.max(np.abs(tr.E_S / tr.E_S[0] - 1)) < 1e-12


@settings(max_examples=8)
@given(seed=st.integers(0, 10_000), alpha=st.floats(-3, 3), beta=st.floats(-3, 3))
def test_linearity_in_data_and_prehistory(seed, alpha, beta):
    rng = np.random.default_rng(seed)
    s = ModalSystem([1.0, 2.5], np.eye(2), np.array([[1.0, 0.3], [0.3, 0.5]]), np.eye(2))
    sched, prof = _periodic([1.0, 0.2], [0.8, -0.3], n=2, T_even=1.5, T_odd=1.0, tau=1.0)
    z1, z2 = rng.standard_normal((2, 4))
    p1, p2 = rng.standard_normal((2, 2))

    def final(z, p):
        tr = simulate(s, sched, prof, ModalState(0.0, z[:2], z[2:]), 0.05, prehistory=p, record_states=True)
        return np.concatenate([tr.final.a, tr.final.adot])

    lhs = final(alpha * z1 + beta * z2, alpha * p1 + beta * p2)
    rhs = alpha * final(z1, p1) + beta * final(z2, p2)
    assert np.allclose(lhs, rhs, rtol=1e-10, atol=1e-10 * (1 + np.max(np.abs(rhs))))


def test_fourth_order_convergence_with_delay():
    s = ModalSystem([1.0, 3.0], np.eye(2), np.array([[1.0, 0.2], [0.2, 0.6]]), np.eye(2))
    z = ModalState(0.0, [1.0, -0.5], [0.3, 0.8])

    def at_one(dt):
        out = integrate(s, z, 1.0, dt, b1=0.7, b2=0.9, tau=0.4, prehistory=np.array([0.5, -0.2]))
        return np.concatenate([out.a, out.adot])

    ref = at_one(0.01 / 16)
    e1 = np.max(np.abs(at_one(0.02) - ref))
    e2 = np.max(np.abs(at_one(0.01) - ref))
    assert e1 / e2 >= 12
