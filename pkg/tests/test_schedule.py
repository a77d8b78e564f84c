import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from delaydamp.errors import BoundMismatchError, ConfigurationError, OutOfRangeError, UndecidableError
from delaydamp.schedule import (
    Parity,
    Tail,
    ValidationMode,
    build_schedule,
    classify,
    make_profile,
    profile_bounds,
    ratio_floor,
    tail_from_decl,
    validate,
)


def test_switch_times_are_cumulative_sums():
    assert np.allclose(build_schedule(2, 1, 1, 2).t, [0, 2, 3, 5, 6])
    assert np.allclose(build_schedule(1, 1, 1, 1).t, [0, 1, 2])


@pytest.mark.parametrize("args", [(0, 1, 1, 1), (1, -1, 1, 1), (1, 1, 0, 1), (1, 1, 1, 0)])
def test_nonpositive_inputs_rejected(args):
    with pytest.raises(ConfigurationError):
        build_schedule(*args)


def test_per_cycle_lengths_and_tails():
    s = build_schedule([3, 2, 1], {"kind": "geometric", "value": 1.0, "ratio": 0.5}, 0.5, 3)
    assert np.allclose(s.T_even, [3, 2, 1])
    assert np.allclose(s.T_odd, [1, 0.5, 0.25])
    assert not s.is_periodic
    assert build_schedule(2, 1, 1, 4).is_periodic


def test_classify_half_open():
    s = build_schedule(2, 1, 1, 2)
    assert classify(s, 2.5) == (1, Parity.ODD)
    assert classify(s, 0.0) == (0, Parity.EVEN)
    assert classify(s, 2.0) == (1, Parity.ODD)
    with pytest.raises(OutOfRangeError):
        classify(s, 6.0)
    with pytest.raises(OutOfRangeError):
        classify(s, -0.1)


@given(
    te=st.floats(0.1, 5.0),
    to=st.floats(0.1, 5.0),
    n=st.integers(1, 6),
    k=st.integers(0, 11),
    frac=st.floats(0.0, 0.999),
)
def test_classify_round_trip(te, to, n, k, frac):
    s = build_schedule(te, to, 1.0, n)
    k = k % s.n_intervals
    a, b = s.interval(k)
    t = a + frac * (b - a)
    if t >= b:
        return
    idx, par = classify(s, t)
    assert idx == k
    assert par is (Parity.EVEN if k % 2 == 0 else Parity.ODD)


def test_general_mode_valid_example():
    s = build_schedule(2, 1, 1, 3)
    p = make_profile(3, 1.0, 0.5, schedule=s)
    assert validate(s, p, ValidationMode.GENERAL, 1.5).valid


def test_restricted_mode_flags_long_delayed_interval():
    s = build_schedule(2, 2, 1, 3)
    p = make_profile(3, 1.0, 0.5, schedule=s)
    rep = validate(s, p, ValidationMode.RESTRICTED, 1.5)
    assert "delayed_interval_exceeds_delay" in rep.names


def test_vanishing_ratio_floor_flagged():
    n = 4
    s = build_schedule(2, 1, 1, n)
    b1 = [[1.0 / (k + 1)] for k in range(n)]
    p = make_profile(n, b1, 1.0, m=Tail.power(1.0, 1.0), M_even=1.0, M_odd=1.0, schedule=s)
    rep = validate(s, p, ValidationMode.GENERAL, 1.5)
    assert rep.names == ["ratio_floor"]


def test_active_interval_shorter_than_delay():
    s = build_schedule(0.5, 0.5, 1.0, 2)
    p = make_profile(2, 1.0, 0.1, schedule=s)
    rep = validate(s, p, ValidationMode.GENERAL, 0.25)
    assert "active_shorter_than_delay" in rep.names


def test_observation_time_and_periodicity():
    s = build_schedule([2, 3], 1, 1, 2)
    p = make_profile(2, 1.0, 0.1, schedule=s)
    rep = validate(s, p, ValidationMode.PERIODIC, 2.5)
    assert {"observation_time", "not_periodic"} <= set(rep.names)
    rep = validate(s, p, ValidationMode.UNBOUNDED, [2.5, 1.0])
    assert rep.names == ["interval_observation_time"]


def test_profile_bounds_examples():
    s = build_schedule(1, 1, 1, 1)
    assert profile_bounds(make_profile(1, 1.0, 0.0, 1.0, 1.0, 0.0, s), s, 0) == (1.0, 1.0, 0.0)
    p = make_profile(1, [1.0, 1.0], 0.0, 1.0, 2.0, 0.0, s)
    assert profile_bounds(p, s, 0) == (1.0, 2.0, 0.0)
    with pytest.raises(BoundMismatchError):
        profile_bounds(make_profile(1, 3.0, 0.0, 1.0, 2.0, 0.0, s), s, 0)
    with pytest.raises(OutOfRangeError):
        profile_bounds(p, s, 1)


def test_bound_mismatch_is_a_report_entry():
    s = build_schedule(2, 1, 1, 1)
    p = make_profile(1, 3.0, 0.0, 1.0, 2.0, 0.0, s)
    assert "bound_consistency" in validate(s, p, "GENERAL", 1.5).names


@given(
    b1=st.lists(st.floats(-2, 2), min_size=1, max_size=4),
    b2=st.lists(st.floats(-2, 2), min_size=1, max_size=4),
)
def test_supports_are_disjoint(b1, b2):
    s = build_schedule(1.3, 0.7, 0.7, 3)
    p = make_profile(3, b1, b2, m=1.0, M_even=1.0, M_odd=1.0)
    t = np.linspace(0, s.horizon, 2001, endpoint=False)
    assert np.max(np.abs(p.b1_at(s, t) * p.b2_at(s, t))) == 0.0


@given(te=st.floats(1.0, 4.0), tau=st.floats(0.1, 1.0), n=st.integers(1, 5))
def test_valid_general_schedules_respect_the_delay(te, tau, n):
    s = build_schedule(te, tau, tau, n)
    p = make_profile(n, 1.0, 0.5, schedule=s)
    if validate(s, p, ValidationMode.GENERAL, 0.5 * te).valid:
        assert s.T_even.min() >= tau


def test_tail_families():
    g = Tail.geometric(2.0, 0.5)
    assert g(np.arange(3)).tolist() == [2.0, 1.0, 0.5]
    assert g.summable() and g.limit() == 0 and g.sup() == 2.0
    h = Tail.power(1.0, 1.0)
    assert not h.summable() and h.inf() == 0.0
    assert Tail.power(1.0, 2.0).summable()
    c = Tail.constant(3.0)
    assert c.inf() == c.sup() == c.limit() == 3.0 and not c.summable()
    assert (Tail.constant(1.0) / Tail.power(1.0, 1.0)).inf() == 1.0
    assert tail_from_decl(2.5).limit() == 2.5
    e = Tail.explicit([1.0, 2.0])
    assert not e.decidable
    with pytest.raises(UndecidableError):
        e.summable()


def test_ratio_floor_of_constant_and_vanishing_tails():
    from delaydamp.schedule import BoundTails

    assert ratio_floor(BoundTails(Tail.constant(1.0), Tail.constant(1.0), Tail.constant(2.0))) == 0.5
    assert math.isinf(ratio_floor(BoundTails(Tail.constant(1.0), Tail.constant(1.0), Tail.constant(0.0))))
    assert ratio_floor(BoundTails(Tail.power(1.0, 1.0), Tail.constant(1.0), Tail.constant(1.0))) == 0.0
