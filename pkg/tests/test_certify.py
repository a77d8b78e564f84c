import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from delaydamp.certify import (
    FAIL,
    PASS,
    UNDECIDABLE,
    Series,
    boundary_dn,
    build_certificate,
    check_exponential,
    check_series,
    contraction_cn,
    contraction_cn_hat,
    contraction_dn_hat,
    cycle_bound_ES,
    fit_decay_rate,
    growth_factor_E,
    per_cycle_verify,
    windowed_product,
)
from delaydamp.errors import ConfigurationError, InsufficientDataError
from delaydamp.modal import ModalState, ModalSystem, simulate
from delaydamp.schedule import BoundTails, Tail, build_schedule, make_profile

pos = st.floats(0.01, 10.0)


@pytest.mark.parametrize(
    "args, expected",
    [((1, 1, 1, 1, 1), 20 / 21), ((1, 1, 1, 1, 20), 0.5), ((0.25, 2, 0.5, 2, 2), 17 / 19)],
)
def test_cn_examples(args, expected):
    assert contraction_cn(*args) == pytest.approx(expected, abs=1e-12)


def test_cn_hat_examples():
    assert contraction_cn_hat(1, 1, 1, 1, 1) == pytest.approx(10 / 11, abs=1e-12)
    assert contraction_cn_hat(1, 1, 1, 1, 10) == pytest.approx(0.5, abs=1e-12)
    assert contraction_cn_hat(1, 1, 1, 1, 1e6) == pytest.approx(10 / (1e6 + 10), abs=1e-12)
    assert contraction_cn_hat(1, 1, 1, 1, 1e6) < 2e-5


def test_contraction_input_checks():
    with pytest.raises(ConfigurationError):
        contraction_cn(0, 1, 1, 1, 1)
    with pytest.raises(ConfigurationError):
        contraction_cn_hat(1, 1, -1, 1, 2)
    with pytest.raises(ConfigurationError):
        contraction_dn_hat(0.0)


def test_dn_hat_examples():
    assert contraction_dn_hat(1) == 0.5
    assert contraction_dn_hat(3) == 0.75
    assert contraction_dn_hat(0.01) == pytest.approx(0.01 / 1.01, abs=1e-15)


def test_boundary_dn_examples():
    assert boundary_dn(1, 1, 1, 1, 1, 2, 1) == pytest.approx(3.0, abs=1e-12)
    with pytest.raises(ConfigurationError):
        boundary_dn(1, 1, 1, 1, 1, 1, 1)
    assert boundary_dn(0, 0, 2, 1, 4, 3, 1) == pytest.approx(0.25, abs=1e-12)


def test_growth_factor_examples():
    assert growth_factor_E(1, 1, 0, 1) == 1.0
    assert growth_factor_E(1, 1, 0.5, 1) == pytest.approx(math.e, abs=1e-12)
    assert growth_factor_E(1, 2, 0.3, 1) == pytest.approx(growth_factor_E(1, 0.5, 0.3, 1), abs=1e-12)


def test_cycle_bound_examples():
    assert cycle_bound_ES(1, 0, 1, 0.3) == pytest.approx(0.3, abs=1e-15)
    assert cycle_bound_ES(1, 0.1, 1, 0.5) == pytest.approx(math.exp(0.1) * 1.5 - 1, abs=1e-12)
    assert cycle_bound_ES(1, 0.1, 1, 0.5) == pytest.approx(0.65776, abs=1e-5)
    assert cycle_bound_ES(1, 0, 1, 1.0) == 1.0


@given(c=pos, C=pos, T=pos, M=pos, frac=st.floats(0.01, 1.0))
def test_contractions_lie_in_unit_interval(c, C, T, M, frac):
    m = frac * M
    for f in (contraction_cn, contraction_cn_hat):
        v = f(c, C, T, M, m)
        assert 0 < v < 1
    assert 0 < contraction_dn_hat(c) < 1


@given(c=pos, C=pos, T=pos, M=pos, frac=st.floats(0.05, 0.9), eps=st.floats(1e-3, 0.05))
def test_cn_monotone(c, C, T, M, frac, eps):
    m = frac * M
    base = contraction_cn(c, C, T, M, m)
    up = 1 + eps
    assert contraction_cn(c, C, T, M, m * up) < base or base > 1 - 1e-15
    assert contraction_cn(c * up, C, T, M, m) >= base
    assert contraction_cn(c, C * up, T, M, m) >= base
    assert contraction_cn(c, C, T * up, M, m) >= base
    assert contraction_cn(c, C, T, M * up, m) >= base


def _tails(m=1.0, M=1.0, Mo=None):
    return BoundTails(Tail.constant(m), Tail.constant(M), Mo if Mo is not None else Tail.constant(0.0))


def test_series_geometric_budget_passes():
    b = BoundTails(Tail.constant(1.0), Tail.constant(1.0), Tail.geometric(0.5, 0.5))
    v = check_series(Series.AUGMENTED, b, Tail.constant(2.0), Tail.constant(1.0))
    assert v.verdict == PASS
    assert [p[1] for p in v.parts] == ["CONVERGES", "DIVERGES"]


def test_series_harmonic_budget_fails():
    b = BoundTails(Tail.constant(1.0), Tail.constant(1.0), Tail.power(1.0, 1.0))
    v = check_series(Series.AUGMENTED, b, Tail.constant(2.0), Tail.constant(1.0))
    assert v.verdict == FAIL and v.parts[0][1] == "DIVERGES"


def test_series_constant_damped_contraction():
    b = BoundTails(Tail.constant(1.0), Tail.constant(1.0), Tail.geometric(1.0, 0.5))
    v = check_series(Series.DAMPED_OBSERVABILITY, b, Tail.constant(2.0), Tail.constant(1.0), d_tail=Tail.constant(1.0))
    assert v.verdict == PASS and v.parts[1][1] == "-inf"


def test_series_explicit_tail_is_undecidable():
    b = BoundTails(Tail.constant(1.0), Tail.constant(1.0), Tail.explicit([0.1, 0.2]))
    assert check_series(Series.AUGMENTED, b, Tail.constant(2.0), Tail.constant(1.0)).verdict == UNDECIDABLE


@pytest.mark.parametrize(
    "Mo, T_odd, verdict",
    [
        (Tail.geometric(1.0, 0.5), Tail.constant(1.0), PASS),
        (Tail.power(1.0, 2.0), Tail.constant(1.0), PASS),
        (Tail.power(1.0, 1.0), Tail.constant(1.0), FAIL),
        (Tail.constant(1.0), Tail.constant(1.0), FAIL),
        (Tail.constant(1.0), Tail.geometric(1.0, 0.9), PASS),
    ],
)
def test_series_decision_table(Mo, T_odd, verdict):
    b = BoundTails(Tail.constant(1.0), Tail.constant(1.0), Mo)
    assert check_series(Series.AUGMENTED, b, Tail.constant(2.0), T_odd).verdict == verdict


def test_series_gain_must_diverge():
    b = BoundTails(Tail.geometric(1.0, 0.5), Tail.geometric(1.0, 0.5), Tail.geometric(1.0, 0.25))
    assert check_series(Series.AUGMENTED, b, Tail.constant(2.0), Tail.constant(1.0)).verdict == FAIL


def test_series_product_variants():
    b = _tails(1.0, 1.0, Tail.constant(0.01))
    kw = dict(c=0.2, xi=1.0)
    assert check_series(Series.AUGMENTED_PRODUCT, b, Tail.constant(1.0), Tail.constant(1.0), **kw).verdict == PASS
    b = _tails(1.0, 1.0, Tail.constant(5.0))
    assert check_series(Series.AUGMENTED_PRODUCT, b, Tail.constant(1.0), Tail.constant(1.0), **kw).verdict == FAIL
    b = _tails(1.0, 1.0, Tail.constant(0.01))
    assert check_series(Series.STANDARD_PRODUCT, b, Tail.constant(1.0), Tail.constant(1.0), c=0.2).verdict == PASS


def test_series_boundary_explicit():
    b = _tails(1.0, 2.0, Tail.geometric(1.0, 0.5))
    v = check_series(Series.BOUNDARY_EXPLICIT, b, Tail.constant(3.0), Tail.constant(0.5), alphas=(1, 1, 1), T_bar=1.0)
    assert v.verdict == PASS
    b = _tails(1.0, 2.0, Tail.constant(1.0))
    v = check_series(Series.BOUNDARY_EXPLICIT, b, Tail.constant(3.0), Tail.constant(0.5), alphas=(1, 1, 1), T_bar=1.0)
    assert v.verdict == FAIL


def test_exponential_examples():
    sch = build_schedule(2.0, 1.0, 1.0, 3)
    v = check_exponential("standard", _tails(1.0, 1.0, Tail.constant(0.0)), sch, c=0.5, C=1.0, C2=1.0)
    assert v.passed and v.value == pytest.approx(contraction_cn_hat(0.5, 1, 2, 1, 1), abs=1e-12)
    # small delayed gains: exp(C M T~) < 2/(d_hat + 1) with d_hat = 0.5, C = T~ = 1
    edge = math.log(4 / 3)
    assert edge == pytest.approx(0.28768, abs=1e-5)
    for Mo, verdict in ((edge * 0.999, PASS), (edge * 1.001, FAIL)):
        v = check_exponential("damped", _tails(1.0, 1.0, Tail.constant(Mo)), sch, C2=1.0, d_tail=Tail.constant(1.0))
        assert v.verdict == verdict
    # c_hat = 0.9 and C2 M T~ = 0.2
    assert math.exp(0.2) * 1.9 - 1 == pytest.approx(1.3206, abs=1e-4)
    with pytest.raises(ConfigurationError):
        check_exponential("standard", _tails(), build_schedule([2.0, 3.0], 1.0, 1.0, 2), c=0.5)


def test_exponential_with_decaying_tail():
    sch = build_schedule(2.0, 1.0, 1.0, 3)
    b = BoundTails(Tail.constant(1.0), Tail.constant(1.0), Tail.geometric(0.5, 0.5))
    v = check_exponential("damped", b, sch, C2=1.0, d_tail=Tail.constant(1.0))
    assert v.value == pytest.approx(math.exp(0.5) * 1.5 - 1, abs=1e-12)
    assert check_exponential("damped", BoundTails(Tail.constant(1.0), Tail.constant(1.0), Tail.explicit([0.1])), sch, d_tail=Tail.constant(1.0)).verdict == UNDECIDABLE


def test_windowed_product():
    v = windowed_product([1.2, 0.5, 1.2, 0.5])
    assert v.window == 4 and v.value == pytest.approx(0.36) and v.verdict == PASS
    assert windowed_product([1.2, 0.5, 1.2]).value == pytest.approx(0.6)
    assert windowed_product([1.1, 1.2]).verdict == FAIL
    assert windowed_product([0.5, 0.5], covers_tail=False).verdict == UNDECIDABLE


def test_per_cycle_synthetic_and_zero():
    e = 0.5 ** np.arange(9)
    rows = per_cycle_verify(e, 0.6, stride=1)
    assert len(rows) == 4 and all(r.verdict == PASS for r in rows)
    rows = per_cycle_verify(np.zeros(9), 0.6)
    assert all(r.verdict == "SKIPPED" for r in rows)
    rows = per_cycle_verify(e, 0.2, stride=1)
    assert all(r.verdict == FAIL for r in rows)


def test_fit_examples():
    t = np.arange(6) * 2.0
    f = fit_decay_rate(t, np.exp(-t))
    assert f.mu == pytest.approx(1.0, abs=1e-12) and f.residual < 1e-12
    assert fit_decay_rate(t, np.full(6, 3.0)).mu == pytest.approx(0.0, abs=1e-12)
    t = 3.0 * np.arange(6)
    assert fit_decay_rate(t, 2 * 0.5 ** np.arange(6)).mu == pytest.approx(math.log(2) / 3, abs=1e-12)
    with pytest.raises(InsufficientDataError):
        fit_decay_rate(t[:3], np.ones(3))


def _scenario(b2=0.05, n=4):
    sch = build_schedule(2 * math.pi, 0.5, 1.0, n)
    pr = make_profile(n, 1.0, b2, schedule=sch)
    s = ModalSystem.identity([1.0, 4.0])
    return s, sch, pr


def test_certificate_without_delayed_gain_is_consistent():
    s, sch, pr = _scenario(0.0)
    tr = simulate(s, sch, pr, ModalState(0.0, [1.0, 1.0], [0.0, 1.0]), 2 * math.pi / 200)
    rep = build_certificate(s, sch, pr, T_bar=math.pi, trace=tr, chains=("standard", "damped"))
    for ch in rep.chains.values():
        assert ch.measured_ok
        assert all(r.ratio <= r.bound + 0.02 for r in ch.active_check if r.ratio is not None)
    assert rep.chains["standard"].exponential.passed
    assert rep.exit_code == 0


def test_certificate_regimes_bound_the_same_trace():
    s, sch, pr = _scenario(0.05)
    tr = simulate(s, sch, pr, ModalState(0.0, [1.0, 0.5], [0.5, 0.0]), 2 * math.pi / 200)
    rep = build_certificate(s, sch, pr, T_bar=math.pi, trace=tr, chains=("augmented", "standard"))
    assert rep.chains["augmented"].applicable and rep.chains["standard"].applicable
    assert rep.measured_ok


def test_certificate_json_and_table():
    s, sch, pr = _scenario(0.05, n=2)
    rep = build_certificate(s, sch, pr, T_bar=math.pi, chains=("standard",))
    d = rep.to_dict()
    assert d["chains"]["standard"]["stability"] in (PASS, FAIL, UNDECIDABLE)
    assert "overall" in rep.to_table()
    assert '"c"' in rep.to_json()
