import math

import numpy as np
import pytest

from estrogen_ocp.errors import DomainError, EvaluationError
from estrogen_ocp.model import (AdipocyteGeometry, DietInit, ModelParams,
                                carrying_capacity_check, constant_treatment_control,
                                fat_volume_estimate, hill, hill_dE, rhs_basic, rhs_extended,
                                simulate_basic, simulate_extended)

TABLE = ModelParams()


def test_growth_vanishes_without_estrogen():
    d = rhs_basic((1.0, 0.0, 49.923), TABLE)
    assert d.T == 0.0


def test_estrogen_balance_at_table_values():
    d = rhs_basic((1.0, 175.143, 49.923), TABLE)
    assert d.E == pytest.approx(20.8391 * 49.923 - 5.94 * 175.143, abs=1e-12)
    assert abs(d.E) < 1e-3


def test_tumor_rate_at_table_values():
    d = rhs_basic((1.0, 175.143, 49.923), TABLE)
    oracle = 0.586967 * 175.143 / (59.0927 + 175.143) * (1 - 1 / 2000)
    assert d.T == pytest.approx(oracle, rel=1e-12)
    assert d.T == pytest.approx(0.4387, abs=5e-5)


def test_basic_rejects_nan():
    with pytest.raises(EvaluationError, match="E"):
        rhs_basic((1.0, math.nan, 1.0), TABLE)


def test_extended_zero_tumor_is_absorbing():
    d = rhs_extended((0.0, 0.0, 123.0, 45.0), TABLE, 0.3)
    assert d.S == 0.0 and d.R == 0.0


def test_hill_terms_vanish_for_huge_estrogen():
    assert hill(1e12, 20.0, 1.0, 10.0) < 1e-90
    assert hill(1e12, 1.0, 1.0, 10.0) < 1e-90


def test_zero_estrogen_hand_evaluation():
    prm = ModelParams(c=1.0, l=10.0, a2=20.0, a3=1.0, k1=3.0, k3=7.0)
    d = rhs_extended((1.0, 0.0, 0.0, 0.0), prm, 0.0)
    assert d.S == pytest.approx(-2.0, abs=1e-15)
    assert d.R == pytest.approx(1.0, abs=1e-15)


def test_extended_rejects_bad_control():
    with pytest.raises(EvaluationError):
        rhs_extended((1.0, 0.0, 1.0, 1.0), TABLE, 1.5)
    with pytest.raises(EvaluationError):
        rhs_extended((1.0, 0.0, 1.0, 1.0), TABLE, math.nan)


def test_control_and_constant_treatment_agree():
    p = 0.0125
    y = (300.0, 20.0, 40.0, 60.0)
    a = rhs_extended(y, TABLE.with_(p=p), constant_treatment_control(p))
    oracle_E = p * TABLE.r * 60.0 - TABLE.mu * 40.0
    assert a.E == pytest.approx(oracle_E, rel=1e-14)


def test_hill_matches_naive_form():
    E = np.logspace(-2, 3, 200)
    for a in (1e-2, 1.0, 20.0, 1e3):
        naive = a ** 10 / (a ** 10 + E ** 10)
        ok = np.isfinite(naive) & np.isfinite(E ** 10)
        assert np.allclose(hill(E, a, 1.0, 10.0)[ok], naive[ok], rtol=1e-12, atol=0)


def test_hill_derivative_by_differences():
    E = np.linspace(0.5, 60, 50)
    h = 1e-6
    fd = (hill(E + h, 20.0, 1.0, 10.0) - hill(E - h, 20.0, 1.0, 10.0)) / (2 * h)
    assert np.allclose(hill_dE(E, 20.0, 1.0, 10.0), fd, rtol=1e-6, atol=1e-9)
    assert hill_dE(0.0, 20.0, 1.0, 10.0) == 0.0
    assert hill_dE(0.0, 20.0, 1.0, 1.0) == pytest.approx(-1 / 20)


def test_monotone_death_and_growth():
    E = np.linspace(0, 2000, 500)
    assert np.all(np.diff(hill(E, 20.0, 1.0, 10.0)) <= 0)
    growth = TABLE.k1 * E / (TABLE.a1 + E)
    assert np.all(np.diff(growth) >= 0)


def test_zero_threshold_warns_and_is_step():
    with pytest.warns(RuntimeWarning):
        prm = ModelParams(a3=0.0)
    assert hill(0.0, prm.a3, 1.0, 10.0) == 1.0
    assert hill(1e-9, prm.a3, 1.0, 10.0) == 0.0


@pytest.mark.parametrize("bad", [dict(p=0.0), dict(p=1.5), dict(m1=0.0), dict(k1=-1.0),
                                 dict(l=0.5), dict(mu=math.inf)])
def test_invalid_params(bad):
    with pytest.raises(DomainError):
        ModelParams(**bad)


def test_fat_volume_examples():
    assert fat_volume_estimate(AdipocyteGeometry(10, 0.1, 8)) == pytest.approx(400.0)
    assert fat_volume_estimate(AdipocyteGeometry(0, 0.3, 8)) == 0.0
    assert fat_volume_estimate(AdipocyteGeometry(10, 0.3, 0)) == 0.0
    with pytest.raises(DomainError):
        fat_volume_estimate(AdipocyteGeometry(10, 0.0, 8))


def test_carrying_capacity_check():
    ok, margin = carrying_capacity_check(ModelParams(k2=0.045))
    assert ok and margin == pytest.approx(0.045 - 2.21427e-5 / 5e-4, rel=1e-12)
    assert margin == pytest.approx(0.000714, abs=1e-6)
    # threshold is 0.0442854, so 0.0443 sits just above it
    ok, margin = carrying_capacity_check(ModelParams(k2=0.0443))
    assert ok and margin == pytest.approx(0.0443 - 0.0442854, abs=1e-9)
    ok, _ = carrying_capacity_check(ModelParams(k2=0.0442))
    assert not ok
    assert carrying_capacity_check(ModelParams(alpha=0.0, k2=0.0))[0]


def test_steady_state_init():
    init = DietInit.steady_state("CD", 175.143, TABLE)
    d = rhs_basic(init.basic(), TABLE)
    assert abs(d.E) < 1e-10
    assert init.F0 == pytest.approx(49.923, rel=1e-3)


def test_diet_init_validation():
    with pytest.raises(DomainError):
        DietInit("XX", 1.0, 1.0)
    with pytest.raises(DomainError):
        DietInit.default("CD", S0=-1.0)


def test_extended_reduces_to_basic_without_death():
    prm = TABLE.with_(c=0.0)
    init = DietInit.default("HFD")
    grid = np.linspace(0, 15, 151)
    b = simulate_basic(prm, init, 15.0, output_grid=grid)
    # the extended fat equation adds logistic growth; switch it off
    e = simulate_extended(prm.with_(k2=0.0), init.extended(), (0.0, 15.0), 0.0, output_grid=grid)
    assert np.allclose(e.states[:, 0], b.states[:, 0], rtol=1e-8, atol=0)
    assert np.allclose(e.states[:, 2], b.states[:, 1], rtol=1e-8, atol=0)
    assert np.all(e.states[:, 1] == 0.0)


def test_callable_and_compiled_controls_agree():
    prm = TABLE.with_(a2=20.0, a3=1.0)
    y0 = DietInit.default("CD").extended()
    grid = np.linspace(0, 20, 201)
    u_t, u_v = np.array([0.0, 10.0, 20.0]), np.array([0.0, 0.9, 0.3])
    a = simulate_extended(prm, y0, (0.0, 20.0), (u_t, u_v), output_grid=grid)
    b = simulate_extended(prm, y0, (0.0, 20.0), lambda t: float(np.interp(t, u_t, u_v)),
                          output_grid=grid)
    assert np.allclose(a.states, b.states, rtol=1e-10, atol=1e-12)


def test_control_out_of_range_rejected():
    with pytest.raises(DomainError):
        simulate_extended(TABLE, DietInit.default("CD").extended(), (0.0, 1.0), 1.2)
