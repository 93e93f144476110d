import numpy as np
import pytest

from estrogen_ocp.control import ControlGrid
from estrogen_ocp.errors import DomainError, MeasurementError
from estrogen_ocp.integrate import sample
from estrogen_ocp.model import DietInit, ModelParams, simulate_extended
from estrogen_ocp.treatment import (P_SET, SCENARIOS, TreatmentPlan, detect_treatment_start,
                                    get_scenario, read_trajectory_csv, run_scenario,
                                    simulate_treated, write_trajectory_csv)


def test_presets_match_headings():
    k1 = ModelParams().k1
    ia, ib, ii, iii = (SCENARIOS[n].params() for n in ("I-a", "I-b", "II", "III"))
    assert (ia.a2, ia.a3, ia.k3) == (20.0, 1.0, k1 / 2)
    assert (SCENARIOS["I-b"].S0, SCENARIOS["I-b"].R0) == (0.75, 0.25)
    assert (ii.a2, ii.a3, ii.k3) == (10.0, 1.0, k1 / 2)
    assert (iii.a2, iii.a3, iii.k3) == (10.0, 10.0, k1 / 4)
    with pytest.raises(DomainError):
        get_scenario("IV")


def test_plan_parsing():
    assert TreatmentPlan.parse("constant:0.0125") == TreatmentPlan.constant(0.0125)
    assert TreatmentPlan.parse("none").kind == "none"
    alt = TreatmentPlan.parse("alternating:2/2")
    assert (alt.on_days, alt.off_days, alt.u_b) == (2.0, 2.0, 0.99)
    assert TreatmentPlan.parse("alternating:1/3:0.5").u_b == 0.5
    for bad in ("constant:0", "constant:x", "weekly", "alternating:0/1", "none:1"):
        with pytest.raises(DomainError):
            TreatmentPlan.parse(bad)


def test_alternating_segments_truncate_at_final_time():
    segs = TreatmentPlan.alternating(0.99, 2, 2).segments(20.5, 25.0)
    assert [(a, b, u) for a, b, u in segs] == [(20.5, 22.5, 0.99), (22.5, 24.5, 0.0),
                                                (24.5, 25.0, 0.99)]


def _untreated(preset="I-a", diet="CD", **over):
    prm = SCENARIOS[preset].params(**over) if over else SCENARIOS[preset].params()
    return prm, simulate_extended(prm, SCENARIOS[preset].init(diet).extended(), (0.0, 25.0))


def test_start_threshold_and_crossing():
    prm, tr = _untreated()
    t_tr = detect_treatment_start(tr, prm.m1, prm.eta)
    assert 1 / (4 * prm.m1) == pytest.approx(500.0)
    S, R = sample(tr, t_tr)[:2]
    assert S + R == pytest.approx(500.0, abs=1e-3)
    assert sample(tr, t_tr - 0.01)[0] < 500.0


def test_start_already_above_and_never():
    prm = SCENARIOS["I-a"].params()
    tr = simulate_extended(prm, np.array([600.0, 0.0, 175.0, 50.0]), (0.0, 5.0))
    assert detect_treatment_start(tr, prm.m1, prm.eta) == 0.0
    still = ModelParams(k1=0.0, k3=0.0, c=0.0)
    tr = simulate_extended(still, DietInit.default("CD").extended(), (0.0, 25.0))
    assert detect_treatment_start(tr, still.m1, still.eta) is None


def test_hfd_starts_earlier():
    _, cd = run_scenario("I-a", "CD", TreatmentPlan.none())
    _, hfd = run_scenario("I-a", "HFD", TreatmentPlan.none())
    assert hfd.t_tr < cd.t_tr


def test_none_and_p_one_equal_untreated():
    prm = SCENARIOS["I-a"].params()
    init = SCENARIOS["I-a"].init("CD")
    a = simulate_treated(prm, init, TreatmentPlan.none())
    b = simulate_treated(prm, init, TreatmentPlan.constant(1.0))
    ref = simulate_extended(prm, init.extended(), (0.0, 25.0), 0.0, output_grid=a.times)
    assert np.allclose(a.states, ref.states, rtol=1e-10, atol=1e-300)
    assert np.allclose(b.states, ref.states, rtol=1e-10, atol=1e-300)


def test_ia_cd_eradication_at_small_p():
    traj, s = run_scenario("I-a", "CD", TreatmentPlan.constant(0.0125))
    assert s.burden_final < 0.01 * (s.S_tr + s.R_tr)
    assert s.eradicated


def test_ia_hfd_fails_at_p_0025():
    _, s = run_scenario("I-a", "HFD", TreatmentPlan.constant(0.025))
    assert not s.eradicated


def test_iii_cd_resistance_at_p_001():
    _, s = run_scenario("III", "CD", TreatmentPlan.constant(0.01))
    assert s.R_final >= 10 * s.R_tr


def test_estrogen_monotone_in_p():
    E = []
    for p in P_SET:
        traj, s = run_scenario("I-a", "HFD", TreatmentPlan.constant(p))
        grid = np.arange(np.ceil(s.t_tr * 100) + 1, 2501) / 100
        E.append(np.array([sample(traj, t)[2] for t in grid]))
    for hi, lo in zip(E, E[1:]):
        assert np.all(lo <= hi * (1 + 1e-9) + 1e-12)


def test_alternating_is_continuous_at_switches():
    traj, s = run_scenario("I-a", "CD", TreatmentPlan.alternating(0.99, 1, 1))
    switches = s.t_tr + np.arange(1, 11)
    switches = switches[switches < 25.0]
    for t in switches:
        i = np.searchsorted(traj.times, t)
        assert traj.times[i] == pytest.approx(t, abs=1e-12)
        assert traj.times[i + 1] > traj.times[i]
    assert np.all(np.isfinite(traj.states))
    # the sampled control alternates between on and off after the start
    u = traj.controls[traj.times > s.t_tr + 1e-9]
    assert set(np.round(np.unique(u), 6)) == {0.0, 0.99}


def test_external_grid_plan():
    _, base = run_scenario("I-a", "CD", TreatmentPlan.constant(0.01))
    grid = ControlGrid.uniform(0.0, 25.0, 251, 0.99)
    _, ext = run_scenario("I-a", "CD", TreatmentPlan.external(grid))
    # u = 0.99 is the same as p = 0.01
    assert ext.S_final == pytest.approx(base.S_final, rel=1e-6, abs=1e-12)
    short = ControlGrid.uniform(20.0, 25.0, 11, 0.5)
    with pytest.raises(DomainError):
        run_scenario("I-a", "CD", TreatmentPlan.external(short))


def test_trajectory_csv_round_trip(tmp_path):
    traj, _ = run_scenario("I-b", "HFD", TreatmentPlan.constant(0.025))
    path = tmp_path / "t.csv"
    write_trajectory_csv(traj, path)
    back = read_trajectory_csv(path)
    assert path.read_text().splitlines()[0] == "t,S,R,E,F,u"
    assert np.allclose(back.states, traj.states, rtol=1e-8, atol=0)
    assert np.allclose(back.controls, traj.controls)
    path.write_text("t,S,R,E,F,u\n0,1,2,x,4,5\n")
    with pytest.raises(MeasurementError, match="line 2"):
        read_trajectory_csv(path)


def test_control_grid_validation():
    g = ControlGrid.uniform(0.0, 1.0, 3, 0.5)
    assert g(0.25) == 0.5 and g.span == (0.0, 1.0)
    with pytest.raises(DomainError):
        g.with_values([0.0, 1.0, 0.5])
    with pytest.raises(DomainError):
        ControlGrid([0.0, 0.0], [0.0, 0.0])
    with pytest.raises(DomainError):
        ControlGrid([0.0, 1.0], [0.0, 0.0], bounds=(0.5, 0.2))
