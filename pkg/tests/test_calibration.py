import numpy as np
import pytest

from estrogen_ocp.calibration import (DIETS, Measurement, Step1Bounds, Step1Result, calibrate,
                                      fit_step1, fit_step2, load_measurements, logistic_volume,
                                      steady_state_estrogen, synthetic_measurements,
                                      write_measurements)
from estrogen_ocp.errors import DomainError, MeasurementError
from estrogen_ocp.model import DietInit, ModelParams

TRUE = ModelParams()
TRUE_STEP1 = Step1Result(TRUE.k1, TRUE.a1, TRUE.mu * 175.143, TRUE.mu * 1293.918, 0.0)


@pytest.fixture(scope="module")
def synthetic():
    return synthetic_measurements(TRUE)


def test_steady_state_estrogen_examples():
    assert steady_state_estrogen(1040.35, 5.94) == pytest.approx(175.143, abs=1e-3)
    assert steady_state_estrogen(0.0, 5.94) == 0.0
    assert steady_state_estrogen(5.94 * 1500, 5.94) == pytest.approx(1500.0)
    with pytest.raises(DomainError):
        steady_state_estrogen(1.0, 0.0)


def test_logistic_volume_solves_the_ode():
    t = np.linspace(0, 20, 41)
    T = logistic_volume(t, 0.5, 1 / 2000)
    h = 1e-5
    dT = (logistic_volume(t + h, 0.5, 1 / 2000) - logistic_volume(t - h, 0.5, 1 / 2000)) / (2 * h)
    assert T[0] == 1.0
    assert np.allclose(dT, 0.5 * T * (1 - T / 2000), rtol=1e-7)


def test_step1_recovers_growth_rates_and_respects_bounds(synthetic):
    s1 = fit_step1(synthetic)
    lo, hi = Step1Bounds().estrogen
    for diet in DIETS:
        assert TRUE.mu * lo <= s1.r_hat(diet) <= TRUE.mu * hi
        E = s1.r_hat(diet) / TRUE.mu
        E_true = DietInit.default(diet).E0
        g_true = TRUE.k1 * E_true / (TRUE.a1 + E_true)
        assert s1.k1 * E / (s1.a1 + E) == pytest.approx(g_true, rel=5e-3)
    scale = sum(m.value ** 2 for m in synthetic if m.quantity == "tumor")
    assert s1.residual < 1e-6 * scale


def test_step1_is_degenerate_along_equal_growth_rates(synthetic):
    # any (k1, a1, r_hat) giving the same two growth rates has the same loss,
    # which is why k1 and a1 cannot be recovered individually
    s1 = fit_step1(synthetic, n_starts=3)
    E = {d: s1.r_hat(d) / TRUE.mu for d in DIETS}
    g = {d: s1.k1 * E[d] / (s1.a1 + E[d]) for d in DIETS}
    # choose a different E_HFD and solve for k1, a1, E_CD with the same rates
    E_hfd = 1.2 * E["HFD"] if 1.2 * E["HFD"] <= 1500 else 0.8 * E["HFD"]
    # g = k1 E / (a1 + E) is linear in (k1, a1) once g and E are fixed: g a1 - E k1 = -g E
    E_cd = E["CD"]
    A = np.array([[-E_cd, g["CD"]], [-E_hfd, g["HFD"]]])
    k1, a1 = np.linalg.solve(A, [-g["CD"] * E_cd, -g["HFD"] * E_hfd])
    for diet, e in (("CD", E_cd), ("HFD", E_hfd)):
        assert k1 * e / (a1 + e) == pytest.approx(g[diet], rel=1e-10)
    assert abs(a1 / s1.a1 - 1) > 0.05


def test_constant_tumor_drives_growth_to_bounds():
    flat = [Measurement(d, t, "tumor", 1.0) for d in DIETS for t in (10.0, 13.0, 15.0)]
    s1 = fit_step1(flat, n_starts=3)
    assert "k1" in s1.at_bounds


def test_step1_needs_both_diets(synthetic):
    only_hfd = [m for m in synthetic if m.diet == "HFD"]
    with pytest.raises(DomainError):
        fit_step1(only_hfd)


def test_step2_recovers_r_and_alpha_from_true_step1(synthetic):
    s2 = fit_step2(synthetic, TRUE_STEP1)
    assert s2.r == pytest.approx(TRUE.r, rel=0.05)
    assert s2.alpha == pytest.approx(TRUE.alpha, rel=0.15)
    assert s2.at_bounds == []


def test_step2_without_fat_consumption_hits_lower_alpha_bound():
    data = synthetic_measurements(TRUE.with_(alpha=0.0))
    s2 = fit_step2(data, TRUE_STEP1, n_starts=4)
    assert "alpha" in s2.at_bounds
    assert s2.alpha < 1e-6


def test_step2_needs_fat_data(synthetic):
    with pytest.raises(DomainError):
        fit_step2([m for m in synthetic if m.quantity == "tumor"], TRUE_STEP1)


def test_calibration_is_deterministic(synthetic):
    a = calibrate(synthetic, n_starts=3, seed=5)
    b = calibrate(synthetic, n_starts=3, seed=5)
    assert a.as_rows() == b.as_rows()
    d = a.derived
    assert d["E0_CD"] == pytest.approx(a.step1.r_CD / 5.94)
    assert d["F0_HFD"] == pytest.approx(a.step1.r_HFD / a.step2.r)


def test_measurement_file_parsing(tmp_path):
    path = tmp_path / "m.csv"
    path.write_text("diet,day,quantity,value,spread\n")
    assert load_measurements(path) == []
    path.write_text("diet,day,quantity,value,spread\nCD,10,tumor,42.0,\n")
    assert load_measurements(path) == [Measurement("CD", 10.0, "tumor", 42.0, None)]
    path.write_text("diet,day,quantity,value,spread\nCD,10,tumor,42.0,\nCD,10,tumor,-1,\n")
    with pytest.raises(MeasurementError, match="line 3"):
        load_measurements(path)
    path.write_text("diet,day,quantity,value,spread\nCD,ten,tumor,1,\n")
    with pytest.raises(MeasurementError, match="line 2"):
        load_measurements(path)
    path.write_text("day,diet,quantity,value,spread\n")
    with pytest.raises(MeasurementError, match="line 1"):
        load_measurements(path)


def test_measurement_round_trip(tmp_path, synthetic):
    path = tmp_path / "m.csv"
    write_measurements(synthetic, path)
    back = load_measurements(path)
    assert [(m.diet, m.day, m.quantity) for m in back] == \
        [(m.diet, m.day, m.quantity) for m in synthetic]
    assert np.allclose([m.value for m in back], [m.value for m in synthetic], rtol=1e-8)


def test_shipped_dataset_matches_generator():
    import pathlib

    shipped = load_measurements(pathlib.Path(__file__).parents[1] / "data" / "synthetic_table1.csv")
    fresh = synthetic_measurements()
    assert len(shipped) == len(fresh) == 8
    assert np.allclose([m.value for m in shipped], [m.value for m in fresh], rtol=1e-8)
