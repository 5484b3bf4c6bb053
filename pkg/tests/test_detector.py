import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from spoofguard.detector import (
    ControlMode,
    DetectorState,
    cusum_step,
    decide,
    estimate_attack,
    innovation_covariance,
    normalized_statistic,
    threshold,
)
from spoofguard.errors import ConfigurationError, NumericalError
from spoofguard.estimator import steady_state_covariance
from spoofguard.model import SystemModel

ROBUST, EMERGENCY = ControlMode.ROBUST, ControlMode.EMERGENCY


def test_residual_zero_on_perfect_prediction(model, rng):
    x, u = rng.normal(size=4), rng.normal(size=2)
    y = model.C_G @ (model.A @ x + model.B @ u)
    np.testing.assert_allclose(estimate_attack(y, x, u, model), 0.0, atol=1e-12)
    np.testing.assert_allclose(estimate_attack(y + [10.0, 10.0], x, u, model), [10.0, 10.0])


def test_residual_direct_formula(model, rng):
    for _ in range(10):
        y, x, u = rng.normal(size=2), rng.normal(size=4), rng.normal(size=2)
        pred = [x[0] + 0.1 * x[2], x[1] + 0.1 * x[3]]
        np.testing.assert_allclose(estimate_attack(y, x, u, model), y - pred, atol=1e-12)


def test_innovation_covariance_examples(model):
    m = SystemModel(A=[[1.0]], B=[[0.0]], C_G=[[1.0]], C_I=[[0.0]], C_S=[1.0], Sigma_w=[[0.0]],
                    Sigma_G=[[1.0]], Sigma_I=[[1.0]], Sigma_S=[[1.0]], eta_S=1.0, pos_index=(0,))
    assert innovation_covariance(np.eye(1), m)[0, 0] == pytest.approx(2.0)
    m0 = model.replace(Sigma_w=np.zeros((4, 4)))
    np.testing.assert_array_equal(innovation_covariance(np.zeros((4, 4)), m0), model.Sigma_G)
    P_d = innovation_covariance(steady_state_covariance(model), model)
    assert np.linalg.eigvalsh(P_d).min() >= np.linalg.eigvalsh(model.Sigma_G).min()


def test_cusum_examples():
    det = DetectorState()
    assert cusum_step(det, np.zeros(2), np.eye(2)).S == 0.0
    det = DetectorState(S=10.0, delta=0.15)
    # statistic 2 from d = (1, 1) with unit covariance
    assert cusum_step(det, np.array([1.0, 1.0]), np.eye(2)).S == pytest.approx(3.5)


def test_cusum_geometric_limit():
    det = DetectorState(delta=0.15)
    d = np.array([np.sqrt(3.0), 0.0])  # statistic 3
    for _ in range(200):
        det = cusum_step(det, d, np.eye(2))
    assert det.S == pytest.approx(3.0 / 0.85, rel=1e-12)


def test_cusum_zero_statistic_decays():
    det = DetectorState(S=7.0, delta=0.3)
    for k in range(1, 6):
        det = cusum_step(det, np.zeros(2), np.eye(2))
        assert det.S == pytest.approx(7.0 * 0.3**k)


def test_threshold_value():
    assert threshold(2, 0.01, 0.15) == pytest.approx(9.2103 / 0.85, abs=1e-3)
    assert DetectorState().threshold == pytest.approx(10.836, abs=1e-3)


def test_decide_strict_comparison():
    thr = threshold(2, 0.01, 0.15)
    assert decide(DetectorState(S=0.0)).mode is ROBUST
    assert decide(DetectorState(S=thr)).mode is ROBUST
    assert decide(DetectorState(S=thr * (1 + 1e-12))).mode is EMERGENCY
    assert decide(DetectorState(S=thr * (1 - 1e-12), mode=EMERGENCY)).mode is ROBUST


def test_decide_records_switch_step():
    det = DetectorState(k=41)
    det = decide(cusum_step(det, np.array([10.0, 10.0]), np.eye(2)))
    assert det.mode is EMERGENCY and det.k_attack == 42
    det = decide(cusum_step(det, np.array([10.0, 10.0]), np.eye(2)))
    assert det.k_attack == 42


@given(st.lists(st.floats(-50, 50), min_size=2, max_size=2), st.floats(0.01, 0.99))
def test_statistic_nonnegative(d, delta):
    det = cusum_step(DetectorState(delta=delta), np.array(d), np.diag([1.0, 3.0]))
    assert det.S >= 0.0


def test_detector_state_validation():
    with pytest.raises(ConfigurationError):
        DetectorState(delta=1.0)
    with pytest.raises(ConfigurationError):
        DetectorState(alpha=0.0)
    with pytest.raises(NumericalError):
        normalized_statistic(np.ones(2), np.zeros((2, 2)))


def test_constant_attack_detected_quickly(model):
    P_d = innovation_covariance(steady_state_covariance(model), model)
    det = DetectorState()
    rng = np.random.default_rng(0)
    L = np.linalg.cholesky(P_d)
    for k in range(1, 6):
        det = decide(cusum_step(det, np.array([10.0, 10.0]) + L @ rng.normal(size=2), P_d))
        if det.mode is EMERGENCY:
            break
    assert det.mode is EMERGENCY
