import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from geots.statespace import (StateSpaceError, StateSpaceModel, build_structural_model, chi2_threshold,
                              consistency_gate, fit_em, inverse_propagate, inverse_transition,
                              kalman_forward, smooth, write_smoother_csv)

from oracles import chi2_upper_quantile, joint_gaussian_smoother


def random_model(rng: np.random.Generator) -> StateSpaceModel:
    n = int(rng.integers(1, 4))
    d = int(rng.integers(1, 3))
    F = rng.normal(size=(n, n)) * 0.5 + np.eye(n) * 0.6
    H = rng.normal(size=(d, n))
    B = rng.normal(size=(n, n))
    Q = B @ B.T * 0.1 + np.eye(n) * 0.01
    R = np.diag(rng.uniform(0.05, 1.0, size=d))
    C = rng.normal(size=(n, n))
    P0 = C @ C.T + np.eye(n) * 0.1
    return StateSpaceModel(F, H, Q, R, rng.normal(size=n), P0, tuple(f"s{i}" for i in range(n)))


def local_level(q: float, r: float, x0: float = 0.0, p0: float = 1.0) -> StateSpaceModel:
    return StateSpaceModel(np.eye(1), np.eye(1), np.eye(1) * q, np.eye(1) * r, np.array([x0]),
                           np.eye(1) * p0, ("level",))


def random_data(model, rng, T):
    z = rng.normal(size=(T, model.n_obs)) * 2
    mask = rng.random((T, model.n_obs)) > 0.3
    return np.where(mask, z, np.nan), mask


def test_smoother_matches_joint_conditioning_on_100_models():
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(100):
        model = random_model(rng)
        T = int(rng.integers(2, 21))
        z, mask = random_data(model, rng, T)
        _, sm = smooth(model, z, mask)
        ref = joint_gaussian_smoother(model.F, model.H, model.Q, model.R, model.x0, model.P0,
                                      np.nan_to_num(z), mask)
        worst = max(worst, float(np.max(np.abs(sm.x_smooth - ref))))
    assert worst < 1e-8


def test_no_observations_propagates_the_prior():
    rng = np.random.default_rng(0)
    model = random_model(rng)
    T = 6
    fwd = kalman_forward(model, np.full((T, model.n_obs), np.nan))
    expect = model.x0
    for t in range(T):
        np.testing.assert_allclose(fwd.x_filt[t], expect, atol=1e-12)
        expect = model.F @ expect
    assert fwd.loglik == 0.0


def test_missing_step_skips_update():
    model = local_level(0.01, 0.25)
    z = np.array([1.0, np.nan, 2.0])
    fwd = kalman_forward(model, z)
    np.testing.assert_allclose(fwd.x_filt[1], fwd.x_pred[1])
    np.testing.assert_allclose(fwd.P_filt[1], fwd.P_pred[1])


def test_covariances_stay_symmetric_psd():
    rng = np.random.default_rng(5)
    for _ in range(20):
        model = random_model(rng)
        z, mask = random_data(model, rng, 15)
        _, sm = smooth(model, z, mask)
        for P in sm.P_smooth:
            np.testing.assert_allclose(P, P.T, atol=1e-12)
            assert np.linalg.eigvalsh(P).min() > -1e-10


def test_structural_model_layout():
    m = build_structural_model(periods=(365.25, 182.625), dt=1.0)
    assert m.n_state == 6
    assert m.labels == ("level", "slope", "seasonal", "seasonal", "seasonal", "seasonal")
    np.testing.assert_array_equal(m.H, [[1, 0, 1, 0, 1, 0]])
    w = 2 * np.pi / 365.25
    np.testing.assert_allclose(m.F[2:4, 2:4], [[np.cos(w), -np.sin(w)], [np.sin(w), np.cos(w)]])
    np.testing.assert_allclose(m.F[:2, :2], [[1, 1], [0, 1]])


def test_structural_model_rejects_bad_inputs():
    with pytest.raises(StateSpaceError):
        build_structural_model(periods=(0.0,))
    with pytest.raises(StateSpaceError):
        build_structural_model(periods=(), trend=False)
    with pytest.raises(StateSpaceError):
        build_structural_model(sigma_obs=0.0)
    with pytest.raises(StateSpaceError):
        build_structural_model(dt=-1)


def test_model_validation():
    with pytest.raises(StateSpaceError):
        StateSpaceModel(np.eye(2), np.ones((1, 2)), -np.eye(2), np.eye(1), np.zeros(2), np.eye(2), ("a", "b"))
    with pytest.raises(StateSpaceError):
        StateSpaceModel(np.eye(2), np.ones((1, 2)), np.eye(2), np.zeros((1, 1)), np.zeros(2), np.eye(2), ("a", "b"))


def test_em_loglik_is_monotone_and_recovers_noise_levels():
    rng = np.random.default_rng(11)
    T = 600
    level = np.cumsum(rng.normal(scale=0.3, size=T))
    z = level + rng.normal(scale=1.0, size=T)
    start = local_level(1.0, 9.0, x0=z[0], p0=10.0)
    res = fit_em(start, z, max_iter=200, tol=1e-8)
    diffs = np.diff(res.loglik)
    assert (diffs > -1e-6).all()
    assert np.sqrt(res.model.Q[0, 0]) == pytest.approx(0.3, rel=0.35)
    assert np.sqrt(res.model.R[0, 0]) == pytest.approx(1.0, rel=0.15)


def test_em_keeps_zero_variance_states_fixed():
    m = build_structural_model(periods=(365.25,), sigma_trend=0.1, sigma_seasonal=0.0, sigma_obs=1.0)
    z = np.sin(np.arange(300) / 20) + np.random.default_rng(0).normal(size=300) * 0.1
    res = fit_em(m, z, max_iter=5)
    assert np.all(np.diag(res.model.Q)[2:] == 0.0)


def test_inverse_propagation_undoes_forward_dynamics():
    m = build_structural_model(periods=(365.25,), sigma_trend=0.0, sigma_slope=0.0, sigma_seasonal=0.0)
    x = np.array([1.0, 0.1, 0.5, -0.2])
    fwd = x.copy()
    for _ in range(10):
        fwd = m.F @ fwd
    est = inverse_propagate(m, fwd, np.eye(4) * 1e-3, 10)
    np.testing.assert_allclose(est.means[10], x, atol=1e-12)
    np.testing.assert_allclose(est.F_inv @ m.F, np.eye(4), atol=1e-12)


def test_inverse_noise_covariance_grows():
    m = build_structural_model(periods=(), sigma_trend=0.2)
    est = inverse_propagate(m, np.zeros(2), np.eye(2) * 0.01, 5)
    traces = [np.trace(P) for P in est.covs]
    assert all(b > a for a, b in zip(traces, traces[1:]))


def test_singular_transition_needs_regularisation():
    F = np.array([[1.0, 0.0], [0.0, 0.0]])
    m = StateSpaceModel(F, np.array([[1.0, 0.0]]), np.eye(2) * 0.1, np.eye(1), np.zeros(2), np.eye(2), ("a", "b"))
    with pytest.raises(StateSpaceError, match="regularize"):
        inverse_transition(m)
    Fi = inverse_transition(m, max_cond=1e12, regularize=True, eps=1e-6)
    np.testing.assert_allclose(Fi @ (F + 1e-6 * np.eye(2)), np.eye(2), atol=1e-6)


@pytest.mark.parametrize("d,alpha", [(1, 0.05), (1, 0.01), (2, 0.05), (3, 0.1), (6, 0.05)])
def test_chi2_threshold_matches_bisection_oracle(d, alpha):
    assert chi2_threshold(d, alpha) == pytest.approx(chi2_upper_quantile(d, alpha), rel=1e-9)


def test_chi2_known_value():
    assert round(chi2_threshold(1, 0.05), 4) == 3.8415


def test_gate_accepts_zero_and_rejects_large_deviation():
    assert consistency_gate(1.0, 1.0, [[4.0]]).accepted
    res = consistency_gate(1.0 + 2.5 * 2.0, 1.0, [[4.0]])
    assert not res.accepted
    assert res.distance2 == pytest.approx(6.25)


@settings(max_examples=50, deadline=None)
@given(st.floats(-3, 3), st.floats(0.1, 10))
def test_gate_distance_is_scale_free(k, sd):
    res = consistency_gate(k * sd, 0.0, [[sd ** 2]])
    assert res.distance2 == pytest.approx(k * k, abs=1e-9)
    assert res.accepted == (res.distance2 <= res.threshold)


def test_gate_rejects_bad_covariance():
    with pytest.raises(StateSpaceError):
        consistency_gate([1.0, 2.0], [0.0, 0.0], [[1.0]])
    with pytest.raises(StateSpaceError):
        consistency_gate(1.0, 0.0, [[-1.0]])
    with pytest.raises(StateSpaceError):
        chi2_threshold(1, 1.5)


def test_smoother_csv_export(tmp_path):
    m = local_level(0.1, 1.0)
    _, sm = smooth(m, np.array([1.0, np.nan, 0.5]))
    path = tmp_path / "s.csv"
    write_smoother_csv(path, [0.0, 1.0, 2.0], m, sm, scale=2.0, offset=1.0)
    lines = path.read_text().splitlines()
    assert lines[0] == "epoch,mean,std"
    assert len(lines) == 4


def test_non_uniform_epochs_rejected():
    m = local_level(0.1, 1.0)
    with pytest.raises(StateSpaceError, match="uniformly"):
        kalman_forward(m, np.zeros(3), epochs=[0.0, 1.0, 3.0])
