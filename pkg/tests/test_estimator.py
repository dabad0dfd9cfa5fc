import numpy as np
import pytest

from selfbody.estimator import EkfState, ekf_step, is_static
from selfbody.muscle_geometry import GeometricModel


@pytest.fixture(scope="module")
def exact(planar_nominal):
    return GeometricModel(planar_nominal.routing, planar_nominal.chain)


def fresh(model_file, theta0):
    c = model_file.chain
    return EkfState.initial(theta0, c.lower, c.upper, 4)


def test_consistent_observation_keeps_mean(planar_nominal, exact):
    theta = np.array([0.5, 0.8])
    s = fresh(planar_nominal, theta)
    out = ekf_step(s, exact, exact.predict_lengths(theta), np.zeros(4))
    assert np.max(np.abs(out.mean - theta)) < 1e-9
    assert np.trace(out.cov) <= np.trace(s.cov + s.Q)


def test_recovers_static_target(planar_nominal, exact):
    target = np.deg2rad([35.0, 60.0])
    s = fresh(planar_nominal, np.deg2rad([20.0, 40.0]))
    l_obs = exact.predict_lengths(target)
    errors = []
    for _ in range(50):
        s = ekf_step(s, exact, l_obs, np.zeros(4))
        errors.append(np.sqrt(np.mean((s.mean - target) ** 2)))
    assert np.rad2deg(np.max(np.abs(s.mean - target))) < 0.5
    windows = np.array(errors).reshape(5, 10).mean(axis=1)
    assert np.all(np.diff(windows) <= 0)


def test_covariance_stays_spd_under_fuzz(planar_nominal, exact):
    rng = np.random.default_rng(0)
    c = planar_nominal.chain
    s = fresh(planar_nominal, np.zeros(2))
    for k in range(2000):
        if k % 50 == 0:
            l_obs = exact.predict_lengths(rng.uniform(c.lower, c.upper))
        s = ekf_step(s, exact, l_obs + rng.normal(0, 1.0, 4), np.zeros(4))
        np.linalg.cholesky(s.cov)
        assert np.allclose(s.cov, s.cov.T)
        assert np.all(s.mean >= c.lower) and np.all(s.mean <= c.upper)


def test_singular_innovation_skips(planar_nominal):
    class Flat:
        def predict_lengths(self, theta, tension):
            return np.zeros(4)

        def length_jacobian(self, theta, tension, h):
            class J:
                matrix = np.full((4, 2), np.nan)
            return J()

    s = fresh(planar_nominal, np.array([0.2, 0.3]))
    out = ekf_step(s, Flat(), np.ones(4), np.zeros(4))
    assert out.skipped
    assert np.array_equal(out.mean, s.mean)
    assert np.allclose(out.cov, s.cov + s.Q)


def test_static_detector():
    assert is_static([np.zeros(2)] * 10)
    ramp = [np.full(2, np.deg2rad(5.0 * k)) for k in range(10)]
    assert not is_static(ramp, 10, np.deg2rad(1.0))
    rng = np.random.default_rng(0)
    noisy = [np.deg2rad(0.1) * rng.uniform(-0.5, 0.5, 2) for _ in range(10)]
    assert is_static(noisy, 10, np.deg2rad(1.0))
    assert not is_static([np.zeros(2)] * 5, 10)
