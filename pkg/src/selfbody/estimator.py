"""Joint-angle EKF driven by commanded muscle lengths.

The measurement model is anything exposing ``predict_lengths(theta, T)`` and
``length_jacobian(theta, T, h)`` -- a :class:`SelfBodyImage` or the plain
:class:`GeometricModel`.  The motion model is the identity.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np


@dataclass
class EkfState:
    mean: np.ndarray
    cov: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    innovation_norm: float = 0.0
    skipped: bool = False

    @classmethod
    def initial(cls, theta0, lower, upper, n_muscles, *, process_std=np.deg2rad(0.5),
                measurement_std=1.0, initial_std=np.deg2rad(5.0)):
        n = len(theta0)
        return cls(mean=np.asarray(theta0, float).copy(),
                   cov=np.eye(n) * initial_std ** 2,
                   Q=np.eye(n) * process_std ** 2,
                   R=np.eye(n_muscles) * measurement_std ** 2,
                   lower=np.asarray(lower, float), upper=np.asarray(upper, float))

    def copy(self):
        return replace(self, mean=self.mean.copy(), cov=self.cov.copy())


def ekf_step(state, model, l_obs, tension, h=1e-4, max_condition=1e12):
    """One predict/update cycle; returns a new state.

    Uses the innovation-form gain and the Joseph covariance update.  A
    numerically singular innovation covariance skips the update and only
    inflates the covariance by ``Q``.
    """
    x = state.mean.copy()
    P = state.cov + state.Q
    l_obs = np.asarray(l_obs, float)
    H = model.length_jacobian(x, tension, h).matrix
    y = l_obs - model.predict_lengths(x, tension)
    S = H @ P @ H.T + state.R
    if not np.all(np.isfinite(S)) or np.linalg.cond(S) > max_condition:
        return replace(state, cov=0.5 * (P + P.T), innovation_norm=float(np.linalg.norm(y)),
                       skipped=True)
    K = np.linalg.solve(S, H @ P).T
    x = np.clip(x + K @ y, state.lower, state.upper)
    A = np.eye(len(x)) - K @ H
    P = A @ P @ A.T + K @ state.R @ K.T
    P = 0.5 * (P + P.T)
    return replace(state, mean=x, cov=P, innovation_norm=float(np.linalg.norm(y)),
                   skipped=False)


def is_static(history, window=10, threshold=np.deg2rad(0.5)):
    """True iff the last ``window`` estimates all lie within ``threshold``.

    Max pairwise change in the infinity norm equals the largest per-joint
    range over the window.
    """
    if window < 2:
        raise ValueError("window must hold at least two samples")
    if len(history) < window:
        return False
    recent = np.asarray(history[-window:], float)
    return bool(np.max(recent.max(axis=0) - recent.min(axis=0)) < threshold)
