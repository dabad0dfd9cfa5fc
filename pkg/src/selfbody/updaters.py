"""Online updates of the self-body image from settled plant states.

Two update rules share one gate (static estimate + enough movement since the
last accepted update):

* the antagonism updater retrains only the ideal net from the estimated
  angles and the motor-side lengths;
* the vision updater uses joint angles recovered from the hand pose and
  retrains either the ideal net (command changed, no hand contact) or the
  route-change net (command held constant).

Every minibatch carries anchors so a single edit stays local.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .approximator import TrainConfig, train_minibatch
from .estimator import is_static


@dataclass
class IjmmSample:
    theta: np.ndarray
    lengths: np.ndarray

    def __post_init__(self):
        self.theta = np.asarray(self.theta, float)
        self.lengths = np.asarray(self.lengths, float)
        if not (np.isfinite(self.theta).all() and np.isfinite(self.lengths).all()):
            raise ValueError("sample must be finite")


@dataclass
class MrcmSample:
    theta: np.ndarray
    tension: np.ndarray
    compensation: np.ndarray

    def __post_init__(self):
        self.theta = np.asarray(self.theta, float)
        self.tension = np.asarray(self.tension, float)
        self.compensation = np.asarray(self.compensation, float)
        if not all(np.isfinite(a).all() for a in (self.theta, self.tension, self.compensation)):
            raise ValueError("sample must be finite")
        if np.any(self.tension < 0):
            raise ValueError("tension must be non-negative")


@dataclass
class MinibatchSpec:
    n_random: int = 16
    n_zero: int = 16
    around_std: float = np.deg2rad(2.0)

    def __post_init__(self):
        if self.n_random < 0 or self.n_zero < 0:
            raise ValueError("anchor counts must be non-negative")
        if self.around_std < 0:
            raise ValueError("around_std must be non-negative")


def assemble_ijmm_minibatch(sample, sbi, spec, seed=None, rng=None):
    """Sample, the exact origin anchor, and ``n_random`` self-labelled anchors."""
    rng = rng if rng is not None else np.random.default_rng(seed)
    n = sbi.n_joints
    theta_rand = rng.uniform(sbi.lower, sbi.upper, (spec.n_random, n))
    X = np.vstack([sample.theta, np.zeros(n), theta_rand])
    Y = np.vstack([sample.lengths, np.zeros(sbi.n_muscles),
                   sbi.ijmm.forward(theta_rand).reshape(spec.n_random, -1)])
    return X, Y


def assemble_mrcm_minibatch(sample, sbi, spec, seed=None, rng=None):
    """Inputs and targets for the route-change net.

    Rows: the sample, ``n_zero`` random postures at zero tension with zero
    target, and ``n_random`` postures scattered around the sample that
    reuse its tension and label.
    """
    rng = rng if rng is not None else np.random.default_rng(seed)
    n, m = sbi.n_joints, sbi.n_muscles
    theta_zero = rng.uniform(sbi.lower, sbi.upper, (spec.n_zero, n))
    around = sample.theta + rng.normal(0.0, 1.0, (spec.n_random, n)) * spec.around_std
    around = np.clip(around, sbi.lower, sbi.upper)
    theta = np.vstack([sample.theta, theta_zero, around])
    tension = np.vstack([sample.tension, np.zeros((spec.n_zero, m)),
                         np.tile(sample.tension, (spec.n_random, 1))])
    Y = np.vstack([sample.compensation, np.zeros((spec.n_zero, m)),
                   np.tile(sample.compensation, (spec.n_random, 1))])
    return sbi.mrcm_input(theta, tension), Y


@dataclass
class UpdateGate:
    """Static-state and movement gate, tracked per update branch."""

    static_window: int = 10
    static_threshold: float = np.deg2rad(0.5)
    movement_threshold: float = np.deg2rad(3.0)
    last: dict = field(default_factory=dict)

    def check(self, history, theta_update, key):
        if not is_static(history, self.static_window, self.static_threshold):
            return False, "not static"
        prev = self.last.get(key)
        if prev is not None:
            moved = np.max(np.abs(np.asarray(theta_update) - prev))
            if not moved > self.movement_threshold:
                return False, "not moved"
        elif not np.isfinite(self.movement_threshold):
            return False, "not moved"
        return True, "accepted"

    def accept(self, theta_update, key):
        self.last[key] = np.asarray(theta_update, float).copy()


@dataclass
class UpdateReport:
    updater: str
    branch: str
    accepted: bool
    reason: str
    theta: np.ndarray | None = None
    loss: float = float("nan")

    @property
    def row(self):
        theta = "" if self.theta is None else " ".join(f"{v:.4f}" for v in np.rad2deg(self.theta))
        return [self.updater, self.branch, int(self.accepted), self.reason, theta,
                "" if np.isnan(self.loss) else f"{self.loss:.6g}"]


class Updater:
    """Holds the training setup and gate shared by both update rules."""

    def __init__(self, spec=None, train=None, gate=None, seed=0):
        self.spec = spec or MinibatchSpec()
        self.train = train or TrainConfig(learning_rate=0.05, optimizer="momentum", epochs=30)
        self.gate = gate or UpdateGate()
        self.rng = np.random.default_rng(seed)

    def _fit_ijmm(self, sbi, sample):
        batch = assemble_ijmm_minibatch(sample, sbi, self.spec, rng=self.rng)
        return train_minibatch(sbi.ijmm, batch, self.train)

    def _fit_mrcm(self, sbi, sample):
        batch = assemble_mrcm_minibatch(sample, sbi, self.spec, rng=self.rng)
        return train_minibatch(sbi.mrcm, batch, self.train)

    def antagonism_update(self, sbi, theta_est, l_m, tension, history):
        """Retrain the ideal net on ``(theta_est, l_m - g(theta_est, T_m))``."""
        ok, reason = self.gate.check(history, theta_est, "antagonism")
        if not ok:
            return UpdateReport("antagonism", "ijmm", False, reason)
        sample = antagonism_sample(sbi, theta_est, l_m, tension)
        loss = self._fit_ijmm(sbi, sample)
        self.gate.accept(theta_est, "antagonism")
        return UpdateReport("antagonism", "ijmm", True, reason, sample.theta, loss)

    def vision_update(self, sbi, theta_actual, l_target, tension, command_changed,
                      hand_contact, history):
        """Retrain one net from vision-derived joint angles.

        Changed command without contact trains the ideal net; a constant
        command trains the route-change net; a changed command under contact
        is ambiguous and skipped.
        """
        if command_changed and hand_contact:
            return UpdateReport("vision", "none", False, "command changed under contact")
        branch = "ijmm" if command_changed else "mrcm"
        ok, reason = self.gate.check(history, theta_actual, "vision-" + branch)
        if not ok:
            return UpdateReport("vision", branch, False, reason)
        if branch == "ijmm":
            sample = vision_ijmm_sample(sbi, theta_actual, l_target, tension)
            loss = self._fit_ijmm(sbi, sample)
        else:
            sample = vision_mrcm_sample(sbi, theta_actual, l_target, tension)
            loss = self._fit_mrcm(sbi, sample)
        self.gate.accept(theta_actual, "vision-" + branch)
        return UpdateReport("vision", branch, True, reason, sample.theta, loss)


def antagonism_sample(sbi, theta_est, l_m, tension):
    theta_est = np.asarray(theta_est, float)
    return IjmmSample(theta_est, np.asarray(l_m, float) - sbi.compensation(theta_est, tension))


def vision_ijmm_sample(sbi, theta_actual, l_target, tension):
    theta_actual = np.asarray(theta_actual, float)
    return IjmmSample(theta_actual,
                      np.asarray(l_target, float) - sbi.compensation(theta_actual, tension))


def vision_mrcm_sample(sbi, theta_actual, l_target, tension):
    theta_actual = np.asarray(theta_actual, float)
    return MrcmSample(theta_actual, np.asarray(tension, float),
                      np.asarray(l_target, float) - sbi.ideal(theta_actual))
