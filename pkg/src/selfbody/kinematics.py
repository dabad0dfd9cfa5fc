"""Serial-chain kinematics for revolute arms.

Lengths are in millimetres, angles in radians.  Frame ``0`` is the base;
joint ``j`` (0-based) produces frame ``j + 1``, so a chain with ``n`` joints
has ``n + 1`` frames.  Quaternions are stored scalar-last ``(x, y, z, w)``
with ``w >= 0``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

AXIS_TOL = 1e-9


class DimensionError(ValueError):
    """Input vector has the wrong length."""


def rotation_about(axis, angle):
    """Rodrigues rotation matrix for a unit ``axis``."""
    x, y, z = axis
    c, s = np.cos(angle), np.sin(angle)
    C = 1.0 - c
    return np.array([
        [c + x * x * C, x * y * C - z * s, x * z * C + y * s],
        [y * x * C + z * s, c + y * y * C, y * z * C - x * s],
        [z * x * C - y * s, z * y * C + x * s, c + z * z * C],
    ])


@dataclass
class Link:
    """One revolute joint and the fixed transform from its parent frame."""

    name: str
    origin: np.ndarray
    axis: np.ndarray
    lower: float
    upper: float
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=float).reshape(3)
        self.axis = np.asarray(self.axis, dtype=float).reshape(3)
        self.rotation = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        if abs(np.linalg.norm(self.axis) - 1.0) >= AXIS_TOL:
            raise ValueError(f"joint axis of {self.name!r} is not unit length")
        if not self.lower < self.upper:
            raise ValueError(f"joint {self.name!r}: lower limit must be below upper")


@dataclass
class KinematicChain:
    links: list
    hand_offset: np.ndarray = field(default_factory=lambda: np.zeros(3))
    hand_link: int | None = None

    def __post_init__(self):
        self.hand_offset = np.asarray(self.hand_offset, dtype=float).reshape(3)
        if not self.links:
            raise ValueError("chain needs at least one joint")
        if self.hand_link is None:
            self.hand_link = len(self.links)
        if not 0 <= self.hand_link <= len(self.links):
            raise ValueError("hand_link must index a chain frame")
        self.lower = np.array([l.lower for l in self.links])
        self.upper = np.array([l.upper for l in self.links])

    @property
    def n_joints(self):
        return len(self.links)

    @property
    def joint_names(self):
        return [l.name for l in self.links]

    def clamp(self, theta):
        return np.clip(theta, self.lower, self.upper)

    def check(self, theta):
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.n_joints,):
            raise DimensionError(
                f"expected {self.n_joints} joint angles, got shape {theta.shape}")
        return theta


@dataclass
class Pose:
    position: np.ndarray
    orientation: np.ndarray

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float).reshape(3)
        q = np.asarray(self.orientation, dtype=float).reshape(4)
        q = q / np.linalg.norm(q)
        if q[3] < 0:
            q = -q
        self.orientation = q

    @classmethod
    def from_matrix(cls, R, p):
        return cls(p, Rotation.from_matrix(R).as_quat())

    @property
    def rotation_matrix(self):
        return Rotation.from_quat(self.orientation).as_matrix()


def frames(chain, theta):
    """Rotations ``(n+1, 3, 3)`` and origins ``(n+1, 3)`` of every chain frame.

    Also returns the world-frame joint axes and joint origins, which the
    Jacobians need.
    """
    theta = chain.check(theta)
    n = chain.n_joints
    Rs = np.empty((n + 1, 3, 3))
    ps = np.empty((n + 1, 3))
    axes = np.empty((n, 3))
    origins = np.empty((n, 3))
    R = np.eye(3)
    p = np.zeros(3)
    Rs[0], ps[0] = R, p
    for j, link in enumerate(chain.links):
        p = p + R @ link.origin
        R = R @ link.rotation
        axes[j] = R @ link.axis
        origins[j] = p
        R = R @ rotation_about(link.axis, theta[j])
        Rs[j + 1], ps[j + 1] = R, p
    return Rs, ps, axes, origins


def hand_transform(chain, theta):
    Rs, ps, _, _ = frames(chain, theta)
    k = chain.hand_link
    return Rs[k], ps[k] + Rs[k] @ chain.hand_offset


def forward_kinematics(chain, theta):
    """Hand pose in the base frame."""
    R, p = hand_transform(chain, theta)
    return Pose.from_matrix(R, p)


def point_jacobian(chain, theta, link, offset):
    """Position Jacobian (3 x n, mm/rad) of a point fixed on frame ``link``."""
    Rs, ps, axes, origins = frames(chain, theta)
    p = ps[link] + Rs[link] @ np.asarray(offset, dtype=float)
    J = np.zeros((3, chain.n_joints))
    for j in range(link):
        J[:, j] = np.cross(axes[j], p - origins[j])
    return J


def hand_jacobian(chain, theta):
    """Geometric hand Jacobian: rows 0-2 position (mm/rad), rows 3-5 rotation."""
    Rs, ps, axes, origins = frames(chain, theta)
    k = chain.hand_link
    p = ps[k] + Rs[k] @ chain.hand_offset
    J = np.zeros((6, chain.n_joints))
    for j in range(k):
        J[:3, j] = np.cross(axes[j], p - origins[j])
        J[3:, j] = axes[j]
    return J


def pose_error(R_target, p_target, R, p):
    """Position error (mm) and rotation-vector orientation error (rad)."""
    dp = p_target - p
    dr = Rotation.from_matrix(R_target @ R.T).as_rotvec()
    return dp, dr


@dataclass
class IKResult:
    theta: np.ndarray
    converged: bool
    iterations: int
    position_error: float
    orientation_error: float
    reason: str


def inverse_kinematics(chain, theta_initial, target, *, damping=1e-3,
                       orientation_weight=100.0, max_iter=200,
                       position_tol=1e-6, orientation_tol=1e-8,
                       max_step=0.5, frozen=None):
    """Damped-least-squares IK seeded at ``theta_initial``.

    Iterates until the task error is below tolerance, the step stalls, or
    ``max_iter`` is reached.  ``converged`` is set only when the error is
    below tolerance; otherwise the best iterate is returned and the caller
    decides whether the residual is acceptable.  ``frozen`` is an optional
    boolean mask of joints held fixed.
    """
    theta = chain.clamp(chain.check(theta_initial).copy())
    R_t = target.rotation_matrix
    p_t = target.position
    free = np.ones(chain.n_joints, dtype=bool)
    if frozen is not None:
        frozen = np.asarray(frozen, dtype=bool)
        if frozen.shape != free.shape:
            raise DimensionError("frozen mask length must match joint count")
        free = ~frozen
    w = np.r_[np.ones(3), np.full(3, orientation_weight)]

    def cost(th):
        R, p = hand_transform(chain, th)
        dp, dr = pose_error(R_t, p_t, R, p)
        return dp, dr

    dp, dr = cost(theta)
    best = (np.linalg.norm(np.r_[dp, orientation_weight * dr]), theta, dp, dr)
    reason = "max_iter"
    it = 0
    for it in range(max_iter + 1):
        if np.linalg.norm(dp) < position_tol and np.linalg.norm(dr) < orientation_tol:
            reason = "converged"
            break
        if it == max_iter:
            break
        e = w * np.r_[dp, dr]
        J = (w[:, None] * hand_jacobian(chain, theta))[:, free]
        A = J.T @ J + damping ** 2 * np.eye(J.shape[1])
        step = np.zeros(chain.n_joints)
        step[free] = np.linalg.solve(A, J.T @ e)
        norm = np.linalg.norm(step)
        if norm > max_step:
            step *= max_step / norm
        new = chain.clamp(theta + step)
        if np.linalg.norm(new - theta) < 1e-12:
            reason = "stalled"
            break
        theta = new
        dp, dr = cost(theta)
        err = np.linalg.norm(np.r_[dp, orientation_weight * dr])
        if err < best[0]:
            best = (err, theta, dp, dr)
    if reason != "converged":
        _, theta, dp, dr = best
    return IKResult(theta=theta, converged=reason == "converged", iterations=it,
                    position_error=float(np.linalg.norm(dp)),
                    orientation_error=float(np.linalg.norm(dr)), reason=reason)
