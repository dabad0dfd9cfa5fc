"""Simulated tendon-driven arm used as ground truth.

The plant hides a perturbed muscle routing and soft-tissue effects from the
learner.  Its muscles run the stiffness control law against the motor-side
length, which includes the softness displacement

    s_i(theta, T) = -(T_i l_abs,i / k + c_s T^_i + c_f,i(theta) T^_i + sum_j c_ij T^_j)

with T^ = T / tension_scale.  ``settle`` finds the static posture where
muscle torques balance gravity and the external load.

Torque sign: a muscle shortening with theta has a negative Jacobian entry;
its tension produces joint torque ``-G^T T``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .kinematics import DimensionError, forward_kinematics, hand_jacobian, frames, Pose
from .muscle_geometry import MuscleRouting
from scipy.spatial.transform import Rotation


@dataclass
class ControlParams:
    t_bias: np.ndarray | float = 10.0
    k_stiff: np.ndarray | float = 40.0

    def __post_init__(self):
        if np.any(np.asarray(self.t_bias) <= 0):
            raise ValueError("bias tension must be positive")
        if np.any(np.asarray(self.k_stiff) <= 0):
            raise ValueError("muscle stiffness must be positive")


def stiffness_targets(lengths, l_target, params):
    """T_target = T_bias + max(0, K_stiff (l - l_target))."""
    lengths = np.asarray(lengths, float)
    l_target = np.asarray(l_target, float)
    if lengths.shape != l_target.shape:
        raise DimensionError("length and target vectors differ in size")
    return params.t_bias + np.maximum(0.0, params.k_stiff * (lengths - l_target))


@dataclass
class Softness:
    wire_k: float = 6000.0            # N per unit strain
    structure: float = 4.0            # mm per unit normalized tension
    foam: float = 3.0                 # mm per unit normalized tension
    foam_weights: np.ndarray | None = None   # (muscles x joints) posture profile
    interference: np.ndarray | None = None   # (muscles x muscles), zero diagonal
    tension_scale: float = 500.0

    def __post_init__(self):
        if self.wire_k <= 0:
            raise ValueError("wire spring constant must be positive")

    def foam_profile(self, theta):
        if self.foam_weights is None:
            return self.foam
        return self.foam * (1.0 + 0.5 * np.tanh(self.foam_weights @ theta))

    def compliance(self, theta, abs_lengths):
        """Matrix S with softness displacement s = -S T (mm/N)."""
        m = abs_lengths.size
        S = np.diag(abs_lengths / self.wire_k
                    + (self.structure + self.foam_profile(theta)) / self.tension_scale
                    * np.ones(m))
        if self.interference is not None:
            S = S + self.interference / self.tension_scale
        return S


@dataclass
class PointMass:
    link: int
    mass: float
    com: np.ndarray

    def __post_init__(self):
        self.com = np.asarray(self.com, float).reshape(3)
        if self.mass < 0:
            raise ValueError("mass must be non-negative")


@dataclass
class ExternalLoad:
    """Wrench at the hand: force [N], torque [N mm], plus an optional point mass [kg]."""

    force: np.ndarray = field(default_factory=lambda: np.zeros(3))
    torque: np.ndarray = field(default_factory=lambda: np.zeros(3))
    mass: float = 0.0

    def __post_init__(self):
        self.force = np.asarray(self.force, float).reshape(3)
        self.torque = np.asarray(self.torque, float).reshape(3)
        if not (np.isfinite(self.force).all() and np.isfinite(self.torque).all()
                and np.isfinite(self.mass)):
            raise ValueError("load must be finite")

    @classmethod
    def dumbbell(cls, mass):
        return cls(mass=mass)

    def wrench(self, gravity):
        return np.r_[self.force + self.mass * gravity, self.torque]

    @property
    def active(self):
        return bool(self.mass > 0 or np.any(self.force) or np.any(self.torque))


@dataclass
class PlantModel:
    chain: object
    routing: MuscleRouting
    softness: Softness = field(default_factory=Softness)
    masses: list = field(default_factory=list)
    gravity: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, -9.81]))
    vision_position_std: float = 1.0
    vision_orientation_std: float = 0.005
    tension_cap: float = 1500.0
    perturbation: float = 0.0
    perturbation_seed: int | None = None

    def __post_init__(self):
        self.gravity = np.asarray(self.gravity, float).reshape(3)

    @property
    def n_muscles(self):
        return self.routing.n_muscles

    def gravity_torque(self, theta):
        Rs, ps, axes, origins = frames(self.chain, theta)
        tau = np.zeros(self.chain.n_joints)
        for pm in self.masses:
            p = ps[pm.link] + Rs[pm.link] @ pm.com
            F = pm.mass * self.gravity
            for j in range(pm.link):
                tau[j] += np.cross(axes[j], p - origins[j]) @ F
        return tau

    def load_torque(self, theta, load):
        if load is None or not load.active:
            return np.zeros(self.chain.n_joints)
        return hand_jacobian(self.chain, theta).T @ load.wrench(self.gravity)

    def softness_displacement(self, theta, tension):
        S = self.softness.compliance(theta, self.routing.absolute_lengths(self.chain, theta))
        return -S @ tension

    def tensions_at(self, theta, l_target, params):
        """Muscle tensions consistent with the stiffness law at posture theta.

        Solves T = T_bias + max(0, K (f(theta) - S T - l_target)) by
        semismooth Newton over the active set; returns (T, l_m).
        """
        f = self.routing.relative_lengths(self.chain, theta)
        S = self.softness.compliance(theta, self.routing.absolute_lengths(self.chain, theta))
        m = f.size
        tb = np.broadcast_to(np.asarray(params.t_bias, float), (m,))
        K = np.broadcast_to(np.asarray(params.k_stiff, float), (m,))
        T = tb.copy()
        for _ in range(50):
            u = K * (f - S @ T - l_target)
            active = u > 0
            F = T - tb - np.where(active, u, 0.0)
            if np.max(np.abs(F)) < 1e-11:
                break
            J = np.eye(m) + (active * K)[:, None] * S
            T = T - np.linalg.solve(J, F)
        l_m = f - S @ T
        # re-evaluate the law so returned tension matches returned length exactly
        T = stiffness_targets(l_m, l_target, ControlParams(tb, K))
        return T, l_m

    def residual(self, theta, l_target, params, load):
        T, l_m = self.tensions_at(theta, l_target, params)
        G = self.routing.moment_arms(self.chain, theta)
        r = -G.T @ T + self.gravity_torque(theta) + self.load_torque(theta, load)
        return r, T, l_m


@dataclass
class SettleResult:
    theta: np.ndarray
    lengths: np.ndarray
    tensions: np.ndarray
    residual: float
    converged: bool
    over_tension: bool
    at_limit: np.ndarray
    iterations: int

    @property
    def flagged(self):
        return not self.converged or self.over_tension


def _free_residual(r, theta, lower, upper):
    """Zero the residual on joints pressed against a limit by the load."""
    at_low = (theta <= lower) & (r < 0)
    at_high = (theta >= upper) & (r > 0)
    pinned = at_low | at_high
    return np.where(pinned, 0.0, r), pinned


def settle(plant, l_target, load, params, theta_guess, *, tol=1e-5, max_iter=200,
           fd_step=1e-6, dt0=1e-5, restart_every=25):
    """Static equilibrium of the plant for a commanded length vector.

    Damped Newton on the joint-torque residual ``r`` (the generalized force,
    so moving along it lowers potential energy).  Each step solves
    ``(I/dt - dr/dtheta) step = r``: small ``dt`` is quasi-static relaxation
    from ``theta_guess``, and ``dt`` grows as the residual falls so the
    iteration turns into plain Newton near the equilibrium.  Steps that
    raise the residual are rejected and retried with a smaller ``dt``; if
    the residual has not halved within ``restart_every`` iterations the
    damping is reset to ``dt0`` from the current posture.
    """
    chain = plant.chain
    l_target = np.asarray(l_target, float)
    if l_target.shape != (plant.n_muscles,):
        raise DimensionError("l_target length must equal the muscle count")
    lo, hi = chain.lower, chain.upper
    theta = chain.clamp(chain.check(theta_guess).astype(float))
    n = chain.n_joints

    def evaluate(th):
        r, T, l_m = plant.residual(th, l_target, params, load)
        rf, pinned = _free_residual(r, th, lo, hi)
        return rf, pinned, T, l_m

    r, pinned, T, l_m = evaluate(theta)
    norm = np.linalg.norm(r)
    dt = dt0
    it = 0
    mark, mark_norm = 0, norm
    for it in range(1, max_iter + 1):
        if np.max(np.abs(r)) < tol:
            break
        if norm < 0.5 * mark_norm:
            mark, mark_norm = it, norm
        elif it - mark >= restart_every:
            mark, mark_norm, dt = it, norm, dt0
        J = np.empty((n, n))
        for j in range(n):
            e = np.zeros(n)
            e[j] = fd_step
            rp = plant.residual(theta + e, l_target, params, load)[0]
            rm = plant.residual(theta - e, l_target, params, load)[0]
            J[:, j] = (rp - rm) / (2 * fd_step)
        free = ~pinned
        accepted = False
        fresh = dt == dt0
        for _ in range(30):
            A = np.eye(n) / dt - J
            step = np.zeros(n)
            step[free] = np.linalg.lstsq(A[np.ix_(free, free)], r[free], rcond=None)[0]
            big = np.max(np.abs(step))
            if big > 0.2:
                step *= 0.2 / big
            cand = chain.clamp(theta + step)
            rc, pc, Tc, lc = evaluate(cand)
            nc = np.linalg.norm(rc)
            if nc < norm or (nc < 2.0 * norm and big < 0.2 and dt < 1e-2):
                accepted = True
                break
            dt *= 0.25
        if not accepted:
            if fresh:
                break
            mark, mark_norm, dt = it, norm, dt0
            continue
        dt = min(dt * max(norm / max(nc, 1e-300), 0.5) * 2.0, 1e12)
        theta, r, pinned, T, l_m, norm = cand, rc, pc, Tc, lc, nc
    res = float(np.max(np.abs(r)))
    return SettleResult(theta=theta, lengths=l_m, tensions=T, residual=res,
                        converged=bool(res < tol),
                        over_tension=bool(np.max(T) > plant.tension_cap),
                        at_limit=pinned, iterations=it)


def observe_vision(plant, theta_true, seed=None, rng=None):
    """Hand pose with seeded Gaussian position and rotation-vector noise."""
    pose = forward_kinematics(plant.chain, theta_true)
    if rng is None:
        rng = np.random.default_rng(seed)
    sp, so = plant.vision_position_std, plant.vision_orientation_std
    if sp == 0 and so == 0:
        return pose
    p = pose.position + rng.normal(0.0, 1.0, 3) * sp
    rot = Rotation.from_rotvec(rng.normal(0.0, 1.0, 3) * so) * Rotation.from_quat(pose.orientation)
    return Pose(p, rot.as_quat())


def perturb_routing(nominal, chain, magnitude, seed):
    """Displace every waypoint by a seeded vector drawn uniformly from a ball."""
    if magnitude < 0:
        raise ValueError("perturbation magnitude must be non-negative")
    offsets = nominal.offsets
    if magnitude == 0:
        return nominal.with_offsets(offsets, chain)
    rng = np.random.default_rng(seed)
    d = rng.normal(size=offsets.shape)
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    r = magnitude * rng.uniform(0.0, 1.0, (len(offsets), 1)) ** (1.0 / 3.0)
    return nominal.with_offsets(offsets + d * r, chain)
