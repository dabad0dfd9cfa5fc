"""Self-body image: ideal joint-muscle net plus muscle-route change net.

Target muscle lengths are ``f_ideal(theta) + g(theta, T / tension_scale)``.
The ideal net sees joint angles in radians; the route-change net sees the
joint angles concatenated with normalized tensions.  Both output millimetres.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import approximator
from .approximator import FeedforwardNet, FormatError, TrainConfig, VersionError
from .kinematics import DimensionError
from .muscle_geometry import finite_difference_jacobian

SBI_MAGIC = b"SBIM"
SBI_VERSION = 1


@dataclass
class SoftnessCoefficients:
    """Nominal softness model used to initialise the route-change net.

    ``alpha`` is the wire-elongation coefficient (mm per unit normalized
    tension), ``beta`` the structure-deformation coefficient (per unit
    normalized tension, multiplied by absolute length).
    """

    alpha: float = 10.0
    beta: float = 0.05

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("softness coefficients must be non-negative")


class SelfBodyImage:
    def __init__(self, ijmm, mrcm, tension_scale=500.0, lower=None, upper=None):
        n_joints = ijmm.sizes[0]
        n_muscles = ijmm.sizes[2]
        if mrcm.sizes[0] != n_joints + n_muscles or mrcm.sizes[2] != n_muscles:
            raise DimensionError("route-change net must map joints+muscles to muscles")
        if tension_scale <= 0:
            raise ValueError("tension_scale must be positive")
        self.ijmm = ijmm
        self.mrcm = mrcm
        self.tension_scale = float(tension_scale)
        self.lower = np.full(n_joints, -np.inf) if lower is None else np.asarray(lower, float)
        self.upper = np.full(n_joints, np.inf) if upper is None else np.asarray(upper, float)

    @classmethod
    def create(cls, n_joints, n_muscles, hidden=64, tension_scale=500.0, seed=0,
               lower=None, upper=None):
        ijmm = FeedforwardNet(n_joints, hidden, n_muscles, seed=seed)
        mrcm = FeedforwardNet(n_joints + n_muscles, hidden, n_muscles, seed=seed + 1)
        return cls(ijmm, mrcm, tension_scale, lower, upper)

    @property
    def n_joints(self):
        return self.ijmm.sizes[0]

    @property
    def n_muscles(self):
        return self.ijmm.sizes[2]

    def copy(self):
        return SelfBodyImage(self.ijmm.copy(), self.mrcm.copy(), self.tension_scale,
                             self.lower.copy(), self.upper.copy())

    def without_mrcm(self):
        """Copy whose route-change net is identically zero."""
        sbi = self.copy()
        sbi.mrcm.zero()
        return sbi

    def mrcm_input(self, theta, tension):
        theta = np.asarray(theta, float)
        tension = np.asarray(tension, float)
        if theta.shape[-1] != self.n_joints or tension.shape[-1] != self.n_muscles:
            raise DimensionError("joint or tension vector has the wrong length")
        lead = np.broadcast_shapes(theta.shape[:-1], tension.shape[:-1])
        theta = np.broadcast_to(theta, lead + theta.shape[-1:])
        tension = np.broadcast_to(tension, lead + tension.shape[-1:])
        return np.concatenate([theta, tension / self.tension_scale], axis=-1)

    def ideal(self, theta):
        return self.ijmm.forward(theta)

    def compensation(self, theta, tension):
        return self.mrcm.forward(self.mrcm_input(theta, tension))

    def predict_lengths(self, theta, tension):
        theta = np.asarray(theta, float)
        tension = np.asarray(tension, float)
        if theta.shape[-1] != self.n_joints:
            raise DimensionError(f"expected {self.n_joints} joint angles")
        if tension.shape[-1] != self.n_muscles:
            raise DimensionError(f"expected {self.n_muscles} tensions")
        return self.ijmm.forward(theta) + self.compensation(theta, tension)

    def length_jacobian(self, theta, tension, h=1e-4):
        """Central-difference Jacobian of the predicted lengths over theta."""
        tension = np.asarray(tension, float)
        return finite_difference_jacobian(
            lambda th: self.predict_lengths(th, tension),
            np.asarray(theta, float), self.lower, self.upper, h)

    def to_bytes(self):
        head = SBI_MAGIC + struct.pack("<HIId", SBI_VERSION, self.n_joints,
                                       self.n_muscles, self.tension_scale)
        limits = np.ascontiguousarray(np.r_[self.lower, self.upper], dtype="<f8").tobytes()
        return head + limits + approximator.save(self.ijmm) + approximator.save(self.mrcm)

    @classmethod
    def from_bytes(cls, data):
        data = bytes(data)
        size = struct.calcsize("<HIId")
        if len(data) < 4 + size or data[:4] != SBI_MAGIC:
            raise FormatError("not a serialized self-body image")
        version, nj, nm, scale = struct.unpack_from("<HIId", data, 4)
        if version != SBI_VERSION:
            raise VersionError(f"unsupported self-body image version {version}")
        off = 4 + size
        if len(data) < off + 16 * nj:
            raise FormatError("truncated self-body image header")
        limits = np.frombuffer(data, "<f8", 2 * nj, off).astype(float)
        off += 16 * nj
        ijmm, off = approximator.read_net(data, off)
        mrcm, off = approximator.read_net(data, off)
        if off != len(data):
            raise FormatError("trailing bytes after self-body image")
        if ijmm.sizes[0] != nj or ijmm.sizes[2] != nm:
            raise FormatError("header does not match stored networks")
        return cls(ijmm, mrcm, scale, limits[:nj], limits[nj:])

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def predict_lengths(sbi, theta, tension):
    return sbi.predict_lengths(theta, tension)


def length_jacobian(sbi, theta, tension, h=1e-4):
    return sbi.length_jacobian(theta, tension, h)


class UniformSampler:
    """I.i.d. uniform joint angles (and optionally tensions) from a seed."""

    def __init__(self, lower, upper, count, seed=0, tension_max=500.0):
        self.lower = np.asarray(lower, float)
        self.upper = np.asarray(upper, float)
        self.count = int(count)
        self.seed = seed
        self.tension_max = tension_max

    def angles(self, count=None):
        rng = np.random.default_rng(self.seed)
        return rng.uniform(self.lower, self.upper, (count or self.count, self.lower.size))

    def angles_and_tensions(self, n_muscles):
        rng = np.random.default_rng(self.seed)
        theta = rng.uniform(self.lower, self.upper, (self.count, self.lower.size))
        tension = rng.uniform(0.0, self.tension_max, (self.count, n_muscles))
        return theta, tension


def generate_ijmm_dataset(routing, chain, sampler):
    """Joint angles and geometric relative lengths; row 0 is the zero posture."""
    theta = sampler.angles()
    theta[0] = 0.0
    lengths = np.array([routing.relative_lengths(chain, th) for th in theta])
    return theta, lengths


def compensation_closed_form(abs_lengths, tension, coeffs, tension_scale=500.0):
    t_hat = np.asarray(tension, float) / tension_scale
    return -(coeffs.alpha * t_hat + coeffs.beta * np.asarray(abs_lengths, float) * t_hat)


def generate_mrcm_dataset(routing, chain, coeffs, sampler, tension_scale=500.0):
    """Angles, tensions and nominal length compensations (all <= 0)."""
    theta, tension = sampler.angles_and_tensions(routing.n_muscles)
    abs_len = np.array([routing.absolute_lengths(chain, th) for th in theta])
    return theta, tension, compensation_closed_form(abs_len, tension, coeffs, tension_scale)


@dataclass
class InitialTrainConfig:
    learning_rate: float = 3e-3
    optimizer: str = "adam"
    max_epochs: int = 1500
    batch_size: int = 64
    patience: int = 150
    seed: int = 0


def initial_train(sbi, ijmm_data, mrcm_data, cfg=None):
    """Fit both nets to their geometric datasets; returns a training report."""
    cfg = cfg or InitialTrainConfig()
    theta, lengths = ijmm_data
    if len(theta) == 0:
        raise ValueError("empty IJMM dataset")
    tcfg = TrainConfig(cfg.learning_rate, cfg.optimizer, epochs=1, seed=cfg.seed)
    rep_i = approximator.fit(sbi.ijmm, theta, lengths, tcfg, max_epochs=cfg.max_epochs,
                             batch_size=cfg.batch_size, patience=cfg.patience)
    th_m, ten_m, comp = mrcm_data
    if len(th_m) == 0:
        raise ValueError("empty MRCM dataset")
    X = sbi.mrcm_input(th_m, ten_m)
    tcfg = TrainConfig(cfg.learning_rate, cfg.optimizer, epochs=1, seed=cfg.seed + 1)
    rep_m = approximator.fit(sbi.mrcm, X, comp, tcfg, max_epochs=cfg.max_epochs,
                             batch_size=cfg.batch_size, patience=cfg.patience)
    return {
        "ijmm_rmse": float(np.sqrt(rep_i["loss"])),
        "ijmm_epochs": rep_i["epochs"],
        "mrcm_rmse": float(np.sqrt(rep_m["loss"])),
        "mrcm_epochs": rep_m["epochs"],
    }
