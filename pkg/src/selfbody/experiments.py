"""Experiment recipes run against the simulated plant.

An :class:`OnlineSession` owns one plant, one self-body image and one
estimator.  Each ``cycle`` commands lengths, settles the plant, runs the
estimator to a static state, observes the hand and optionally updates the
self-body image.  The recipes below compose cycles into the online-learning,
estimation-under-load, grasp and internal-tension experiments.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

from .approximator import TrainConfig
from .body_image import (InitialTrainConfig, SelfBodyImage, SoftnessCoefficients,
                         UniformSampler, generate_ijmm_dataset, generate_mrcm_dataset,
                         initial_train)
from .control import grasp_target, hold_posture
from .estimator import EkfState, ekf_step
from .kinematics import inverse_kinematics
from .plant import ExternalLoad, observe_vision, settle
from .updaters import MinibatchSpec, UpdateGate, Updater


def rmse_deg(a, b):
    return float(np.rad2deg(np.sqrt(np.mean((np.asarray(a) - np.asarray(b)) ** 2))))


@dataclass
class SessionConfig:
    ekf_steps: int = 30
    process_std: float = np.deg2rad(0.5)
    measurement_std: float = 1.0
    initial_std: float = np.deg2rad(5.0)
    jacobian_step: float = 1e-4
    vision_residual_max: float = 5.0

    @classmethod
    def from_model(cls, model):
        est = model.learner.get("estimator", {})
        sched = model.schedule
        return cls(
            ekf_steps=sched.get("ekf_steps", 30),
            process_std=np.deg2rad(est.get("process_std_deg", 0.5)),
            measurement_std=est.get("measurement_std", 1.0),
            initial_std=np.deg2rad(est.get("initial_std_deg", 5.0)),
            jacobian_step=est.get("jacobian_step", 1e-4),
            vision_residual_max=sched.get("vision_residual_max", 5.0))


def make_updater(model, seed=0):
    lr = model.learner
    on = lr.get("online", {})
    mb = lr.get("minibatch", {})
    gt = lr.get("gates", {})
    train = TrainConfig(learning_rate=on.get("learning_rate", 0.05),
                        optimizer=on.get("optimizer", "momentum"),
                        momentum=on.get("momentum", 0.9), epochs=on.get("epochs", 30))
    spec = MinibatchSpec(n_random=mb.get("n_random", 16), n_zero=mb.get("n_zero", 16),
                         around_std=np.deg2rad(mb.get("around_std_deg", 2.0)))
    gate = UpdateGate(static_window=gt.get("static_window", 10),
                      static_threshold=np.deg2rad(gt.get("static_threshold_deg", 0.5)),
                      movement_threshold=np.deg2rad(gt.get("movement_threshold_deg", 3.0)))
    return Updater(spec, train, gate, seed=seed)


@dataclass
class CycleRecord:
    phase: str
    theta_target: np.ndarray
    theta_true: np.ndarray
    theta_est: np.ndarray
    theta_actual: np.ndarray
    command: np.ndarray
    tensions: np.ndarray
    load: np.ndarray
    rmse: float
    true_rmse: float
    settled: bool
    reports: list = field(default_factory=list)


class OnlineSession:
    def __init__(self, model, sbi, *, updater=None, config=None, seed=0, estimator_model=None):
        self.model = model
        self.plant = model.plant
        self.chain = model.chain
        self.sbi = sbi
        self.updater = updater
        self.config = config or SessionConfig.from_model(model)
        self.estimator_model = estimator_model
        self.rng = np.random.default_rng(seed)
        n = self.chain.n_joints
        c = self.config
        self.theta = np.zeros(n)
        self.ekf = EkfState.initial(np.zeros(n), self.chain.lower, self.chain.upper,
                                    sbi.n_muscles, process_std=c.process_std,
                                    measurement_std=c.measurement_std,
                                    initial_std=c.initial_std)
        self.tension = np.broadcast_to(np.asarray(model.control.t_bias, float),
                                       (sbi.n_muscles,)).copy()
        self.command = None
        self.records = []

    def command_for(self, theta_target):
        return self.sbi.predict_lengths(theta_target, self.tension)

    def cycle(self, theta_target, *, command=None, load=None, updates=(), phase=""):
        """One command/settle/estimate/observe/update step."""
        theta_target = np.asarray(theta_target, float)
        if command is None:
            command = self.command_for(theta_target)
        changed = self.command is None or not np.array_equal(command, self.command)
        res = settle(self.plant, command, load, self.model.control, self.theta)
        self.theta, self.tension, self.command = res.theta, res.tensions, command.copy()
        meas = self.estimator_model or self.sbi
        history = []
        for _ in range(self.config.ekf_steps):
            self.ekf = ekf_step(self.ekf, meas, command, res.tensions, self.config.jacobian_step)
            history.append(self.ekf.mean.copy())
        pose = observe_vision(self.plant, res.theta, rng=self.rng)
        ik = inverse_kinematics(self.chain, self.ekf.mean, pose)
        actual = ik.theta
        reports = []
        if self.updater is not None and ik.position_error < self.config.vision_residual_max:
            if "antagonism" in updates:
                reports.append(self.updater.antagonism_update(
                    self.sbi, self.ekf.mean, res.lengths, res.tensions, history))
            if "vision" in updates:
                contact = load is not None and load.active
                reports.append(self.updater.vision_update(
                    self.sbi, actual, command, res.tensions, changed, contact, history))
        wrench = np.zeros(6) if load is None else load.wrench(self.plant.gravity)
        rec = CycleRecord(phase, theta_target, res.theta.copy(), self.ekf.mean.copy(),
                          actual.copy(), command.copy(), res.tensions.copy(), wrench,
                          rmse_deg(actual, self.ekf.mean), rmse_deg(res.theta, self.ekf.mean),
                          not res.flagged, reports)
        self.records.append(rec)
        return rec


def random_force(rng, fmin, fmax, planar_normal=None, down=None, cone=np.pi):
    """Hand force of random magnitude; direction within ``cone`` of ``down``.

    Upward pushes unload the gravity-bearing muscles to the bias tension,
    where tension carries no information about the load, so recipes keep
    forces in a cone around gravity.
    """
    cone = min(float(cone), np.pi)
    axis = np.array([0.0, 0.0, -1.0]) if down is None else np.asarray(down, float)
    if down is None:
        cone = np.pi
    if planar_normal is not None:
        phi = rng.uniform(-cone, cone)
        d = Rotation.from_rotvec(phi * np.asarray(planar_normal, float)).apply(axis)
    else:
        # uniform on the spherical cap around ``axis``
        z = rng.uniform(np.cos(cone), 1.0)
        az = rng.uniform(0.0, 2 * np.pi)
        r = np.sqrt(max(0.0, 1.0 - z * z))
        u = np.cross(axis, [1.0, 0.0, 0.0])
        if np.linalg.norm(u) < 1e-6:
            u = np.cross(axis, [0.0, 1.0, 0.0])
        u /= np.linalg.norm(u)
        v = np.cross(axis, u)
        d = z * axis + r * (np.cos(az) * u + np.sin(az) * v)
    return ExternalLoad(force=d * rng.uniform(fmin, fmax))


def _force_sampler(plant, chain, block):
    g = plant.gravity
    down = g / np.linalg.norm(g) if np.any(g) else None
    cone = np.deg2rad(block.get("cone_deg", 180.0))
    normal = _planar_normal(chain)
    fmin, fmax = block.get("force_min", 0.0), block.get("force_max", 10.0)
    return lambda rng: random_force(rng, fmin, fmax, normal, down, cone)


def _planar_normal(chain):
    axes = np.array([l.axis for l in chain.links])
    if np.allclose(axes, axes[0]):
        return axes[0]
    return None


def _updates(tag):
    return {"none": (), "vision": ("vision",), "antagonism": ("antagonism",),
            "both": ("antagonism", "vision")}[tag]


def run_schedule(session, phases, seed=0, updates_enabled=True):
    """Run postures/loads phases; returns the list of cycle records."""
    rng = np.random.default_rng(seed)
    chain = session.chain
    for ph in phases:
        ups = _updates(ph.get("updates", "vision")) if updates_enabled else ()
        name = ph.get("name", ph["kind"])
        if ph["kind"] == "postures":
            lo = np.deg2rad(ph.get("lower_deg", np.rad2deg(chain.lower)))
            hi = np.deg2rad(ph.get("upper_deg", np.rad2deg(chain.upper)))
            lo, hi = np.maximum(lo, chain.lower), np.minimum(hi, chain.upper)
            for _ in range(ph["steps"]):
                session.cycle(rng.uniform(lo, hi), updates=ups, phase=name)
        elif ph["kind"] == "loads":
            for hold in ph["holds_deg"]:
                target = chain.clamp(np.deg2rad(np.asarray(hold, float)))
                session.cycle(target, updates=ups, phase=name)
                command = session.command
                draw = _force_sampler(session.plant, chain, ph)
                for _ in range(ph.get("loads_per_hold", 5)):
                    load = draw(rng)
                    session.cycle(target, command=command, load=load, updates=ups, phase=name)
        else:
            raise ValueError(f"unknown phase kind {ph['kind']!r}")
    return session.records


def initial_image(model, seed=None):
    """Self-body image trained on the nominal geometric model."""
    lr = model.learner
    seed = lr.get("seed", 0) if seed is None else seed
    chain, routing = model.chain, model.routing
    scale = lr.get("tension_scale", 500.0)
    sbi = SelfBodyImage.create(chain.n_joints, routing.n_muscles, hidden=lr.get("hidden", 64),
                               tension_scale=scale, seed=seed, lower=chain.lower,
                               upper=chain.upper)
    ijmm = generate_ijmm_dataset(routing, chain, UniformSampler(
        chain.lower, chain.upper, lr.get("ijmm_samples", 2000), seed=seed))
    coeffs = SoftnessCoefficients(lr.get("alpha", 10.0), lr.get("beta", 0.05))
    mrcm = generate_mrcm_dataset(routing, chain, coeffs, UniformSampler(
        chain.lower, chain.upper, lr.get("mrcm_samples", 4000), seed=seed + 1,
        tension_max=scale), scale)
    t = lr.get("training", {})
    cfg = InitialTrainConfig(learning_rate=t.get("learning_rate", 3e-3),
                             optimizer=t.get("optimizer", "adam"),
                             max_epochs=t.get("max_epochs", 1500),
                             batch_size=t.get("batch_size", 64),
                             patience=t.get("patience", 150), seed=seed)
    report = initial_train(sbi, ijmm, mrcm, cfg)
    held = UniformSampler(chain.lower, chain.upper, 500, seed=seed + 1000).angles()
    truth = np.array([routing.relative_lengths(chain, th) for th in held])
    report["ijmm_heldout_rmse"] = float(np.sqrt(np.mean((sbi.ideal(held) - truth) ** 2)))
    return sbi, report


def online_learning(model, sbi, *, seed=0, phases=None, updates_enabled=True):
    """Phased online learning; returns ``(session, records)``.  ``sbi`` is modified."""
    phases = phases if phases is not None else model.schedule.get("phases", [])
    updater = make_updater(model, seed=seed) if updates_enabled else None
    session = OnlineSession(model, sbi, updater=updater, seed=seed)
    records = run_schedule(session, phases, seed=seed, updates_enabled=updates_enabled)
    return session, records


class TensionBlindImage:
    """Self-body image whose route-change term ignores tension changes.

    The compensation is always evaluated at a fixed reference tension, so
    the estimator behaves as if no model of load-induced route change
    existed.
    """

    def __init__(self, sbi, reference_tension):
        self.sbi = sbi
        self.reference = np.asarray(reference_tension, float).copy()
        self.n_joints, self.n_muscles = sbi.n_joints, sbi.n_muscles

    def predict_lengths(self, theta, tension):
        return self.sbi.predict_lengths(theta, self.reference)

    def length_jacobian(self, theta, tension, h=1e-4):
        return self.sbi.length_jacobian(theta, self.reference, h)


@dataclass
class EstimateResult:
    rmse_with: np.ndarray
    rmse_without: np.ndarray
    loaded: np.ndarray

    @property
    def loaded_rmse_with(self):
        return float(np.sqrt(np.mean(self.rmse_with[self.loaded] ** 2)))

    @property
    def loaded_rmse_without(self):
        return float(np.sqrt(np.mean(self.rmse_without[self.loaded] ** 2)))

    @property
    def unloaded_gap(self):
        u = ~self.loaded
        return float(np.max(np.abs(self.rmse_with[u] - self.rmse_without[u])))


def estimate_under_load(model, sbi, *, seed=0, hold_deg=None, segments=None):
    """Paired estimation runs, with and without the route-change model.

    The arm holds one command; load segments follow one another.  Both
    estimators see the same plant trajectory; the baseline evaluates the
    route-change term at the unloaded resting tension.
    """
    sched = model.schedule.get("estimate", {})
    hold_deg = hold_deg if hold_deg is not None else sched.get("hold_deg")
    segments = segments if segments is not None else sched.get("segments", [
        {"steps": 5, "force_min": 0.0, "force_max": 0.0},
        {"steps": 20, "force_min": 5.0, "force_max": 15.0}])
    chain = model.chain
    target = np.zeros(chain.n_joints) if hold_deg is None else np.deg2rad(hold_deg)
    target = chain.clamp(target)
    rng = np.random.default_rng(seed)
    # settle unloaded to fix the command and the reference tension
    probe = OnlineSession(model, sbi, seed=seed)
    probe.cycle(target)
    probe.cycle(target)
    command, ref_t = probe.command, probe.tension
    runs = {}
    loads = []
    for seg in segments:
        for _ in range(seg["steps"]):
            if seg.get("force_max", 0.0) > 0:
                loads.append(_force_sampler(model.plant, chain, seg)(rng))
            else:
                loads.append(None)
    for key, meas in (("with", None), ("without", TensionBlindImage(sbi, ref_t))):
        s = OnlineSession(model, sbi, seed=seed + 1, estimator_model=meas)
        s.theta, s.tension = probe.theta.copy(), probe.tension.copy()
        s.ekf.mean = probe.ekf.mean.copy()
        s.command = command
        runs[key] = np.array([s.cycle(target, command=command, load=ld).true_rmse
                              for ld in loads])
    loaded = np.array([ld is not None for ld in loads])
    return EstimateResult(runs["with"], runs["without"], loaded)


def grasp(model, sbi, *, mass=None, compensate=True, cycles=None, warmup=None):
    g = model.schedule.get("grasp", {})
    mass = g.get("mass", 1.4) if mass is None else mass
    target = (np.deg2rad(g["target_deg"]) if "target_deg" in g
              else grasp_target(model.chain))
    return hold_posture(sbi, model.plant, target, ExternalLoad.dumbbell(mass),
                        g.get("cycles", 8) if cycles is None else cycles, model.control,
                        warmup=g.get("warmup", 3) if warmup is None else warmup,
                        compensate=compensate)


def posture_sweep(model, sbi, postures):
    """Settle each commanded posture from rest; returns peak tension per posture."""
    peaks = []
    tb = np.broadcast_to(np.asarray(model.control.t_bias, float), (sbi.n_muscles,))
    for th in postures:
        res = settle(model.plant, sbi.predict_lengths(th, tb), None, model.control, th)
        peaks.append(float(np.max(res.tensions)))
    return np.array(peaks)


@dataclass
class TensionResult:
    postures: np.ndarray
    before: np.ndarray
    after: np.ndarray
    records: list

    @property
    def peak_before(self):
        return float(self.before.max())

    @property
    def peak_after(self):
        return float(self.after.max())


def internal_tension(model, sbi, *, seed=0):
    """Peak settled tension over a posture grid before and after antagonism learning.

    Learning uses only the antagonism updater on random postures in the
    configured region; the grid spans the same region.  ``sbi`` is not
    modified.
    """
    cfg = model.schedule.get("antagonism", {})
    chain = model.chain
    lo = np.deg2rad(cfg.get("lower_deg", np.rad2deg(chain.lower)))
    hi = np.deg2rad(cfg.get("upper_deg", np.rad2deg(chain.upper)))
    k = cfg.get("sweep_per_joint", 5)
    axes = [np.linspace(a, b, k) for a, b in zip(lo, hi)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, chain.n_joints)
    before = posture_sweep(model, sbi, grid)
    learned = sbi.copy()
    phase = {"name": "antagonism", "kind": "postures", "steps": cfg.get("steps", 100),
             "lower_deg": np.rad2deg(lo), "upper_deg": np.rad2deg(hi),
             "updates": "antagonism"}
    _, records = online_learning(model, learned, seed=seed, phases=[phase])
    return TensionResult(grid, before, posture_sweep(model, learned, grid), records)
