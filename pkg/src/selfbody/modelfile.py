"""YAML model files: chain, routing, plant, learner and schedule blocks.

Parsing walks the YAML node tree so every error carries a line and column.
Angles in the file are degrees; the loaded objects use radians.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass
from importlib import resources

import numpy as np
import yaml

from .kinematics import KinematicChain, Link
from .muscle_geometry import Muscle, MuscleRouting, Waypoint
from .plant import ControlParams, PlantModel, PointMass, Softness, perturb_routing


class ModelFileError(ValueError):
    def __init__(self, message, mark=None):
        if mark is not None:
            message = f"line {mark.line + 1}, column {mark.column + 1}: {message}"
        super().__init__(message)


NUM = "number"
VEC3 = "vec3"
VEC = "vector"
STR = "string"
INT = "int"
ANY_LIST = "list"

JOINT = {"name": STR, "origin": VEC3, "rpy_deg": VEC3, "axis": VEC3, "limits_deg": VEC}
WAYPOINT = {"link": STR, "offset": VEC3}
MUSCLE = {"name": STR, "waypoints": [WAYPOINT]}
MASS = {"link": STR, "mass": NUM, "com": VEC3}
PHASE = {
    "name": STR, "kind": STR, "steps": INT, "lower_deg": VEC, "upper_deg": VEC,
    "holds_deg": ANY_LIST, "loads_per_hold": INT, "force_min": NUM, "force_max": NUM,
    "cone_deg": NUM, "updates": STR,
}
SEGMENT = {"steps": INT, "force_min": NUM, "force_max": NUM, "cone_deg": NUM}

SCHEMA = {
    "name": STR,
    "chain": {"hand_offset": VEC3, "hand_link": STR, "joints": [JOINT]},
    "routing": {"muscles": [MUSCLE]},
    "plant": {
        "perturbation": {"magnitude": NUM, "seed": INT},
        "softness": {"wire_k": NUM, "structure": NUM, "foam": NUM, "foam_gain": NUM,
                     "interference": NUM, "seed": INT},
        "masses": [MASS],
        "gravity": VEC3,
        "vision": {"position_std": NUM, "orientation_std_deg": NUM},
        "control": {"t_bias": NUM, "k_stiff": NUM},
        "tension_cap": NUM,
    },
    "learner": {
        "hidden": INT, "tension_scale": NUM, "alpha": NUM, "beta": NUM,
        "ijmm_samples": INT, "mrcm_samples": INT, "seed": INT,
        "training": {"learning_rate": NUM, "optimizer": STR, "max_epochs": INT,
                     "batch_size": INT, "patience": INT},
        "online": {"learning_rate": NUM, "optimizer": STR, "momentum": NUM, "epochs": INT},
        "minibatch": {"n_random": INT, "n_zero": INT, "around_std_deg": NUM},
        "gates": {"static_window": INT, "static_threshold_deg": NUM,
                  "movement_threshold_deg": NUM},
        "estimator": {"process_std_deg": NUM, "measurement_std": NUM,
                      "initial_std_deg": NUM, "jacobian_step": NUM},
    },
    "schedule": {
        "ekf_steps": INT,
        "vision_residual_max": NUM,
        "phases": [PHASE],
        "estimate": {"hold_deg": VEC, "segments": [SEGMENT]},
        "grasp": {"target_deg": VEC, "mass": NUM, "cycles": INT, "warmup": INT},
        "antagonism": {"steps": INT, "lower_deg": VEC, "upper_deg": VEC,
                       "sweep_per_joint": INT},
    },
}


def _scalar(node):
    return yaml.safe_load(yaml.serialize(node))


def _convert(node, schema, path):
    where = ".".join(path) or "<root>"
    if isinstance(schema, dict):
        if not isinstance(node, yaml.MappingNode):
            raise ModelFileError(f"{where}: expected a mapping", node.start_mark)
        out = {}
        for knode, vnode in node.value:
            key = _scalar(knode)
            if key not in schema:
                raise ModelFileError(f"{where}: unknown key {key!r}", knode.start_mark)
            if key in out:
                raise ModelFileError(f"{where}: duplicate key {key!r}", knode.start_mark)
            out[key] = _convert(vnode, schema[key], path + [str(key)])
        return out
    if isinstance(schema, list):
        if not isinstance(node, yaml.SequenceNode):
            raise ModelFileError(f"{where}: expected a list", node.start_mark)
        return [_convert(v, schema[0], path + [str(i)]) for i, v in enumerate(node.value)]
    value = _scalar(node)
    if schema == STR:
        if not isinstance(value, str):
            raise ModelFileError(f"{where}: expected a string", node.start_mark)
    elif schema == INT:
        if not isinstance(value, int) or isinstance(value, bool):
            raise ModelFileError(f"{where}: expected an integer", node.start_mark)
    elif schema == NUM:
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise ModelFileError(f"{where}: expected a number", node.start_mark)
        value = float(value)
    elif schema in (VEC, VEC3):
        ok = isinstance(value, list) and all(
            isinstance(v, (int, float)) and not isinstance(v, bool) for v in value)
        if not ok or (schema == VEC3 and len(value) != 3):
            kind = "3-vector" if schema == VEC3 else "list of numbers"
            raise ModelFileError(f"{where}: expected a {kind}", node.start_mark)
        value = [float(v) for v in value]
    elif schema == ANY_LIST:
        if not isinstance(value, list):
            raise ModelFileError(f"{where}: expected a list", node.start_mark)
    return value


def _compose(text):
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.MarkedYAMLError as exc:
        raise ModelFileError(f"malformed YAML: {exc.problem}", exc.problem_mark) from None
    if node is None:
        raise ModelFileError("empty file")
    return node


def parse(text):
    """Validate YAML text and return the model dict (degrees, millimetres)."""
    node = _compose(text)
    data = _convert(node, SCHEMA, [])
    for key in ("chain", "routing"):
        if key not in data:
            raise ModelFileError(f"missing required block {key!r}", node.start_mark)
    return data


def read(path):
    with open(path, encoding="utf-8") as fh:
        return parse(fh.read())


def parse_schedule(text):
    """Validate a standalone schedule block (same keys as the model's)."""
    return _convert(_compose(text), SCHEMA["schedule"], ["schedule"])


def read_schedule(path):
    with open(path, encoding="utf-8") as fh:
        return parse_schedule(fh.read())


def dump(data):
    return yaml.safe_dump(data, sort_keys=False)


def fixture_path(name):
    return str(resources.files("selfbody") / "fixtures" / f"{name}.yaml")


def load_fixture(name):
    return read(fixture_path(name))


def _link_index(names, name, where):
    if name == "base":
        return 0
    if name not in names:
        raise ModelFileError(f"{where}: unknown link {name!r}")
    return names.index(name) + 1


def _rpy(rpy_deg):
    from scipy.spatial.transform import Rotation
    return Rotation.from_euler("xyz", rpy_deg, degrees=True).as_matrix()


@dataclass
class Model:
    """Everything a model file describes, built into runtime objects."""

    raw: dict
    chain: KinematicChain
    routing: MuscleRouting
    plant: PlantModel
    control: ControlParams

    @property
    def learner(self):
        return self.raw.get("learner", {})

    @property
    def schedule(self):
        return self.raw.get("schedule", {})


def build_chain(block):
    links = []
    for i, j in enumerate(block["joints"]):
        lim = j.get("limits_deg")
        if lim is None or len(lim) != 2:
            raise ModelFileError(f"chain.joints.{i}: limits_deg needs two values")
        axis = np.asarray(j.get("axis", [0, 0, 1]), float)
        links.append(Link(name=j.get("name", f"joint{i}"), origin=j.get("origin", [0, 0, 0]),
                          axis=axis / np.linalg.norm(axis),
                          lower=np.deg2rad(lim[0]), upper=np.deg2rad(lim[1]),
                          rotation=_rpy(j.get("rpy_deg", [0, 0, 0]))))
    names = [l.name for l in links]
    hand = block.get("hand_link")
    hand_link = None if hand is None else _link_index(names, hand, "chain.hand_link")
    return KinematicChain(links, hand_offset=block.get("hand_offset", [0, 0, 0]),
                          hand_link=hand_link)


def build_routing(block, chain):
    names = chain.joint_names
    muscles = []
    for i, m in enumerate(block["muscles"]):
        wps = [Waypoint(_link_index(names, w["link"], f"routing.muscles.{i}"), w["offset"])
               for w in m.get("waypoints", [])]
        muscles.append(Muscle(m.get("name", f"muscle{i}"), wps))
    try:
        return MuscleRouting(muscles, chain)
    except ValueError as exc:
        raise ModelFileError(f"routing: {exc}") from None


def build(data, perturb=True):
    """Construct chain, nominal routing, plant and control parameters."""
    chain = build_chain(data["chain"])
    routing = build_routing(data["routing"], chain)
    p = data.get("plant", {})
    pert = p.get("perturbation", {})
    magnitude = pert.get("magnitude", 0.0) if perturb else 0.0
    pseed = pert.get("seed", 0)
    true_routing = perturb_routing(routing, chain, magnitude, pseed)
    s = p.get("softness", {})
    m, n = routing.n_muscles, chain.n_joints
    rng = np.random.default_rng(s.get("seed", 0))
    foam_gain = s.get("foam_gain", 0.0)
    foam_w = rng.normal(0.0, 1.0, (m, n)) * foam_gain if foam_gain else None
    inter = s.get("interference", 0.0)
    C = None
    if inter:
        C = np.zeros((m, m))
        for i in range(m - 1):
            C[i, i + 1] = C[i + 1, i] = inter
    softness = Softness(wire_k=s.get("wire_k", 6000.0), structure=s.get("structure", 0.0),
                        foam=s.get("foam", 0.0), foam_weights=foam_w, interference=C,
                        tension_scale=data.get("learner", {}).get("tension_scale", 500.0))
    names = chain.joint_names
    masses = [PointMass(_link_index(names, pm["link"], "plant.masses"), pm["mass"], pm["com"])
              for pm in p.get("masses", [])]
    vision = p.get("vision", {})
    plant = PlantModel(
        chain=chain, routing=true_routing, softness=softness, masses=masses,
        gravity=p.get("gravity", [0.0, 0.0, -9.81]),
        vision_position_std=vision.get("position_std", 1.0),
        vision_orientation_std=np.deg2rad(vision.get("orientation_std_deg", 0.3)),
        tension_cap=p.get("tension_cap", 1500.0),
        perturbation=magnitude, perturbation_seed=pseed)
    c = p.get("control", {})
    control = ControlParams(t_bias=c.get("t_bias", 10.0), k_stiff=c.get("k_stiff", 40.0))
    return Model(raw=copy.deepcopy(data), chain=chain, routing=routing, plant=plant,
                 control=control)


def load_model(path_or_name, perturb=True):
    """Build a model from a file path or a shipped fixture name."""
    if path_or_name in ("planar2dof", "arm4dof"):
        data = load_fixture(path_or_name)
    else:
        data = read(path_or_name)
    return build(data, perturb=perturb)
