"""Command generation: stiffness law and the tension-compensated hold loop."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .plant import ControlParams, ExternalLoad, settle, stiffness_targets

__all__ = ["ControlParams", "stiffness_targets", "HoldLog", "hold_posture", "GRASP_PRESET_DEG"]

# shoulder pitch and elbow of the dumbbell scenario; other joints stay at zero
GRASP_PRESET_DEG = {"shoulder_pitch": -30.0, "elbow": -60.0}


@dataclass
class HoldLog:
    theta_target: np.ndarray
    theta: list = field(default_factory=list)
    commands: list = field(default_factory=list)
    tensions: list = field(default_factory=list)
    loaded: list = field(default_factory=list)
    aborted: bool = False

    @property
    def errors_deg(self):
        """Per-cycle infinity-norm posture error in degrees."""
        if not self.theta:
            return np.zeros(0)
        return np.rad2deg(np.max(np.abs(np.array(self.theta) - self.theta_target), axis=1))

    def _loaded_errors(self):
        return self.errors_deg[np.array(self.loaded, bool)]

    @property
    def peak_droop(self):
        e = self._loaded_errors()
        return float(e.max()) if e.size else 0.0

    @property
    def final_error(self):
        e = self.errors_deg
        return float(e[-1]) if e.size else 0.0

    def rows(self):
        for k, (th, lt, T, ld) in enumerate(zip(self.theta, self.commands, self.tensions,
                                                 self.loaded)):
            yield [k, int(ld), *np.rad2deg(self.theta_target), *np.rad2deg(th), *lt, *T]


def hold_posture(sbi, plant, theta_target, load, cycles, params, *, warmup=3,
                 compensate=True, theta_start=None):
    """Hold ``theta_target`` while ``load`` is applied.

    ``warmup`` unloaded cycles establish the resting tensions; then the load
    is applied for ``cycles`` cycles.  Each command is
    ``f_ideal(theta_target) + g(theta_target, T_prev)`` with the tensions
    settled in the previous cycle.  With ``compensate=False`` the command is
    frozen at its last unloaded value.
    """
    theta_target = np.asarray(plant.chain.check(theta_target), float)
    if np.any(theta_target < plant.chain.lower) or np.any(theta_target > plant.chain.upper):
        raise ValueError("target outside joint limits")
    log = HoldLog(theta_target=theta_target.copy())
    theta = theta_target.copy() if theta_start is None else np.asarray(theta_start, float)
    tension = np.broadcast_to(np.asarray(params.t_bias, float), (sbi.n_muscles,)).copy()
    ideal = sbi.ideal(theta_target)
    command = None
    for k in range(warmup + cycles):
        loaded = k >= warmup
        if command is None or compensate or not loaded:
            command = ideal + sbi.compensation(theta_target, tension)
        res = settle(plant, command, load if loaded else None, params, theta)
        theta, tension = res.theta, res.tensions
        log.theta.append(theta.copy())
        log.commands.append(command.copy())
        log.tensions.append(tension.copy())
        log.loaded.append(loaded)
        if res.over_tension:
            log.aborted = True
            break
    return log


def grasp_target(chain, preset=None):
    """Joint vector for the dumbbell scenario on a chain with named joints."""
    preset = GRASP_PRESET_DEG if preset is None else preset
    theta = np.zeros(chain.n_joints)
    for name, deg in preset.items():
        if name in chain.joint_names:
            theta[chain.joint_names.index(name)] = np.deg2rad(deg)
    return theta


def dumbbell(mass):
    return ExternalLoad.dumbbell(mass)
