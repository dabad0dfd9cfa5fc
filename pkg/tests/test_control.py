import copy

import numpy as np
import pytest

from selfbody.control import GRASP_PRESET_DEG, grasp_target, hold_posture
from selfbody.plant import ControlParams, ExternalLoad


class MatchedImage:
    """Exact plant lengths and softness displacement as a self-body image."""

    def __init__(self, plant):
        self.plant = plant
        self.n_muscles = plant.n_muscles
        self.n_joints = plant.chain.n_joints

    def ideal(self, theta):
        return self.plant.routing.relative_lengths(self.plant.chain, theta)

    def compensation(self, theta, tension):
        return self.plant.softness_displacement(theta, np.asarray(tension, float))


def weightless(plant):
    p = copy.copy(plant)
    p.masses = []
    return p


def test_preset():
    assert GRASP_PRESET_DEG == {"shoulder_pitch": -30.0, "elbow": -60.0}


def test_grasp_target_on_arm(arm):
    assert np.allclose(np.rad2deg(grasp_target(arm.chain)), [-30, 0, 0, -60])


def test_matched_model_holds_without_load(arm):
    # a low bias keeps the antagonists' net bias torque small
    plant = weightless(arm.plant)
    target = np.deg2rad([-20.0, 5.0, 5.0, -50.0])
    params = ControlParams(t_bias=1.0, k_stiff=arm.control.k_stiff)
    log = hold_posture(MatchedImage(plant), plant, target, ExternalLoad(), 3, params,
                       warmup=0, theta_start=np.zeros(4))
    assert log.errors_deg[0] < 1.0


def test_matched_model_errors_do_not_grow(planar):
    target = np.deg2rad([30.0, 45.0])
    log = hold_posture(MatchedImage(planar.plant), planar.plant, target,
                       ExternalLoad.dumbbell(1.0), 8, planar.control, warmup=0)
    assert np.all(np.diff(log.errors_deg[1:]) <= 1e-9)


def test_route_change_term_reduces_droop(planar, planar_trained):
    sbi = planar_trained[0]
    target = np.deg2rad([30.0, 45.0])
    load = ExternalLoad.dumbbell(1.4)
    on = hold_posture(sbi, planar.plant, target, load, 8, planar.control)
    off = hold_posture(sbi.without_mrcm(), planar.plant, target, load, 8, planar.control)
    assert off.final_error > on.final_error


def test_frozen_command_under_load(planar, planar_trained):
    target = np.deg2rad([30.0, 45.0])
    log = hold_posture(planar_trained[0], planar.plant, target, ExternalLoad.dumbbell(1.4), 5,
                       planar.control, compensate=False)
    loaded = [c for c, ld in zip(log.commands, log.loaded) if ld]
    assert all(np.array_equal(c, loaded[0]) for c in loaded)


def test_target_outside_limits(planar, planar_trained):
    with pytest.raises(ValueError):
        hold_posture(planar_trained[0], planar.plant, np.deg2rad([200.0, 0.0]), None, 1,
                     planar.control)


def test_over_tension_aborts(planar, planar_trained):
    plant = copy.copy(planar.plant)
    plant.tension_cap = 20.0
    log = hold_posture(planar_trained[0], plant, np.deg2rad([30.0, 45.0]),
                       ExternalLoad.dumbbell(1.4), 5, planar.control)
    assert log.aborted and len(log.theta) < 8
