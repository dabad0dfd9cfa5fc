import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import pin_joint
from selfbody.muscle_geometry import Muscle, MuscleRouting, muscle_jacobian


def test_relative_lengths_zero_at_home(planar, arm):
    for model in (planar, arm):
        for routing in (model.routing, model.plant.routing):
            z = routing.relative_lengths(model.chain, np.zeros(model.chain.n_joints))
            assert np.array_equal(z, np.zeros(routing.n_muscles))


def test_shortening_muscle_is_monotone():
    chain, routing = pin_joint()
    theta = np.linspace(0, 1, 101)
    lengths = np.array([routing.relative_lengths(chain, [t])[1] for t in theta])
    assert np.all(np.diff(lengths) < 0)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_relative_is_absolute_minus_rest(seed):
    from selfbody.modelfile import load_model
    m = load_model("arm4dof")
    theta = np.random.default_rng(seed).uniform(m.chain.lower, m.chain.upper)
    rel = m.routing.relative_lengths(m.chain, theta)
    expect = m.routing.absolute_lengths(m.chain, theta) - m.routing.rest_lengths
    assert np.max(np.abs(rel - expect)) < 1e-12


def test_pin_joint_constant_moment_arm():
    chain, routing = pin_joint(r=20.0)
    G = muscle_jacobian(routing, chain, [0.0]).matrix[:, 0]
    assert abs(G[0] - 20.0) < 0.01
    assert abs(G[1] + 20.0) < 0.01
    analytic = routing.moment_arms(chain, [0.0])[:, 0]
    assert np.all(np.abs(G - analytic) <= 1e-3 * np.abs(analytic))


def test_no_distal_waypoint_gives_zero_column(planar):
    theta = np.deg2rad([30.0, 45.0])
    G = muscle_jacobian(planar.routing, planar.chain, theta).matrix
    shoulder = [i for i, n in enumerate(planar.routing.names) if n.startswith("shoulder")]
    elbow = [i for i, n in enumerate(planar.routing.names) if n.startswith("elbow")]
    assert np.all(G[shoulder, 1] == 0)
    assert np.all(np.abs(G[elbow, 0]) < 1e-9)


def test_step_consistency(arm):
    theta = np.array([-0.4, 0.1, 0.1, -1.0])
    a = muscle_jacobian(arm.routing, arm.chain, theta, 1e-4).matrix
    b = muscle_jacobian(arm.routing, arm.chain, theta, 1e-5).matrix
    assert np.max(np.abs(a - b)) < 1e-3


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_jacobian_matches_analytic_moment_arms(seed):
    from selfbody.modelfile import load_model
    m = load_model("arm4dof")
    margin = 1e-3
    theta = np.random.default_rng(seed).uniform(m.chain.lower + margin, m.chain.upper - margin)
    G = muscle_jacobian(m.routing, m.chain, theta).matrix
    assert np.allclose(G, m.routing.moment_arms(m.chain, theta), atol=1e-5)


def test_one_sided_difference_at_limit(planar):
    theta = planar.chain.upper.copy()
    J = muscle_jacobian(planar.routing, planar.chain, theta)
    assert J.flagged and np.all(J.one_sided)
    inside = muscle_jacobian(planar.routing, planar.chain, theta - 0.1)
    assert not inside.flagged


def test_bad_step_rejected(planar):
    with pytest.raises(ValueError):
        muscle_jacobian(planar.routing, planar.chain, np.zeros(2), h=0.0)


def test_waypoint_reversal_keeps_lengths(arm):
    rev = MuscleRouting([Muscle(m.name, m.waypoints[::-1]) for m in arm.routing.muscles],
                        arm.chain)
    theta = np.array([-0.3, 0.2, -0.1, -0.8])
    assert np.allclose(rev.absolute_lengths(arm.chain, theta),
                       arm.routing.absolute_lengths(arm.chain, theta), atol=1e-12)
