import numpy as np
import pytest

from selfbody.experiments import initial_image
from selfbody.kinematics import KinematicChain, Link
from selfbody.modelfile import load_model
from selfbody.muscle_geometry import Muscle, MuscleRouting, Waypoint


@pytest.fixture(scope="session")
def planar():
    return load_model("planar2dof")


@pytest.fixture(scope="session")
def planar_nominal():
    return load_model("planar2dof", perturb=False)


@pytest.fixture(scope="session")
def arm():
    return load_model("arm4dof")


@pytest.fixture(scope="session")
def planar_trained(planar):
    """Initial self-body image of the planar fixture and its training report."""
    return initial_image(planar)


def pin_joint(r=20.0, far=1e6):
    """One z-axis joint at the origin with two muscles at radius ``r``.

    The insertion sits on the link at (r, 0, 0); the origins are on the base
    far along -y and +y, so the moment arm at theta = 0 is exactly +r and -r.
    """
    chain = KinematicChain([Link("pin", np.zeros(3), [0, 0, 1], -1.5, 1.5)],
                           hand_offset=[100.0, 0.0, 0.0])
    muscles = [
        Muscle("lengthening", [Waypoint(0, [r, -far, 0]), Waypoint(1, [r, 0, 0])]),
        Muscle("shortening", [Waypoint(0, [r, far, 0]), Waypoint(1, [r, 0, 0])]),
    ]
    return chain, MuscleRouting(muscles, chain)


def random_chain(rng, n=4):
    links = []
    for _ in range(n):
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        rot = np.linalg.qr(rng.normal(size=(3, 3)))[0]
        if np.linalg.det(rot) < 0:
            rot[:, 0] *= -1
        links.append(Link("j", rng.uniform(-100, 100, 3), axis, -np.pi, np.pi, rot))
    return KinematicChain(links, hand_offset=rng.uniform(-50, 50, 3))


ACCEPTANCE_LINES = {}


def record_criterion(number, ok, detail):
    ACCEPTANCE_LINES[number] = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(ACCEPTANCE_LINES[number])
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
