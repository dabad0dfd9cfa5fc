"""Via-point muscle routing: absolute and relative lengths, muscle Jacobian.

A muscle is a polyline through waypoints fixed on chain frames.  Its length
is the sum of straight segments; no wrapping surfaces are modelled.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kinematics import DimensionError, frames


@dataclass
class Waypoint:
    link: int
    offset: np.ndarray

    def __post_init__(self):
        self.offset = np.asarray(self.offset, dtype=float).reshape(3)


@dataclass
class Muscle:
    name: str
    waypoints: list


class MuscleRouting:
    """Muscles attached to a chain, with cached rest lengths at theta = 0."""

    def __init__(self, muscles, chain):
        for m in muscles:
            if len(m.waypoints) < 2:
                raise ValueError(f"muscle {m.name!r} needs at least two waypoints")
            for w in m.waypoints:
                if not 0 <= w.link <= chain.n_joints:
                    raise ValueError(f"muscle {m.name!r}: waypoint on unknown link {w.link}")
        self.muscles = list(muscles)
        self.n_joints = chain.n_joints
        self._links = np.array([w.link for m in muscles for w in m.waypoints])
        self._offsets = np.array([w.offset for m in muscles for w in m.waypoints])
        starts, owner = [], []
        k = 0
        for i, m in enumerate(muscles):
            for s in range(len(m.waypoints) - 1):
                starts.append(k + s)
                owner.append(i)
            k += len(m.waypoints)
        self._seg_a = np.array(starts)
        self._seg_b = self._seg_a + 1
        self._seg_owner = np.array(owner)
        self.rest_lengths = self._lengths(chain, np.zeros(chain.n_joints))

    @property
    def n_muscles(self):
        return len(self.muscles)

    @property
    def names(self):
        return [m.name for m in self.muscles]

    def _points(self, Rs, ps):
        return ps[self._links] + np.einsum("kij,kj->ki", Rs[self._links], self._offsets)

    def _lengths(self, chain, theta):
        Rs, ps, _, _ = frames(chain, theta)
        P = self._points(Rs, ps)
        seg = np.linalg.norm(P[self._seg_b] - P[self._seg_a], axis=1)
        return np.bincount(self._seg_owner, weights=seg, minlength=self.n_muscles)

    def _check(self, chain, theta):
        if chain.n_joints != self.n_joints:
            raise DimensionError("routing was built for a different chain")
        return chain.check(theta)

    def absolute_lengths(self, chain, theta):
        return self._lengths(chain, self._check(chain, theta))

    def relative_lengths(self, chain, theta):
        return self.absolute_lengths(chain, theta) - self.rest_lengths

    def moment_arms(self, chain, theta):
        """Analytic d(length)/d(theta), (muscles x joints) in mm/rad.

        Each waypoint on frame k moves with joints j < k at velocity
        ``axis_j x (p - origin_j)``; a segment's length rate is that relative
        velocity projected on the segment direction.
        """
        theta = self._check(chain, theta)
        Rs, ps, axes, origins = frames(chain, theta)
        P = self._points(Rs, ps)
        n = chain.n_joints
        # dP[k, j] = velocity of point k due to joint j
        dP = np.cross(axes[None, :, :], P[:, None, :] - origins[None, :, :])
        dP *= (np.arange(n)[None, :] < self._links[:, None])[..., None]
        d = P[self._seg_b] - P[self._seg_a]
        u = d / np.linalg.norm(d, axis=1, keepdims=True)
        rate = np.einsum("si,sji->sj", u, dP[self._seg_b] - dP[self._seg_a])
        G = np.zeros((self.n_muscles, n))
        np.add.at(G, self._seg_owner, rate)
        return G

    def with_offsets(self, offsets, chain):
        """Copy of this routing with waypoint offsets replaced (flat order)."""
        offsets = np.asarray(offsets, dtype=float)
        muscles, k = [], 0
        for m in self.muscles:
            wps = []
            for w in m.waypoints:
                wps.append(Waypoint(w.link, offsets[k]))
                k += 1
            muscles.append(Muscle(m.name, wps))
        return MuscleRouting(muscles, chain)

    @property
    def offsets(self):
        return self._offsets.copy()


def absolute_lengths(routing, chain, theta):
    return routing.absolute_lengths(chain, theta)


def relative_lengths(routing, chain, theta):
    return routing.relative_lengths(chain, theta)


@dataclass
class MuscleJacobian:
    matrix: np.ndarray
    one_sided: np.ndarray

    @property
    def flagged(self):
        return bool(self.one_sided.any())


def finite_difference_jacobian(fn, theta, lower, upper, h):
    """Central differences of ``fn`` over theta; one-sided at joint limits."""
    if h <= 0:
        raise ValueError("finite-difference step must be positive")
    theta = np.asarray(theta, dtype=float)
    n = theta.size
    f0 = None
    cols = []
    one_sided = np.zeros(n, dtype=bool)
    for j in range(n):
        e = np.zeros(n)
        e[j] = h
        up_ok = theta[j] + h <= upper[j]
        down_ok = theta[j] - h >= lower[j]
        if up_ok and down_ok:
            cols.append((fn(theta + e) - fn(theta - e)) / (2 * h))
            continue
        one_sided[j] = True
        if f0 is None:
            f0 = fn(theta)
        if up_ok:
            cols.append((fn(theta + e) - f0) / h)
        else:
            cols.append((f0 - fn(theta - e)) / h)
    return MuscleJacobian(np.column_stack(cols), one_sided)


def muscle_jacobian(routing, chain, theta, h=1e-4):
    theta = chain.check(theta)
    return finite_difference_jacobian(
        lambda th: routing.relative_lengths(chain, th), theta, chain.lower, chain.upper, h)


class GeometricModel:
    """The geometric joint-muscle model behind the estimator interface.

    Ignores tension, so it stands in for a self-body image when comparing
    against the plain geometric estimator.
    """

    def __init__(self, routing, chain):
        self.routing = routing
        self.chain = chain

    def predict_lengths(self, theta, tension=None):
        return self.routing.relative_lengths(self.chain, theta)

    def length_jacobian(self, theta, tension=None, h=1e-4):
        return muscle_jacobian(self.routing, self.chain, theta, h)
