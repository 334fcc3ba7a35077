"""Two-link pendulum plant: parameters, kinematics and continuous dynamics.

Conventions used throughout the package:

* joint angles ``q = (q1, q2)`` with ``q1`` measured from the downward
  vertical and ``q2`` relative to the first link; ``q = (0, 0)`` hangs down,
  ``q = (pi, 0)`` is the upright equilibrium,
* angles are kept unwrapped (no modulo) in the state; wrapping happens only
  where differences are compared,
* ``I1``/``I2`` are rotational inertias of each link about its own joint
  axis, so a point mass ``m`` at distance ``r`` corresponds to ``I = m r^2``,
* potential energy datum ``V(0, 0) = 0``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

TWO_PI = 2.0 * np.pi

PENDUBOT_MASK = (True, False)
ACROBOT_MASK = (False, True)


def wrap_angle(a):
    """Map angles to the representative in (-pi, pi]."""
    a = np.asarray(a, dtype=float)
    r = a - TWO_PI * np.floor((a + np.pi) / TWO_PI)
    r = np.where(r <= -np.pi, np.pi, r)
    return float(r) if r.ndim == 0 else r


@dataclass(frozen=True)
class ModelParams:
    """Physical parameters of the two-link plant.

    Masses in kg, lengths in m, inertias in kg m^2 (about the joint axis),
    damping in N m s/rad, torque limit in N m.  ``actuation_mask`` selects
    the driven joint: ``(True, False)`` for the pendubot, ``(False, True)``
    for the acrobot.
    """

    m1: float = 0.608
    m2: float = 0.630
    l1: float = 0.3
    l2: float = 0.4
    r1: float = 0.1
    r2: float = 0.12
    I1: float = 0.054
    I2: float = 0.02
    b1: float = 0.01
    b2: float = 0.01
    g: float = 9.81
    tau_max: float = 6.0
    actuation_mask: tuple = PENDUBOT_MASK

    def __post_init__(self):
        for name in ("m1", "m2", "l1", "l2", "r1", "r2", "I1", "I2", "g", "tau_max"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"{name} must be strictly positive")
        for name in ("b1", "b2"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be nonnegative")
        if self.r1 > self.l1 or self.r2 > self.l2:
            raise ValueError("center of mass must lie on the link (r_i <= l_i)")
        if len(self.actuation_mask) != 2:
            raise ValueError("actuation_mask must have one entry per joint")
        a1, a2, a3 = self._inertia_coeffs()
        if a1 * a2 <= a3 * a3:
            raise ValueError("inertia parameters make the mass matrix singular")

    def _inertia_coeffs(self):
        a1 = self.I1 + self.m2 * self.l1 ** 2
        return a1, self.I2, self.m2 * self.l1 * self.r2

    def coeffs(self):
        """Constants (a1, a2, a3, gc1, gc2, b1, b2) of the closed-form dynamics.

        M(q) = [[a1 + a2 + 2 a3 c2, a2 + a3 c2], [a2 + a3 c2, a2]] and
        V(q) = gc1 (1 - cos q1) + gc2 (1 - cos(q1 + q2)).
        """
        a1, a2, a3 = self._inertia_coeffs()
        gc1 = (self.m1 * self.r1 + self.m2 * self.l1) * self.g
        gc2 = self.m2 * self.r2 * self.g
        return (a1, a2, a3, gc1, gc2, self.b1, self.b2)


@dataclass(frozen=True, eq=False)
class State:
    """Joint angles (rad, unwrapped) and velocities (rad/s)."""

    q: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "q", np.asarray(self.q, dtype=float))
        object.__setattr__(self, "v", np.asarray(self.v, dtype=float))
        if self.q.shape != (2,) or self.v.shape != (2,):
            raise ValueError("q and v must be 2-vectors")
        if not (np.all(np.isfinite(self.q)) and np.all(np.isfinite(self.v))):
            raise ValueError("state components must be finite")

    @classmethod
    def from_array(cls, x):
        x = np.asarray(x, dtype=float)
        return cls(q=x[:2], v=x[2:])

    def as_array(self):
        return np.concatenate([self.q, self.v])


def upright_goal():
    return State(q=np.array([np.pi, 0.0]), v=np.zeros(2))


@dataclass(frozen=True, eq=False)
class GoalSpec:
    """Upright target plus the thresholds that define 'being up'."""

    x_goal: State = field(default_factory=upright_goal)
    upright_height_threshold: float = 0.9
    upright_velocity_threshold: float = 10.0

    def __post_init__(self):
        if not 0.0 < self.upright_height_threshold <= 1.0:
            raise ValueError("height threshold must be in (0, 1]")
        if not self.upright_velocity_threshold > 0.0:
            raise ValueError("velocity threshold must be positive")


def mass_matrix(q, p: ModelParams):
    """Joint-space inertia matrix M(q), 2x2 symmetric positive definite."""
    a1, a2, a3 = p._inertia_coeffs()
    c2 = np.cos(q[1])
    m12 = a2 + a3 * c2
    return np.array([[a1 + a2 + 2.0 * a3 * c2, m12], [m12, a2]])


def potential_energy(q, p: ModelParams):
    """Gravitational potential, zero at the hanging configuration."""
    _, _, _, gc1, gc2, _, _ = p.coeffs()
    return gc1 * (1.0 - np.cos(q[0])) + gc2 * (1.0 - np.cos(q[0] + q[1]))


def gravity_torque(q, p: ModelParams):
    """-dV/dq; vanishes at both the hanging and the upright equilibrium."""
    _, _, _, gc1, gc2, _, _ = p.coeffs()
    s1 = np.sin(q[0])
    s12 = np.sin(q[0] + q[1])
    return np.array([-(gc1 * s1 + gc2 * s12), -gc2 * s12])


def coriolis_vector(q, v, p: ModelParams):
    """Coriolis/centrifugal generalized forces c(q, v) with M qdd + c + dV/dq + B v = tau."""
    a3 = p.m2 * p.l1 * p.r2
    h = a3 * np.sin(q[1])
    return np.array([-h * v[1] * (2.0 * v[0] + v[1]), h * v[0] ** 2])


def kinetic_energy(s: State, p: ModelParams):
    return 0.5 * float(s.v @ mass_matrix(s.q, p) @ s.v)


def total_energy(s: State, p: ModelParams):
    return kinetic_energy(s, p) + potential_energy(s.q, p)


def continuous_lagrangian(s: State, p: ModelParams):
    """Kinetic minus potential energy."""
    return kinetic_energy(s, p) - potential_energy(s.q, p)


def forward_dynamics(s: State, tau, p: ModelParams):
    """Joint accelerations for an applied (already masked/clamped) torque."""
    tau = np.asarray(tau, dtype=float)
    b = np.array([p.b1, p.b2])
    rhs = tau - coriolis_vector(s.q, s.v, p) + gravity_torque(s.q, p) - b * s.v
    return np.linalg.solve(mass_matrix(s.q, p), rhs)


def apply_actuation(u_raw, p: ModelParams):
    """Zero the passive joint and clamp the active one to the torque limit."""
    u = np.asarray(u_raw, dtype=float) * np.asarray(p.actuation_mask, dtype=float)
    return np.clip(u, -p.tau_max, p.tau_max)


def end_effector_height(q, p: ModelParams):
    """Height of the second link's tip above the pivot (max is l1 + l2)."""
    return -p.l1 * np.cos(q[0]) - p.l2 * np.cos(q[0] + q[1])


def is_upright(s: State, goal: GoalSpec, p: ModelParams):
    """True iff the tip is near full extension upward and the joints are slow."""
    high = end_effector_height(s.q, p) >= goal.upright_height_threshold * (p.l1 + p.l2)
    slow = np.max(np.abs(s.v)) < goal.upright_velocity_threshold
    return bool(high and slow)
