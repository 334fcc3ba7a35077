"""Pluggable fixed-step integrators for the two-link plant.

The benchmark set is explicit Euler ("e"), implicit midpoint ("i"),
semi-implicit Euler ("if") and the momentum-matching variational stepper
("vi").  RK4 is available as a ground-truth oracle but is not part of the
benchmarked set.

The variational step discretizes the action with the midpoint rule and
advances by matching discrete momenta: starting from an explicit-Euler guess
for the next configuration, Newton corrections driven by the momentum
residual refine it, after which the new velocity is recovered from the
right discrete momentum.  Applied torque and viscous damping enter with
trapezoidal half-step weights, the damping force being evaluated at the
step's finite-difference velocity.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from . import _kernels as _k
from .model import ModelParams, State, continuous_lagrangian


class IntegratorError(RuntimeError):
    pass


class SingularCorrectionMatrix(IntegratorError):
    """Newton correction matrix is numerically singular (pathological
    parameters or a non-finite state)."""


class FixedPointDivergence(IntegratorError):
    """Implicit-midpoint fixed point failed to contract (dt too large)."""


class StepperKind(enum.Enum):
    EXPLICIT_EULER = "e"
    IMPLICIT_MIDPOINT = "i"
    SEMI_IMPLICIT = "if"
    RK4 = "rk4"
    VARIATIONAL = "vi"

    @property
    def code(self):
        return _CODES[self]

    @classmethod
    def from_name(cls, name: str) -> "StepperKind":
        try:
            return cls(name.strip().lower())
        except ValueError:
            valid = ", ".join(k.value for k in cls)
            raise ValueError(f"unknown stepper {name!r} (expected one of: {valid})") from None


_CODES = {
    StepperKind.EXPLICIT_EULER: _k.EULER,
    StepperKind.IMPLICIT_MIDPOINT: _k.MIDPOINT,
    StepperKind.SEMI_IMPLICIT: _k.SEMI_IMPLICIT,
    StepperKind.RK4: _k.RK4,
    StepperKind.VARIATIONAL: _k.VARIATIONAL,
}

#: the ablation set; RK4 stays oracle-only
BENCHMARK_KINDS = (StepperKind.VARIATIONAL, StepperKind.EXPLICIT_EULER,
                   StepperKind.IMPLICIT_MIDPOINT, StepperKind.SEMI_IMPLICIT)


@dataclass(frozen=True)
class DiscreteLagrangianCtx:
    """Timestep, plant and Newton settings for the variational stepper."""

    dt: float
    params: ModelParams
    newton_iters: int = 2
    newton_tol: float = 1e-9

    def __post_init__(self):
        if not self.dt > 0.0:
            raise ValueError("dt must be positive")
        if self.newton_iters < 1:
            raise ValueError("newton_iters must be at least 1")


def discrete_lagrangian(q_n, q_np1, ctx: DiscreteLagrangianCtx) -> float:
    """Midpoint quadrature of the action over one step: L(mid, diff/dt) * dt."""
    q_n = np.asarray(q_n, dtype=float)
    q_np1 = np.asarray(q_np1, dtype=float)
    mid = State(q=0.5 * (q_n + q_np1), v=(q_np1 - q_n) / ctx.dt)
    return continuous_lagrangian(mid, ctx.params) * ctx.dt


def _phys(params: ModelParams):
    return params.coeffs()


def d1_ld(q_n, q_np1, ctx: DiscreteLagrangianCtx):
    """Gradient of the discrete Lagrangian wrt its first slot."""
    a1, a2, a3, gc1, gc2, _, _ = _phys(ctx.params)
    d1a, d1b, _, _ = _k._dld(float(q_n[0]), float(q_n[1]), float(q_np1[0]), float(q_np1[1]),
                             ctx.dt, a1, a2, a3, gc1, gc2)
    return np.array([d1a, d1b])


def d2_ld(q_n, q_np1, ctx: DiscreteLagrangianCtx):
    """Gradient of the discrete Lagrangian wrt its second slot."""
    a1, a2, a3, gc1, gc2, _, _ = _phys(ctx.params)
    _, _, d2a, d2b = _k._dld(float(q_n[0]), float(q_n[1]), float(q_np1[0]), float(q_np1[1]),
                             ctx.dt, a1, a2, a3, gc1, gc2)
    return np.array([d2a, d2b])


def vi_step(s: State, tau, ctx: DiscreteLagrangianCtx) -> State:
    """One variational step under a zero-order-hold torque."""
    a1, a2, a3, gc1, gc2, b1, b2 = _phys(ctx.params)
    q1, q2, v1, v2, ok = _k._step_vi(
        float(s.q[0]), float(s.q[1]), float(s.v[0]), float(s.v[1]),
        float(tau[0]), float(tau[1]), ctx.dt,
        a1, a2, a3, gc1, gc2, b1, b2, ctx.newton_iters, ctx.newton_tol)
    if not ok:
        raise SingularCorrectionMatrix(
            "variational step failed: singular correction matrix or non-finite state")
    return State(q=np.array([q1, q2]), v=np.array([v1, v2]))


def classical_step(kind: StepperKind, s: State, tau, dt: float, p: ModelParams) -> State:
    """One step of a non-variational scheme."""
    if kind is StepperKind.VARIATIONAL:
        raise ValueError("use vi_step for the variational stepper")
    a1, a2, a3, gc1, gc2, b1, b2 = _phys(p)
    q1, q2, v1, v2, ok = _k._step(
        kind.code, float(s.q[0]), float(s.q[1]), float(s.v[0]), float(s.v[1]),
        float(tau[0]), float(tau[1]), dt, a1, a2, a3, gc1, gc2, b1, b2, 1, 0.0)
    if not ok:
        raise FixedPointDivergence(
            f"implicit midpoint failed to contract at dt={dt} (reduce the step)")
    return State(q=np.array([q1, q2]), v=np.array([v1, v2]))


def newton_residual_report(s: State, tau, ctx: DiscreteLagrangianCtx):
    """Momentum-residual norms of the variational solve, entry i after i
    Newton corrections (entry 0 is the explicit-Euler guess)."""
    a1, a2, a3, gc1, gc2, b1, b2 = _phys(ctx.params)
    q1, q2 = float(s.q[0]), float(s.q[1])
    v1, v2 = float(s.v[0]), float(s.v[1])
    t1, t2 = float(tau[0]), float(tau[1])
    dt = ctx.dt
    h = 0.5 * dt
    c2 = math.cos(q2)
    m11 = a1 + a2 + 2.0 * a3 * c2
    m12 = a2 + a3 * c2
    p1 = m11 * v1 + m12 * v2
    p2 = m12 * v1 + a2 * v2
    qb1 = q1 + v1 * dt
    qb2 = q2 + v2 * dt
    norms = []
    for it in range(ctx.newton_iters + 1):
        d1a, d1b, _, _ = _k._dld(q1, q2, qb1, qb2, dt, a1, a2, a3, gc1, gc2)
        w1 = (qb1 - q1) / dt
        w2 = (qb2 - q2) / dt
        r1 = p1 + d1a + h * (t1 - b1 * w1)
        r2 = p2 + d1b + h * (t2 - b2 * w2)
        norms.append(math.hypot(r1, r2))
        if it == ctx.newton_iters:
            break
        a11, a12, a21, a22 = _k._vi_newton_matrix(q1, q2, qb1, qb2, dt,
                                                  a1, a2, a3, gc1, gc2, b1, b2)
        det = a11 * a22 - a12 * a21
        if not abs(det) > 1e-30:
            raise SingularCorrectionMatrix("singular correction matrix in residual report")
        qb1 -= (a22 * r1 - a12 * r2) / det
        qb2 -= (a11 * r2 - a21 * r1) / det
    return np.asarray(norms)


def simulate(kind: StepperKind, s0: State, dt: float, n_steps: int, p: ModelParams,
             tau=(0.0, 0.0), newton_iters: int = 2, newton_tol: float = 1e-9):
    """Constant-torque trajectory, returned as an (n_steps + 1, 4) array."""
    out = np.empty((n_steps + 1, 4))
    phys = np.asarray(p.coeffs())
    done = _k._trajectory(kind.code, s0.as_array(), float(tau[0]), float(tau[1]),
                          dt, n_steps, phys, newton_iters, newton_tol, out)
    if done < n_steps:
        err = (SingularCorrectionMatrix if kind is StepperKind.VARIATIONAL
               else FixedPointDivergence)
        raise err(f"{kind.value} stepper failed at step {done} (dt={dt})")
    return out
