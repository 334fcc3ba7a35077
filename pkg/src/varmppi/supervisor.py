"""Disturbance detection by one-step prediction mismatch, and warm-started
recovery through a pluggable auxiliary controller.

The monitor predicts the next measured state with one variational step of
the plant model over the control period.  When the weighted mismatch between
prediction and measurement exceeds the threshold, the supervised controller
discards its nominal sequence and reseeds it from the warm-start policy; the
normal optimizer cycle then refines that sequence.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .integrators import DiscreteLagrangianCtx, StepperKind, vi_step
from .model import (GoalSpec, ModelParams, State, apply_actuation, is_upright,
                    potential_energy, total_energy, wrap_angle)
from .mppi import ControlSequence, MppiConfig, MppiController

DEFAULT_MISMATCH_WEIGHTS = (1.0, 1.0, 0.1, 0.1)


def predict_next(s: State, applied, control_period: float, p: ModelParams,
                 newton_iters: int = 2, newton_tol: float = 1e-9) -> State:
    """Expected next measurement: one variational step over the control period."""
    ctx = DiscreteLagrangianCtx(dt=control_period, params=p,
                                newton_iters=newton_iters, newton_tol=newton_tol)
    return vi_step(s, applied, ctx)


def mismatch_norm(a: State, b: State, weights=DEFAULT_MISMATCH_WEIGHTS) -> float:
    """Weighted Euclidean distance, angle components compared wrapped."""
    w = np.asarray(weights, dtype=float)
    e = np.array([wrap_angle(a.q[0] - b.q[0]), wrap_angle(a.q[1] - b.q[1]),
                  a.v[0] - b.v[0], a.v[1] - b.v[1]])
    return math.sqrt(float(e @ (w * e)))


@dataclass
class DisturbanceMonitor:
    """Flags control steps whose measured state strays from the prediction."""

    threshold: float = 0.1
    weights: tuple = DEFAULT_MISMATCH_WEIGHTS
    last_prediction: State | None = None

    def __post_init__(self):
        if not self.threshold > 0.0:
            raise ValueError("threshold must be positive")

    def check(self, measured: State) -> bool:
        """True iff the measurement misses the stored prediction by more than
        the threshold (strict).  Vacuously false before the first arm()."""
        if self.last_prediction is None:
            return False
        return mismatch_norm(measured, self.last_prediction, self.weights) > self.threshold

    def arm(self, prediction: State):
        self.last_prediction = prediction


def check_disturbance(mon: DisturbanceMonitor, measured: State):
    """Functional form of the check; returns (triggered, monitor)."""
    return mon.check(measured), mon


class WarmStartKind(enum.Enum):
    NONE = "none"
    ENERGY = "energy"

    @classmethod
    def from_name(cls, name: str) -> "WarmStartKind":
        try:
            return cls(name.strip().lower())
        except ValueError:
            valid = ", ".join(k.value for k in cls)
            raise ValueError(f"unknown warm start {name!r} (expected one of: {valid})") from None


@dataclass(frozen=True)
class EnergySwingUpPolicy:
    """Pump/drain total energy toward the upright level through the driven joint.

    Stateless stand-in for a learned recovery policy: torque proportional to
    the energy deficit, gated by the driven joint's velocity so the applied
    power has the right sign; near the goal it backs off to zero and leaves
    stabilization to the optimizer.
    """

    energy_gain: float = 1.5
    pump_gain: float = 2.0

    def control(self, s: State, p: ModelParams, goal: GoalSpec):
        if is_upright(s, goal, p):
            return np.zeros(2)
        e_up = potential_energy(goal.x_goal.q, p)
        deficit = e_up - total_energy(s, p)
        active = 0 if p.actuation_mask[0] else 1
        u = np.zeros(2)
        u[active] = self.energy_gain * deficit * math.tanh(self.pump_gain * s.v[active])
        return u


def make_policy(kind: WarmStartKind, energy_gain: float = 1.5, pump_gain: float = 2.0):
    if kind is WarmStartKind.NONE:
        return None
    return EnergySwingUpPolicy(energy_gain=energy_gain, pump_gain=pump_gain)


def warm_start_sequence(s: State, policy, cfg: MppiConfig, p: ModelParams,
                        goal: GoalSpec, t0: float = 0.0) -> ControlSequence:
    """Roll the policy through the variational plant model for one horizon.

    ``policy`` is anything with ``control(state, params, goal) -> torque``;
    None yields the all-zero sequence.
    """
    if policy is None:
        return ControlSequence.zeros(cfg.horizon, cfg.rollout_dt, t0=t0)
    ctx = DiscreteLagrangianCtx(dt=cfg.rollout_dt, params=p,
                                newton_iters=cfg.newton_iters, newton_tol=cfg.newton_tol)
    points = np.empty((cfg.horizon, 2))
    x = s
    for i in range(cfg.horizon):
        u = apply_actuation(policy.control(x, p, goal), p)
        points[i] = u
        x = vi_step(x, u, ctx)
    return ControlSequence(points=points, dt=cfg.rollout_dt, t0=t0)


class SupervisedMppiController(MppiController):
    """Optimizer cycling plus prediction-mismatch monitoring.

    Detections are always recorded; the nominal sequence is replaced by the
    warm-start rollout only when a recovery policy is installed.
    """

    def __init__(self, cfg: MppiConfig, params: ModelParams, goal: GoalSpec,
                 control_period: float,
                 stepper: StepperKind = StepperKind.VARIATIONAL, seed: int = 0,
                 monitor: DisturbanceMonitor | None = None, policy=None):
        super().__init__(cfg, params, goal, stepper=stepper, seed=seed)
        self.control_period = control_period
        self.monitor = monitor
        self.policy = policy
        self.detections: list[float] = []

    def __call__(self, t: float, state: State):
        if self.monitor is not None and self.monitor.check(state):
            self.detections.append(t)
            if self.policy is not None:
                self.sequence = warm_start_sequence(
                    state, self.policy, self.cfg, self.params, self.goal, t0=t)
                self._last_t = t  # fresh plan; nothing to shift
        u = super().__call__(t, state)
        if self.monitor is not None:
            self.monitor.arm(predict_next(state, u, self.control_period, self.params,
                                          self.cfg.newton_iters, self.cfg.newton_tol))
        return u
