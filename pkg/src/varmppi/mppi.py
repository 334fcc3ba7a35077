"""Sampling-based MPC: perturbation sampling, parallel rollout costing,
exponentially weighted sequence updates and control interpolation.

Each optimizer cycle perturbs the nominal control sequence with Gaussian
noise, rolls the plant model forward under every perturbed sequence, scores
the rollouts with a quadratic cost-to-go, and moves the nominal sequence
toward the softmin of the batch.  Rollout samples are mutually independent;
sample k consumes a dedicated slice of the cycle's Philox counter stream, so
the batch is reproducible from the seed alone regardless of how samples are
scheduled across threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as _k
from .integrators import StepperKind
from .model import GoalSpec, ModelParams, State, apply_actuation, wrap_angle


class DegenerateWeights(RuntimeError):
    """Every rollout in the batch diverged (all costs infinite)."""


def _as_diag(x, n, name):
    arr = np.asarray(x, dtype=float).ravel()
    if arr.size == 1:
        arr = np.full(n, arr[0])
    if arr.shape != (n,):
        raise ValueError(f"{name} must have {n} diagonal entries")
    if np.any(arr < 0.0):
        raise ValueError(f"{name} entries must be nonnegative")
    return arr


def _as_cov(x):
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        arr = float(arr) * np.eye(2)
    elif arr.shape == (2,):
        arr = np.diag(arr)
    if arr.shape != (2, 2) or not np.allclose(arr, arr.T):
        raise ValueError("sigma must be a symmetric 2x2 covariance")
    return arr


def _chol2(sig):
    l11 = math.sqrt(sig[0, 0])
    l21 = sig[1, 0] / l11
    rest = sig[1, 1] - l21 * l21
    if not rest > 0.0 or not sig[0, 0] > 0.0:
        raise ValueError("sigma must be positive definite")
    return l11, l21, math.sqrt(rest)


@dataclass
class MppiConfig:
    """Optimizer hyperparameters.

    Defaults: horizon 20, 4096 samples, lambda 50, alpha 1, sigma 0.2*I,
    Q diag(10, 1, 0.1, 0.1), R diag(0.1, 0.1), P 1e6*diag(5, 5, 2, 2) and a
    20 ms rollout step.  ``gamma = lambda * (1 - alpha)`` couples the noise
    into the stage cost; the default alpha = 1 turns that coupling off.
    """

    horizon: int = 20
    samples: int = 4096
    lam: float = 50.0
    alpha: float = 1.0
    sigma: np.ndarray = field(default_factory=lambda: 0.2 * np.eye(2))
    q_diag: np.ndarray = field(default_factory=lambda: np.array([10.0, 1.0, 0.10, 0.10]))
    r_diag: np.ndarray = field(default_factory=lambda: np.array([0.10, 0.10]))
    p_diag: np.ndarray = field(default_factory=lambda: 1e6 * np.array([5.0, 5.0, 2.0, 2.0]))
    rollout_dt: float = 0.02
    newton_iters: int = 2
    newton_tol: float = 1e-9

    def __post_init__(self):
        if self.horizon < 1 or self.samples < 1:
            raise ValueError("horizon and samples must be at least 1")
        if not self.lam > 0.0:
            raise ValueError("lambda must be positive")
        if not self.rollout_dt > 0.0:
            raise ValueError("rollout_dt must be positive")
        self.sigma = _as_cov(self.sigma)
        _chol2(self.sigma)
        self.q_diag = _as_diag(self.q_diag, 4, "Q")
        self.r_diag = _as_diag(self.r_diag, 2, "R")
        self.p_diag = _as_diag(self.p_diag, 4, "P")

    @property
    def gamma(self):
        return self.lam * (1.0 - self.alpha)


@dataclass
class ControlSequence:
    """T torque 2-vectors spaced dt apart, anchored at plan epoch t0."""

    points: np.ndarray
    dt: float
    t0: float = 0.0

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float)
        if self.points.ndim != 2 or self.points.shape[1] != 2 or self.points.shape[0] < 1:
            raise ValueError("points must be a (T, 2) array with T >= 1")
        if not np.all(np.isfinite(self.points)):
            raise ValueError("control points must be finite")
        if not self.dt > 0.0:
            raise ValueError("dt must be positive")

    @classmethod
    def zeros(cls, horizon, dt, t0=0.0):
        return cls(points=np.zeros((horizon, 2)), dt=dt, t0=t0)

    @property
    def duration(self):
        return self.points.shape[0] * self.dt


@dataclass
class RolloutBatch:
    """Noise draws and cost-to-go of K independent rollouts."""

    perturbations: np.ndarray  # (K, T, 2)
    costs: np.ndarray          # (K,)
    seed: int


def _state_error(s_arr, goal_arr):
    e = s_arr - goal_arr
    return np.array([wrap_angle(e[0]), wrap_angle(e[1]), e[2], e[3]])


def stage_cost(s: State, u, du, cfg: MppiConfig, goal: GoalSpec) -> float:
    """Quadratic state penalty plus the noise-coupling term (zero when alpha=1)."""
    e = _state_error(s.as_array(), goal.x_goal.as_array())
    c = float(e @ (cfg.q_diag * e))
    if cfg.gamma != 0.0:
        u = np.asarray(u, dtype=float)
        du = np.asarray(du, dtype=float)
        c += cfg.gamma * float((u + du) @ np.linalg.solve(cfg.sigma, u))
    return c


def cost_to_go(traj, controls, perturbations, cfg: MppiConfig, goal: GoalSpec) -> float:
    """Stage costs plus quadratic control cost over T steps plus terminal cost.

    ``traj`` holds T+1 states (arrays of shape (T+1, 4)); controls and
    perturbations hold the T nominal inputs and noise draws that produced it.
    """
    traj = np.asarray(traj, dtype=float)
    controls = np.asarray(controls, dtype=float)
    perturbations = np.asarray(perturbations, dtype=float)
    T = controls.shape[0]
    if traj.shape != (T + 1, 4):
        raise ValueError("trajectory must hold exactly T+1 states")
    goal_arr = goal.x_goal.as_array()
    c = 0.0
    for i in range(T):
        c += stage_cost(State.from_array(traj[i]), controls[i], perturbations[i], cfg, goal)
        c += float(controls[i] @ (cfg.r_diag * controls[i]))
    e = _state_error(traj[T], goal_arr)
    return c + float(e @ (cfg.p_diag * e))


def _words_per_sample(horizon):
    # two raw words per control point, padded to whole Philox blocks (4 words)
    return ((2 * horizon + 3) // 4) * 4


def rollout_batch(s0: State, seq: ControlSequence, cfg: MppiConfig, params: ModelParams,
                  goal: GoalSpec, stepper: StepperKind = StepperKind.VARIATIONAL,
                  seed: int = 0) -> RolloutBatch:
    """Sample K perturbations of ``seq`` and cost the resulting rollouts.

    Deterministic in ``seed``.  A rollout whose stepper fails is assigned
    infinite cost; the rest of the batch is unaffected.
    """
    if seed < 0:
        raise ValueError("seed must be nonnegative")
    K, T = cfg.samples, cfg.horizon
    if seq.points.shape[0] != T:
        raise ValueError("sequence length must equal the configured horizon")
    wps = _words_per_sample(T)
    raw = np.random.Philox(key=seed).random_raw(K * wps)
    l11, l21, l22 = _chol2(cfg.sigma)
    det = cfg.sigma[0, 0] * cfg.sigma[1, 1] - cfg.sigma[0, 1] ** 2
    si11 = cfg.sigma[1, 1] / det
    si22 = cfg.sigma[0, 0] / det
    si12 = -cfg.sigma[0, 1] / det
    pert = np.empty((K, T, 2))
    costs = np.empty(K)
    mask = params.actuation_mask
    _k._rollout_kernel(
        stepper.code, s0.as_array(), raw, wps, seq.points, l11, l21, l22,
        seq.dt, np.asarray(params.coeffs()), cfg.newton_iters, cfg.newton_tol,
        params.tau_max, float(bool(mask[0])), float(bool(mask[1])),
        goal.x_goal.as_array(), cfg.q_diag, cfg.r_diag, cfg.p_diag,
        cfg.gamma, si11, si12, si22, pert, costs)
    return RolloutBatch(perturbations=pert, costs=costs, seed=seed)


def softmax_weights(costs, lam):
    """Normalized exp(-(S - min S)/lambda); infinite-cost samples get weight 0."""
    costs = np.asarray(costs, dtype=float)
    finite = np.isfinite(costs)
    if not np.any(finite):
        raise DegenerateWeights("all rollouts diverged; no finite cost in batch")
    w = np.exp(-(costs - np.min(costs[finite])) / lam)
    w[~finite] = 0.0
    return w / np.sum(w)


def update_sequence(seq: ControlSequence, batch: RolloutBatch, cfg: MppiConfig) -> ControlSequence:
    """Move each control point by the weight-averaged perturbation."""
    w = softmax_weights(batch.costs, cfg.lam)
    new_points = seq.points + np.tensordot(w, batch.perturbations, axes=(0, 0))
    return ControlSequence(points=new_points, dt=seq.dt, t0=seq.t0)


def interpolate_shift(seq: ControlSequence, elapsed: float) -> ControlSequence:
    """Resample the sequence at nodes moved ``elapsed`` seconds forward.

    Piecewise-linear interpolation of the stored points; queries past the
    final point repeat it.  The plan epoch advances by ``elapsed``.
    """
    if not 0.0 <= elapsed < seq.duration:
        raise ValueError(f"elapsed must be in [0, {seq.duration}) (got {elapsed})")
    if elapsed == 0.0:
        return ControlSequence(points=seq.points.copy(), dt=seq.dt, t0=seq.t0)
    T = seq.points.shape[0]
    grid = seq.dt * np.arange(T)
    query = grid + elapsed
    new_points = np.column_stack([np.interp(query, grid, seq.points[:, j]) for j in (0, 1)])
    return ControlSequence(points=new_points, dt=seq.dt, t0=seq.t0 + elapsed)


def mppi_control(s: State, seq: ControlSequence, cfg: MppiConfig, params: ModelParams,
                 goal: GoalSpec, stepper: StepperKind = StepperKind.VARIATIONAL,
                 seed: int = 0):
    """One sample-and-update cycle.

    Returns the first control of the updated sequence (masked and clamped)
    together with the updated sequence for reuse next cycle.  The stored
    sequence is clamped to the torque box: letting it wander past the limit
    would clamp every perturbed sample to the same applied torque and leave
    the optimizer without a gradient (classic actuator windup).
    """
    batch = rollout_batch(s, seq, cfg, params, goal, stepper, seed)
    new_seq = update_sequence(seq, batch, cfg)
    np.clip(new_seq.points, -params.tau_max, params.tau_max, out=new_seq.points)
    return apply_actuation(new_seq.points[0], params), new_seq


def _cycle_seed(master_seed, cycle):
    return int(np.random.SeedSequence((master_seed, cycle)).generate_state(1, np.uint64)[0])


class MppiController:
    """Cycling controller: shift the plan by the elapsed time, sample fresh
    noise, update, apply the first control.

    Instances carry the nominal sequence between calls and must not be
    shared across threads; clone one per episode instead.
    """

    def __init__(self, cfg: MppiConfig, params: ModelParams, goal: GoalSpec,
                 stepper: StepperKind = StepperKind.VARIATIONAL, seed: int = 0):
        self.cfg = cfg
        self.params = params
        self.goal = goal
        self.stepper = stepper
        self.seed = seed
        self.cycle = 0
        self._last_t = None
        self.sequence = ControlSequence.zeros(cfg.horizon, cfg.rollout_dt)

    def reset_sequence(self, seq: ControlSequence):
        self.sequence = seq

    def _shift_elapsed(self, t):
        if self._last_t is None:
            return 0.0
        # the controller is consulted far more often than the horizon spans;
        # clamp pathological gaps just below the interpolation domain
        return min(t - self._last_t, self.sequence.duration * (1.0 - 1e-12))

    def __call__(self, t: float, state: State):
        elapsed = self._shift_elapsed(t)
        if elapsed > 0.0:
            self.sequence = interpolate_shift(self.sequence, elapsed)
        u, self.sequence = mppi_control(
            state, self.sequence, self.cfg, self.params, self.goal,
            self.stepper, _cycle_seed(self.seed, self.cycle))
        self.cycle += 1
        self._last_t = t
        return u
