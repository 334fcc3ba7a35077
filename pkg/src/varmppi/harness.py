"""Closed-loop benchmark: fine-step plant simulation, fixed controller
cadence, randomized disturbance injection, swingup/uptime scoring and
multi-seed campaigns.

Three timescales are kept strictly apart: the plant integrates with RK4 at
``plant_dt``, the controller is consulted every ``control_period`` (the
sequence is shifted by exactly that much between cycles), and the
controller's internal rollouts use their own ``rollout_dt``.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels as _k
from .integrators import IntegratorError, StepperKind
from .model import (GoalSpec, ModelParams, State, apply_actuation, is_upright,
                    mass_matrix)
from .mppi import DegenerateWeights, MppiConfig
from .supervisor import (DisturbanceMonitor, SupervisedMppiController,
                         WarmStartKind, make_policy, mismatch_norm)

TORQUE_IMPULSE = "torque_impulse"
STATE_JUMP = "state_jump"

# salts for the per-purpose RNG streams derived from the episode seed
_SALT_INIT = 101
_SALT_DISTURB = 202


class ControllerTimeout(RuntimeError):
    """A controller cycle exceeded the wall-clock budget; carries the
    metrics accumulated so far."""

    def __init__(self, message, metrics):
        super().__init__(message)
        self.metrics = metrics


@dataclass(frozen=True)
class DisturbanceEvent:
    time: float
    kind: str = TORQUE_IMPULSE
    magnitude: float = 0.1

    def __post_init__(self):
        if self.kind not in (TORQUE_IMPULSE, STATE_JUMP):
            raise ValueError(f"unknown disturbance kind {self.kind!r}")


@dataclass(frozen=True)
class EpisodeConfig:
    """One seeded closed-loop run.

    ``disturbance_interval`` is the mean of the exponential inter-arrival
    distribution of random torque impulses; nonpositive disables them.
    ``schedule`` adds explicit one-off events.  ``cycle_budget`` arms the
    wall-clock watchdog.
    """

    duration: float = 60.0
    control_period: float = 0.002
    plant_dt: float = 1e-4
    seed: int = 0
    disturbance_interval: float = 0.0
    impulse_low: float = 0.05
    impulse_high: float = 0.3
    schedule: tuple = ()
    init_q_spread: float = 0.0
    init_v_spread: float = 0.0
    swingup_debounce: float = 0.1
    cycle_budget: float | None = None

    def __post_init__(self):
        if not (self.duration > 0 and self.control_period > 0 and self.plant_dt > 0):
            raise ValueError("duration, control_period and plant_dt must be positive")
        n = round(self.control_period / self.plant_dt)
        if n < 1 or abs(n * self.plant_dt - self.control_period) > 1e-9 * self.control_period:
            raise ValueError("control_period must be an integer multiple of plant_dt")
        if self.impulse_high < self.impulse_low or self.impulse_low < 0:
            raise ValueError("impulse magnitude range must satisfy 0 <= low <= high")

    @property
    def substeps(self):
        return round(self.control_period / self.plant_dt)

    @property
    def n_cycles(self):
        return round(self.duration / self.control_period)


@dataclass
class EpisodeMetrics:
    """Scores plus the per-control-step record of one episode."""

    swingups: int
    uptime: float
    times: np.ndarray
    states: np.ndarray       # (n, 4)
    torques: np.ndarray      # (n, 2)
    upright: np.ndarray      # (n,) bool
    disturbed: np.ndarray    # (n,) bool
    latencies: np.ndarray    # (n,) controller wall-clock seconds
    detections: list = field(default_factory=list)
    disturbance_log: list = field(default_factory=list)  # (t, kind, magnitude, weighted delta)
    aborted: bool = False
    failed: bool = False


def empty_metrics(failed=False):
    z = np.zeros(0)
    return EpisodeMetrics(swingups=0, uptime=0.0, times=z, states=np.zeros((0, 4)),
                          torques=np.zeros((0, 2)), upright=np.zeros(0, dtype=bool),
                          disturbed=np.zeros(0, dtype=bool), latencies=z, failed=failed)


class NullController:
    """Zero torque, for baselines and harness accounting tests."""

    def __call__(self, t, state):
        return np.zeros(2)


def inject_disturbance(s: State, kind: str, magnitude: float, rng, p: ModelParams) -> State:
    """Perturb the state.  A torque impulse J on a random joint adds
    M(q)^-1 J to the velocities; a state jump perturbs q and v uniformly."""
    if magnitude == 0.0:
        return s
    if kind == TORQUE_IMPULSE:
        joint = int(rng.integers(2))
        sign = 1.0 if rng.random() < 0.5 else -1.0
        imp = np.zeros(2)
        imp[joint] = sign * magnitude
        dv = np.linalg.solve(mass_matrix(s.q, p), imp)
        return State(q=s.q.copy(), v=s.v + dv)
    if kind == STATE_JUMP:
        dq = magnitude * rng.uniform(-1.0, 1.0, 2)
        dv = magnitude * rng.uniform(-1.0, 1.0, 2)
        return State(q=s.q + dq, v=s.v + dv)
    raise ValueError(f"unknown disturbance kind {kind!r}")


def generate_disturbances(ep: EpisodeConfig, rng):
    """Poisson-timed torque impulses plus the explicit schedule, time-sorted."""
    events = list(ep.schedule)
    if ep.disturbance_interval > 0.0:
        t = rng.exponential(ep.disturbance_interval)
        while t < ep.duration:
            mag = rng.uniform(ep.impulse_low, ep.impulse_high)
            events.append(DisturbanceEvent(time=t, kind=TORQUE_IMPULSE, magnitude=mag))
            t += rng.exponential(ep.disturbance_interval)
    return sorted(events, key=lambda e: e.time)


def _episode_rng(seed, salt):
    return np.random.Generator(np.random.Philox(np.random.SeedSequence((seed, salt))))


def initial_state(ep: EpisodeConfig):
    """Hanging rest, optionally perturbed by the seed-derived spread."""
    rng = _episode_rng(ep.seed, _SALT_INIT)
    q = ep.init_q_spread * rng.uniform(-1.0, 1.0, 2)
    v = ep.init_v_spread * rng.uniform(-1.0, 1.0, 2)
    return State(q=q, v=v)


def _default_plant(p: ModelParams, ep: EpisodeConfig):
    phys = np.asarray(p.coeffs())
    nsub = ep.substeps
    dt = ep.plant_dt

    def advance(x, u):
        q1, q2, v1, v2, ok = _k._advance(_k.RK4, x[0], x[1], x[2], x[3],
                                         u[0], u[1], dt, nsub, phys, 1, 0.0)
        if not ok or not (math.isfinite(q1) and math.isfinite(v1)
                          and math.isfinite(q2) and math.isfinite(v2)):
            raise IntegratorError("plant integration produced a non-finite state")
        return np.array([q1, q2, v1, v2])

    return advance


def run_episode(ctrl, ep: EpisodeConfig, p: ModelParams, goal: GoalSpec,
                plant=None) -> EpisodeMetrics:
    """Drive the plant with the controller for one episode.

    ``plant`` may override the default RK4 fine-step plant with any callable
    ``(state_array, torque) -> next_state_array`` covering one control period.
    """
    if plant is None:
        plant = _default_plant(p, ep)
    rng_dist = _episode_rng(ep.seed, _SALT_DISTURB)
    events = generate_disturbances(ep, rng_dist)
    next_event = 0

    n = ep.n_cycles
    cp = ep.control_period
    times = np.empty(n)
    states = np.empty((n, 4))
    torques = np.empty((n, 2))
    upright = np.zeros(n, dtype=bool)
    disturbed = np.zeros(n, dtype=bool)
    latencies = np.empty(n)

    x = initial_state(ep).as_array()
    done = 0
    aborted = False
    dist_log = []
    for j in range(n):
        t = j * cp
        s = State.from_array(x)
        tic = time.perf_counter()
        u_cmd = ctrl(t, s)
        lat = time.perf_counter() - tic
        u = apply_actuation(u_cmd, p)
        times[j] = t
        states[j] = x
        torques[j] = u
        upright[j] = is_upright(s, goal, p)
        latencies[j] = lat
        done = j + 1
        if ep.cycle_budget is not None and lat > ep.cycle_budget:
            aborted = True
            break
        x = plant(x, u)
        # events that land inside this control interval hit the next measurement
        while next_event < len(events) and events[next_event].time <= t + cp:
            e = events[next_event]
            pre = State.from_array(x)
            post = inject_disturbance(pre, e.kind, e.magnitude, rng_dist, p)
            x = post.as_array()
            dist_log.append((t + cp, e.kind, e.magnitude, mismatch_norm(post, pre)))
            if j + 1 < n:
                disturbed[j + 1] = True
            next_event += 1

    m = _score(ep, times[:done], states[:done], torques[:done], upright[:done],
               disturbed[:done], latencies[:done])
    m.detections = list(getattr(ctrl, "detections", ()))
    m.disturbance_log = dist_log
    m.aborted = aborted
    if aborted:
        raise ControllerTimeout(
            f"controller cycle exceeded the {ep.cycle_budget * 1e3:.3f} ms budget", m)
    return m


def _score(ep, times, states, torques, upright, disturbed, latencies):
    cp = ep.control_period
    uptime = float(np.sum(upright)) * cp
    need = max(1, math.ceil(ep.swingup_debounce / cp - 1e-9))
    swingups = 0
    consec = 0
    for flag in upright:
        if flag:
            consec += 1
            if consec == need:
                swingups += 1
        else:
            consec = 0
    return EpisodeMetrics(swingups=swingups, uptime=uptime, times=times, states=states,
                          torques=torques, upright=upright, disturbed=disturbed,
                          latencies=latencies)


@dataclass(frozen=True)
class ControllerSpec:
    """Picklable recipe for building a controller inside campaign workers."""

    name: str
    stepper: StepperKind = StepperKind.VARIATIONAL
    warm_start: WarmStartKind = WarmStartKind.NONE
    detection: bool = True
    threshold: float = 0.1
    energy_gain: float = 1.5
    pump_gain: float = 2.0


def build_controller(spec: ControllerSpec, cfg: MppiConfig, p: ModelParams,
                     goal: GoalSpec, ep: EpisodeConfig) -> SupervisedMppiController:
    monitor = DisturbanceMonitor(threshold=spec.threshold) if spec.detection else None
    policy = make_policy(spec.warm_start, spec.energy_gain, spec.pump_gain)
    return SupervisedMppiController(cfg, p, goal, control_period=ep.control_period,
                                    stepper=spec.stepper, seed=ep.seed,
                                    monitor=monitor, policy=policy)


@dataclass(frozen=True)
class CampaignRow:
    name: str
    swingups_mean: float
    swingups_std: float
    uptime_mean: float
    uptime_std: float
    n_seeds: int
    failures: int


@dataclass
class CampaignSummary:
    rows: list


def _run_one(spec, cfg, ep, p, goal):
    ctrl = build_controller(spec, cfg, p, goal, ep)
    try:
        return run_episode(ctrl, ep, p, goal)
    except ControllerTimeout as exc:
        m = exc.metrics
        m.failed = True
        return m
    except (IntegratorError, DegenerateWeights):
        return empty_metrics(failed=True)


def _campaign_job(args):
    spec, cfg, ep, p, goal = args
    return spec.name, ep.seed, _run_one(spec, cfg, ep, p, goal)


def run_campaign(specs, cfg: MppiConfig, ep: EpisodeConfig, p: ModelParams,
                 goal: GoalSpec, n_seeds: int, workers: int = 1):
    """Evaluate every controller on the identical seed set (paired design).

    Returns (summary, episodes) where episodes maps (name, seed) to that
    run's EpisodeMetrics.  Failed episodes score zero and are flagged.
    Results are independent of ``workers``.
    """
    if n_seeds < 2:
        raise ValueError("a campaign needs at least 2 seeds")
    names = [s.name for s in specs]
    if len(set(names)) != len(names):
        raise ValueError("controller names must be unique")
    seeds = [ep.seed + i for i in range(n_seeds)]
    jobs = [(spec, cfg, replace(ep, seed=seed), p, goal)
            for spec in specs for seed in seeds]
    episodes = {}
    if workers > 1:
        import multiprocessing as mp
        from concurrent.futures import ProcessPoolExecutor
        # spawn: numba's threading backend is not fork-safe once warmed up
        with ProcessPoolExecutor(max_workers=workers,
                                 mp_context=mp.get_context("spawn")) as pool:
            for name, seed, metrics in pool.map(_campaign_job, jobs):
                episodes[(name, seed)] = metrics
    else:
        for job in jobs:
            name, seed, metrics = _campaign_job(job)
            episodes[(name, seed)] = metrics

    rows = []
    for spec in specs:
        ms = [episodes[(spec.name, seed)] for seed in seeds]
        up = np.array([m.uptime for m in ms])
        sw = np.array([float(m.swingups) for m in ms])
        rows.append(CampaignRow(
            name=spec.name,
            swingups_mean=float(np.mean(sw)), swingups_std=float(np.std(sw, ddof=1)),
            uptime_mean=float(np.mean(up)), uptime_std=float(np.std(up, ddof=1)),
            n_seeds=n_seeds, failures=sum(m.failed for m in ms)))
    rows.sort(key=lambda r: (-r.uptime_mean, r.name))
    return CampaignSummary(rows=rows), episodes


def ablation_suite(cfg: MppiConfig, ep: EpisodeConfig, p: ModelParams, goal: GoalSpec,
                   n_seeds: int = 20, workers: int = 1):
    """Same optimizer and seeds across the four rollout integrators.

    Plain optimizer variants: no monitor or warm start, so the comparison
    isolates the rollout integrator.
    """
    specs = [ControllerSpec(name=f"mppi-{kind.value}", stepper=kind, detection=False)
             for kind in (StepperKind.VARIATIONAL, StepperKind.EXPLICIT_EULER,
                          StepperKind.IMPLICIT_MIDPOINT, StepperKind.SEMI_IMPLICIT)]
    return run_campaign(specs, cfg, ep, p, goal, n_seeds, workers=workers)


def measure_control_latency(cfg: MppiConfig, p: ModelParams, goal: GoalSpec,
                            stepper: StepperKind = StepperKind.VARIATIONAL,
                            seed: int = 0, n_cycles: int = 200,
                            control_period: float = 0.002):
    """Closed-loop wall-clock latency of the optimizer cycle.

    Runs the controller against the fine-step plant at the given cadence and
    times each call (after one untimed warmup cycle for JIT/caches).
    """
    ep = EpisodeConfig(duration=n_cycles * control_period,
                       control_period=control_period, seed=seed)
    ctrl = SupervisedMppiController(cfg, p, goal, control_period=control_period,
                                    stepper=stepper, seed=seed, monitor=None)
    warm = SupervisedMppiController(cfg, p, goal, control_period=control_period,
                                    stepper=stepper, seed=seed, monitor=None)
    warm(0.0, initial_state(ep))
    m = run_episode(ctrl, ep, p, goal)
    lat = m.latencies
    return {
        "n": int(lat.size),
        "mean": float(np.mean(lat)),
        "p50": float(np.percentile(lat, 50)),
        "p90": float(np.percentile(lat, 90)),
        "max": float(np.max(lat)),
        "latencies": lat,
    }


# ---------------------------------------------------------------- CSV output

EPISODE_COLUMNS = ("t", "q1", "q2", "v1", "v2", "u1", "u2", "upright", "disturbed")


def _fmt(x):
    return repr(float(x))


def write_episode_csv(path, m: EpisodeMetrics):
    lines = [",".join(EPISODE_COLUMNS)]
    for i in range(m.times.size):
        row = [_fmt(m.times[i])]
        row += [_fmt(v) for v in m.states[i]]
        row += [_fmt(v) for v in m.torques[i]]
        row.append(str(int(m.upright[i])))
        row.append(str(int(m.disturbed[i])))
        lines.append(",".join(row))
    with open(path, "w", newline="\n") as f:
        f.write("\n".join(lines) + "\n")


def write_campaign_csv(path, summary: CampaignSummary):
    lines = ["controller,swingups_mean,swingups_std,uptime_mean,uptime_std,n_seeds,failures"]
    for r in summary.rows:
        lines.append(",".join([r.name, _fmt(r.swingups_mean), _fmt(r.swingups_std),
                               _fmt(r.uptime_mean), _fmt(r.uptime_std),
                               str(r.n_seeds), str(r.failures)]))
    with open(path, "w", newline="\n") as f:
        f.write("\n".join(lines) + "\n")


def format_campaign_table(summary: CampaignSummary) -> str:
    header = ("controller", "swingups", "uptime [s]", "seeds", "failures")
    body = [(r.name,
             f"{r.swingups_mean:.2f} +- {r.swingups_std:.2f}",
             f"{r.uptime_mean:.2f} +- {r.uptime_std:.2f}",
             str(r.n_seeds), str(r.failures)) for r in summary.rows]
    widths = [max(len(header[j]), *(len(row[j]) for row in body)) if body else len(header[j])
              for j in range(len(header))]
    def line(cells):
        return "  ".join(c.ljust(widths[j]) for j, c in enumerate(cells)).rstrip()
    out = [line(header), line(tuple("-" * w for w in widths))]
    out += [line(row) for row in body]
    return "\n".join(out) + "\n"
