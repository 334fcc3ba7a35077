"""Flat key=value configuration: one file format for plant, optimizer,
supervisor and harness settings.

Dotted keys (``model.m1``, ``mppi.lambda``) live in a plain-text file, one
``key = value`` assignment per line, ``#`` starting a comment.  Values are
scalars or comma-separated float lists.  The same keys are accepted from
``--set`` overrides and from ``VARMPPI_``-prefixed environment variables
(``VARMPPI_MPPI__LAMBDA`` maps to ``mppi.lambda``).  Precedence:
defaults < file < environment < --set < dedicated flags.
"""

from __future__ import annotations

import numpy as np

from .harness import EpisodeConfig
from .integrators import StepperKind
from .model import ACROBOT_MASK, PENDUBOT_MASK, GoalSpec, ModelParams, State
from .mppi import MppiConfig
from .supervisor import WarmStartKind

ENV_PREFIX = "VARMPPI_"

DEFAULTS = {
    "run.mode": "episode",
    "run.robot": "pendubot",
    "run.seed": "0",
    "run.n_seeds": "20",
    "model.m1": "0.608",
    "model.m2": "0.630",
    "model.l1": "0.3",
    "model.l2": "0.4",
    "model.r1": "0.1",
    "model.r2": "0.12",
    "model.I1": "0.054",
    "model.I2": "0.02",
    "model.b1": "0.01",
    "model.b2": "0.01",
    "model.g": "9.81",
    "model.tau_max": "6.0",
    "goal.height_threshold": "0.9",
    "goal.velocity_threshold": "10.0",
    "mppi.horizon": "20",
    "mppi.samples": "4096",
    "mppi.lambda": "50.0",
    "mppi.alpha": "1.0",
    "mppi.sigma": "0.2",
    "mppi.q": "10.0,1.0,0.10,0.10",
    "mppi.r": "0.10,0.10",
    "mppi.p": "5e6,5e6,2e6,2e6",
    "mppi.rollout_dt": "0.02",
    "integrator.stepper": "vi",
    "integrator.newton_iters": "2",
    "integrator.newton_tol": "1e-9",
    "supervisor.detection": "true",
    "supervisor.threshold": "0.1",
    "supervisor.weights": "1.0,1.0,0.1,0.1",
    "supervisor.warm_start": "none",
    "supervisor.energy_gain": "1.5",
    "supervisor.pump_gain": "2.0",
    "harness.duration": "60.0",
    "harness.control_period": "0.002",
    "harness.plant_dt": "1e-4",
    "harness.disturbance_interval": "5.0",
    "harness.impulse_low": "0.05",
    "harness.impulse_high": "0.3",
    "harness.init_q_spread": "0.0",
    "harness.init_v_spread": "0.0",
    "harness.swingup_debounce": "0.1",
    "harness.workers": "1",
}

KNOWN_KEYS = frozenset(DEFAULTS)

# plant defaults per robot: the competition robots differ physically, and the
# acrobot needs a heavier distal link to be stabilizable through the elbow
# within the torque limit
ROBOT_DEFAULTS = {
    "pendubot": {},
    "acrobot": {"model.I2": "0.05"},
}

ROBOT_MASKS = {"pendubot": PENDUBOT_MASK, "acrobot": ACROBOT_MASK}


class ConfigError(ValueError):
    pass


def check_key(key: str):
    if key not in KNOWN_KEYS:
        raise ConfigError(f"unknown config key {key!r}")


def parse_config_text(text: str) -> dict:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        check_key(key)
        out[key] = value
    return out


def load_config_file(path) -> dict:
    with open(path, "r") as f:
        return parse_config_text(f.read())


def env_overrides(environ) -> dict:
    out = {}
    for name, value in environ.items():
        if not name.startswith(ENV_PREFIX):
            continue
        key = name[len(ENV_PREFIX):].lower().replace("__", ".")
        check_key(key)
        out[key] = value
    return out


def resolve(file_cfg=None, env=None, sets=None, flags=None) -> dict:
    """Merge the override layers on top of the defaults.

    The robot is resolved first so its plant defaults sit beneath every
    explicit layer (defaults < robot < file < env < --set < flags).
    """
    layers = [layer for layer in (file_cfg, env, sets, flags) if layer]
    for layer in layers:
        for key, value in layer.items():
            check_key(key)
    cfg = dict(DEFAULTS)
    for layer in layers:
        cfg.update({k: str(v) for k, v in layer.items()})
    robot = cfg["run.robot"].strip().lower()
    if robot not in ROBOT_DEFAULTS:
        raise ConfigError(f"run.robot must be one of {sorted(ROBOT_MASKS)}, got {robot!r}")
    cfg = dict(DEFAULTS)
    cfg.update(ROBOT_DEFAULTS[robot])
    for layer in layers:
        cfg.update({k: str(v) for k, v in layer.items()})
    return cfg


def format_snapshot(cfg: dict) -> str:
    return "\n".join(f"{k} = {cfg[k]}" for k in sorted(cfg)) + "\n"


def _floats(value, n, key):
    parts = [p for p in str(value).split(",") if p.strip()]
    try:
        vals = [float(p) for p in parts]
    except ValueError:
        raise ConfigError(f"{key}: expected comma-separated floats, got {value!r}") from None
    if len(vals) != n:
        raise ConfigError(f"{key}: expected {n} values, got {len(vals)}")
    return np.asarray(vals)


def _float(cfg, key):
    try:
        return float(cfg[key])
    except ValueError:
        raise ConfigError(f"{key}: expected a number, got {cfg[key]!r}") from None


def _int(cfg, key):
    try:
        return int(cfg[key])
    except ValueError:
        raise ConfigError(f"{key}: expected an integer, got {cfg[key]!r}") from None


def _bool(cfg, key):
    v = cfg[key].strip().lower()
    if v in ("true", "1", "yes", "on"):
        return True
    if v in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"{key}: expected a boolean, got {cfg[key]!r}")


def robot_mask(cfg):
    robot = cfg["run.robot"].strip().lower()
    if robot not in ROBOT_MASKS:
        raise ConfigError(f"run.robot must be one of {sorted(ROBOT_MASKS)}, got {robot!r}")
    return ROBOT_MASKS[robot]


def build_model_params(cfg: dict) -> ModelParams:
    return ModelParams(
        m1=_float(cfg, "model.m1"), m2=_float(cfg, "model.m2"),
        l1=_float(cfg, "model.l1"), l2=_float(cfg, "model.l2"),
        r1=_float(cfg, "model.r1"), r2=_float(cfg, "model.r2"),
        I1=_float(cfg, "model.I1"), I2=_float(cfg, "model.I2"),
        b1=_float(cfg, "model.b1"), b2=_float(cfg, "model.b2"),
        g=_float(cfg, "model.g"), tau_max=_float(cfg, "model.tau_max"),
        actuation_mask=robot_mask(cfg))


def build_goal(cfg: dict) -> GoalSpec:
    return GoalSpec(
        x_goal=State(q=np.array([np.pi, 0.0]), v=np.zeros(2)),
        upright_height_threshold=_float(cfg, "goal.height_threshold"),
        upright_velocity_threshold=_float(cfg, "goal.velocity_threshold"))


def build_mppi_config(cfg: dict) -> MppiConfig:
    sigma_raw = cfg["mppi.sigma"]
    n_sigma = len([p for p in sigma_raw.split(",") if p.strip()])
    if n_sigma == 1:
        sigma = _float(cfg, "mppi.sigma") * np.eye(2)
    elif n_sigma == 2:
        sigma = np.diag(_floats(sigma_raw, 2, "mppi.sigma"))
    else:
        sigma = _floats(sigma_raw, 4, "mppi.sigma").reshape(2, 2)
    return MppiConfig(
        horizon=_int(cfg, "mppi.horizon"), samples=_int(cfg, "mppi.samples"),
        lam=_float(cfg, "mppi.lambda"), alpha=_float(cfg, "mppi.alpha"),
        sigma=sigma,
        q_diag=_floats(cfg["mppi.q"], 4, "mppi.q"),
        r_diag=_floats(cfg["mppi.r"], 2, "mppi.r"),
        p_diag=_floats(cfg["mppi.p"], 4, "mppi.p"),
        rollout_dt=_float(cfg, "mppi.rollout_dt"),
        newton_iters=_int(cfg, "integrator.newton_iters"),
        newton_tol=_float(cfg, "integrator.newton_tol"))


def build_episode_config(cfg: dict, seed=None) -> EpisodeConfig:
    return EpisodeConfig(
        duration=_float(cfg, "harness.duration"),
        control_period=_float(cfg, "harness.control_period"),
        plant_dt=_float(cfg, "harness.plant_dt"),
        seed=_int(cfg, "run.seed") if seed is None else seed,
        disturbance_interval=_float(cfg, "harness.disturbance_interval"),
        impulse_low=_float(cfg, "harness.impulse_low"),
        impulse_high=_float(cfg, "harness.impulse_high"),
        init_q_spread=_float(cfg, "harness.init_q_spread"),
        init_v_spread=_float(cfg, "harness.init_v_spread"),
        swingup_debounce=_float(cfg, "harness.swingup_debounce"))


def build_stepper(cfg: dict) -> StepperKind:
    try:
        return StepperKind.from_name(cfg["integrator.stepper"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def build_warm_start(cfg: dict) -> WarmStartKind:
    try:
        return WarmStartKind.from_name(cfg["supervisor.warm_start"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
