"""Command line entry point: single episodes, seeded campaigns and the
integrator ablation, all emitting CSV artifacts plus a resolved-config
snapshot that reproduces the run byte for byte."""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

from . import config as cfgmod
from .harness import (ControllerSpec, ablation_suite, build_controller,
                      build_controller as _build, format_campaign_table,
                      run_campaign, run_episode, write_campaign_csv,
                      write_episode_csv)

SNAPSHOT_NAME = "resolved_config.txt"

MODES = ("episode", "campaign", "ablation")
ROBOTS = ("pendubot", "acrobot")
STEPPERS = ("e", "i", "if", "vi")
WARM_STARTS = ("none", "energy")


class UsageError(Exception):
    pass


@dataclass
class RunSpec:
    """Validated invocation: what to run and which overrides to apply."""

    mode: str | None = None
    robot: str | None = None
    config_path: str | None = None
    out_dir: str = "out"
    seed: int | None = None
    n_seeds: int | None = None
    stepper: str | None = None
    warm_start: str | None = None
    overrides: list = field(default_factory=list)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _parse_set(item: str):
    if "=" not in item:
        raise UsageError(f"--set expects key=value, got {item!r}")
    key, value = (part.strip() for part in item.split("=", 1))
    try:
        cfgmod.check_key(key)
    except cfgmod.ConfigError as exc:
        raise UsageError(f"--set {item!r}: {exc}") from None
    return key, value


def parse_args(argv) -> RunSpec:
    parser = _Parser(prog="varmppi", add_help=True,
                     description="Sampling-based swing-up control benchmark "
                                 "for the pendubot/acrobot.")
    parser.add_argument("--mode", choices=MODES)
    parser.add_argument("--robot", choices=ROBOTS)
    parser.add_argument("--config", dest="config_path")
    parser.add_argument("--out", dest="out_dir", default="out")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--n-seeds", type=int, dest="n_seeds")
    parser.add_argument("--stepper", choices=STEPPERS)
    parser.add_argument("--warm-start", choices=WARM_STARTS, dest="warm_start")
    parser.add_argument("--set", action="append", default=[], dest="sets",
                        metavar="KEY=VALUE")
    ns = parser.parse_args(argv)
    overrides = [_parse_set(item) for item in ns.sets]
    if ns.seed is not None and ns.seed < 0:
        raise UsageError("--seed must be nonnegative")
    if ns.n_seeds is not None and ns.n_seeds < 2:
        raise UsageError("--n-seeds must be at least 2")
    return RunSpec(mode=ns.mode, robot=ns.robot, config_path=ns.config_path,
                   out_dir=ns.out_dir, seed=ns.seed, n_seeds=ns.n_seeds,
                   stepper=ns.stepper, warm_start=ns.warm_start,
                   overrides=overrides)


def _resolve(spec: RunSpec) -> dict:
    file_cfg = cfgmod.load_config_file(spec.config_path) if spec.config_path else None
    env = cfgmod.env_overrides(os.environ)
    flags = {}
    if spec.mode is not None:
        flags["run.mode"] = spec.mode
    if spec.robot is not None:
        flags["run.robot"] = spec.robot
    if spec.seed is not None:
        flags["run.seed"] = spec.seed
    if spec.n_seeds is not None:
        flags["run.n_seeds"] = spec.n_seeds
    if spec.stepper is not None:
        flags["integrator.stepper"] = spec.stepper
    if spec.warm_start is not None:
        flags["supervisor.warm_start"] = spec.warm_start
    return cfgmod.resolve(file_cfg=file_cfg, env=env,
                          sets=dict(spec.overrides), flags=flags)


def _controller_spec(cfg: dict) -> ControllerSpec:
    stepper = cfgmod.build_stepper(cfg)
    warm = cfgmod.build_warm_start(cfg)
    name = f"mppi-{stepper.value}"
    if warm.value != "none":
        name += f"-{warm.value}"
    return ControllerSpec(
        name=name, stepper=stepper, warm_start=warm,
        detection=cfgmod._bool(cfg, "supervisor.detection"),
        threshold=cfgmod._float(cfg, "supervisor.threshold"),
        energy_gain=cfgmod._float(cfg, "supervisor.energy_gain"),
        pump_gain=cfgmod._float(cfg, "supervisor.pump_gain"))


def execute(spec: RunSpec) -> int:
    cfg = _resolve(spec)
    mode = cfg["run.mode"]
    if mode not in MODES:
        raise cfgmod.ConfigError(f"run.mode must be one of {MODES}, got {mode!r}")
    params = cfgmod.build_model_params(cfg)
    goal = cfgmod.build_goal(cfg)
    mppi_cfg = cfgmod.build_mppi_config(cfg)
    ep = cfgmod.build_episode_config(cfg)
    ctrl_spec = _controller_spec(cfg)
    n_seeds = cfgmod._int(cfg, "run.n_seeds")
    workers = cfgmod._int(cfg, "harness.workers")

    out = Path(spec.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / SNAPSHOT_NAME).write_text(cfgmod.format_snapshot(cfg))

    if mode == "episode":
        ctrl = build_controller(ctrl_spec, mppi_cfg, params, goal, ep)
        metrics = run_episode(ctrl, ep, params, goal)
        write_episode_csv(out / "episode.csv", metrics)
        print(f"episode: swingups={metrics.swingups} uptime={metrics.uptime:.2f}s "
              f"-> {out / 'episode.csv'}")
        return 0

    if mode == "campaign":
        summary, episodes = run_campaign([ctrl_spec], mppi_cfg, ep, params, goal,
                                         n_seeds=n_seeds, workers=workers)
        for (name, seed), m in sorted(episodes.items()):
            write_episode_csv(out / f"episode_{name}_seed{seed}.csv", m)
        write_campaign_csv(out / "campaign_summary.csv", summary)
        table = format_campaign_table(summary)
        (out / "campaign_summary.txt").write_text(table)
        print(table, end="")
        return 0

    summary, episodes = ablation_suite(mppi_cfg, ep, params, goal,
                                       n_seeds=n_seeds, workers=workers)
    for (name, seed), m in sorted(episodes.items()):
        write_episode_csv(out / f"episode_{name}_seed{seed}.csv", m)
    write_campaign_csv(out / "ablation_summary.csv", summary)
    table = format_campaign_table(summary)
    (out / "ablation_summary.txt").write_text(table)
    print(table, end="")
    return 0


def main(argv=None) -> int:
    try:
        spec = parse_args(sys.argv[1:] if argv is None else argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    try:
        return execute(spec)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
