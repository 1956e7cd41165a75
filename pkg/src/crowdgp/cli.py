"""Command-line interface: train, infer-goals, predict, benchmark, synth, inspect-model.

All randomness flows from --seed (default 0). Commands exit 0 on
success and 1 on any validation, parse, or numerical error.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys

import numpy as np

from .data import (
    GoalSet,
    SynthConfig,
    build_training_set,
    default_goal_fan,
    load_goals,
    load_scene,
    save_goals,
    save_scene,
    synth_scene,
)
from .errors import CrowdGpError, ValidationError
from .evaluate import BenchmarkConfig, run_benchmark
from .goals import infer_scene_goals
from .gp import GpFitConfig
from .grid import GridConfig
from .model import load_model, save_model, train_goal_models
from .predict import map_trajectory, multi_step, request_from_scene

DEFAULT_SEED = 0


def _existing_file(path: str) -> str:
    if not os.path.isfile(path):
        raise argparse.ArgumentTypeError(f"no such file: {path}")
    return path


def _horizon_list(text: str) -> tuple[int, ...]:
    try:
        horizons = tuple(int(tok) for tok in text.split(",") if tok.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad horizon list {text!r}")
    if not horizons:
        raise argparse.ArgumentTypeError("empty horizon list")
    return horizons


def _goal_list(text: str) -> GoalSet:
    points = []
    for chunk in text.split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        parts = chunk.split(",")
        if len(parts) != 2:
            raise argparse.ArgumentTypeError(f"bad goal {chunk!r}; expected x,y")
        points.append((float(parts[0]), float(parts[1])))
    if not points:
        raise argparse.ArgumentTypeError("empty goal list")
    return GoalSet(np.array(points))


def _write_text(path: str, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def cmd_train(args) -> int:
    scene = load_scene(args.scene, args.dt)
    goals = load_goals(args.goals)
    grid_cfg = GridConfig(args.grid_m, args.grid_span)
    training = build_training_set(scene, goals, grid_cfg)
    fit_cfg = GpFitConfig(
        max_iters=args.max_iters,
        tol=args.tol,
        restarts=args.restarts,
        subsample_cap=args.subsample_cap,
        seed=args.seed,
    )
    model, stats = train_goal_models(
        training, goals, fit_cfg, scene.timestep_duration, threads=args.threads
    )
    save_model(model, args.out)
    for stat in stats:
        print(
            f"goal {stat.goal} axis {stat.axis}: n={stat.n_pairs} "
            f"log_evidence={stat.log_evidence:.4f}"
        )
    print(f"wrote {2 * model.n_goals} hyperparameter records to {args.out}")
    return 0


def cmd_infer_goals(args) -> int:
    model = load_model(args.model)
    scene = load_scene(args.scene, model.timestep_duration)
    posteriors = infer_scene_goals(scene, model, args.upto_step)
    lines = ["agent_id," + ",".join(f"goal_{g}" for g in range(model.n_goals))]
    for agent_id in sorted(posteriors):
        probs = posteriors[agent_id].probabilities
        lines.append(agent_id + "," + ",".join(repr(float(p)) for p in probs))
    text = "\n".join(lines) + "\n"
    if args.out:
        _write_text(args.out, text)
        print(f"wrote goal posteriors for {len(posteriors)} agents to {args.out}")
    else:
        sys.stdout.write(text)
    return 0


def cmd_predict(args) -> int:
    model = load_model(args.model)
    scene = load_scene(args.scene, model.timestep_duration)
    request = request_from_scene(
        scene,
        args.at_step,
        args.horizon,
        args.samples,
        mode=args.mode,
        seed=args.seed,
        obs_window=args.obs_window,
    )
    fan = multi_step(request, model)

    os.makedirs(args.out_dir, exist_ok=True)
    fan_path = os.path.join(args.out_dir, "fan.csv")
    with open(fan_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "sample", "agent_id", "x", "y"])
        for k in range(fan.horizon):
            step = fan.start_step + 1 + k
            for j in range(fan.n_samples):
                for i, agent_id in enumerate(fan.agent_ids):
                    x, y = fan.positions[k, j, i]
                    writer.writerow([step, j, agent_id, repr(float(x)), repr(float(y))])

    summary_path = os.path.join(args.out_dir, "summary.csv")
    means = fan.positions.mean(axis=1)
    variances = fan.positions.var(axis=1)
    with open(summary_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "agent_id", "mean_x", "mean_y", "var_x", "var_y"])
        for k in range(fan.horizon):
            step = fan.start_step + 1 + k
            for i, agent_id in enumerate(fan.agent_ids):
                writer.writerow(
                    [
                        step,
                        agent_id,
                        repr(float(means[k, i, 0])),
                        repr(float(means[k, i, 1])),
                        repr(float(variances[k, i, 0])),
                        repr(float(variances[k, i, 1])),
                    ]
                )
    print(f"wrote {fan_path} and {summary_path}")
    if fan.degenerate:
        print("zero-velocity agents (too little history): " + ",".join(sorted(fan.degenerate)))
    return 0


def cmd_benchmark(args) -> int:
    model = load_model(args.model)
    scene = load_scene(args.scene, model.timestep_duration)
    cfg = BenchmarkConfig(
        horizons=args.horizons,
        samples=args.samples,
        obs_steps=args.obs_steps,
        n_windows=args.windows,
        mode=args.mode,
        squared=args.squared,
        seed=args.seed,
        threads=args.threads,
    )
    report = run_benchmark(scene, model, cfg)
    print(report.table())
    print(f"windows at steps: {report.metadata['windows']}")
    if args.out:
        _write_text(args.out, report.to_csv())
        print(f"wrote report to {args.out}")
    if args.curves:
        _write_text(args.curves, report.per_step_csv())
        print(f"wrote per-step curves to {args.curves}")
    return 0


def _load_synth_config(path) -> dict:
    values = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValidationError(f"{path}:{line_no}: expected key=value, got {line!r}")
            key, _, value = line.partition("=")
            values[key.strip()] = value.strip()
    return values


def cmd_synth(args) -> int:
    overrides = _load_synth_config(args.config) if args.config else {}

    def pick(name, flag_value, parse, default):
        if flag_value is not None:
            return flag_value
        if name in overrides:
            return parse(overrides[name])
        return default

    goals = pick("goals", args.goals, _goal_list, None)
    if goals is None:
        goals = default_goal_fan()
    cfg = SynthConfig(
        n_agents=args.agents,
        n_steps=args.steps,
        goals=goals,
        speed=pick("speed", args.speed, float, 15.0),
        repulsion=pick("repulsion", args.repulsion, float, 30.0),
        dt=pick("dt", args.dt, float, 0.4),
        noise=pick("noise", args.noise, float, 0.5),
    )
    scene = synth_scene(cfg, args.seed)
    save_scene(scene, args.out)
    print(f"wrote {len(scene)} agents x {cfg.n_steps} steps to {args.out}")
    if args.goals_out:
        save_goals(goals, args.goals_out)
        print(f"wrote {len(goals)} goals to {args.goals_out}")
    return 0


def cmd_inspect_model(args) -> int:
    model = load_model(args.model)
    m = model.grid_cfg.m
    print(
        f"grid {m}x{m}, span {model.grid_cfg.span}, "
        f"{model.n_goals} goals, timestep {model.timestep_duration}s, seed {model.seed}"
    )
    print(f"lengthscales above {args.threshold} are flagged * (low-relevance cells)\n")
    for g in range(model.n_goals):
        gx, gy = model.goals.positions[g]
        for axis, hp in zip(("x", "y"), model.pair(g)):
            sf = np.exp(hp.log_signal)
            sn = np.exp(hp.log_noise)
            print(
                f"goal {g} ({gx:g}, {gy:g}) axis {axis}: "
                f"signal_std={sf:.4g} noise_std={sn:.4g}"
            )
            ls = hp.lengthscales.reshape(m, m)  # [b - 1, a - 1]
            for b in range(m, 0, -1):
                cells = []
                for a in range(1, m + 1):
                    value = ls[b - 1, a - 1]
                    mark = "*" if value > args.threshold else " "
                    cells.append(f"{value:>10.4g}{mark}")
                print("    " + "".join(cells))
            print()
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="crowdgp",
        description=(
            "Goal-conditioned Gaussian-process crowd motion model: train on "
            "trajectory data, infer pedestrian goals, predict joint futures, "
            "and benchmark displacement errors."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--seed", type=int, default=DEFAULT_SEED, help="run seed (default 0)")
        p.add_argument("--threads", type=int, default=1, help="worker cap; never changes results")

    p = sub.add_parser("train", help="fit per-goal velocity GPs from a scene")
    p.add_argument("--scene", required=True, type=_existing_file)
    p.add_argument("--goals", required=True, type=_existing_file)
    p.add_argument("--out", required=True, help="model file to write")
    p.add_argument("--dt", type=float, default=0.4, help="timestep duration in seconds")
    p.add_argument("--grid-m", type=int, default=4, help="grid cells per side")
    p.add_argument("--grid-span", type=float, default=80.0, help="grid span in scene units")
    p.add_argument("--max-iters", type=int, default=200)
    p.add_argument("--restarts", type=int, default=3)
    p.add_argument("--tol", type=float, default=1e-5)
    p.add_argument("--subsample-cap", type=int, default=1000)
    add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer-goals", help="goal posterior per agent from partial history")
    p.add_argument("--model", required=True, type=_existing_file)
    p.add_argument("--scene", required=True, type=_existing_file)
    p.add_argument("--upto-step", type=int, default=None, help="use observations up to this step")
    p.add_argument("--out", default=None, help="CSV path (default: stdout)")
    add_common(p)
    p.set_defaults(func=cmd_infer_goals)

    p = sub.add_parser("predict", help="joint Monte Carlo prediction of all agents")
    p.add_argument("--model", required=True, type=_existing_file)
    p.add_argument("--scene", required=True, type=_existing_file)
    p.add_argument("--at-step", required=True, type=int, help="last observed step")
    p.add_argument("--horizon", type=int, default=20)
    p.add_argument("--samples", type=int, default=100)
    p.add_argument("--mode", choices=["map", "mixture"], default="map")
    p.add_argument("--obs-window", type=int, default=None, help="max history length used")
    p.add_argument("--out-dir", default=".", help="directory for fan.csv and summary.csv")
    add_common(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("benchmark", help="rotating-robot displacement-error benchmark")
    p.add_argument("--model", required=True, type=_existing_file)
    p.add_argument("--scene", required=True, type=_existing_file)
    p.add_argument("--horizons", type=_horizon_list, default=(1, 2, 5, 10, 20))
    p.add_argument("--samples", type=int, default=100)
    p.add_argument("--obs-steps", type=int, default=8)
    p.add_argument("--windows", type=int, default=5)
    p.add_argument("--mode", choices=["map", "mixture"], default="map")
    p.add_argument("--squared", action="store_true", help="mean squared instead of Euclidean")
    p.add_argument("--out", default=None, help="CSV report path")
    p.add_argument("--curves", default=None, help="per-step error curve CSV path")
    add_common(p)
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("synth", help="generate a synthetic scene")
    p.add_argument("--agents", required=True, type=int)
    p.add_argument("--steps", required=True, type=int)
    p.add_argument("--out", required=True, help="scene CSV to write")
    p.add_argument("--goals-out", default=None, help="goal CSV to write")
    p.add_argument("--goals", type=_goal_list, default=None, help='inline goals "x,y;x,y"')
    p.add_argument("--speed", type=float, default=None, help="units/second (default 15)")
    p.add_argument("--repulsion", type=float, default=None, help="pairwise gain (default 30)")
    p.add_argument("--dt", type=float, default=None, help="timestep seconds (default 0.4)")
    p.add_argument("--noise", type=float, default=None, help="velocity noise (default 0.5)")
    p.add_argument("--config", type=_existing_file, default=None, help="key=value overrides")
    add_common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("inspect-model", help="lengthscale relevance tables per goal and axis")
    p.add_argument("--model", required=True, type=_existing_file)
    p.add_argument("--threshold", type=float, default=7.0, help="flag lengthscales above this")
    add_common(p)
    p.set_defaults(func=cmd_inspect_model)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CrowdGpError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
