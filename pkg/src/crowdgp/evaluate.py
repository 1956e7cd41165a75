"""Displacement-error metrics and the rotating-robot benchmark.

The benchmark picks the busiest evaluation windows of a scene, treats
each eligible pedestrian in a window as the robot (goal known, taken
from its full trajectory), predicts jointly with everyone else, and
scores the robot's predicted path against ground truth with average and
final displacement error. Errors are averaged over robots within a
window, then over windows.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .data import Scene, label_goal
from .errors import ValidationError
from .model import GoalModel
from .predict import map_trajectory, multi_step, request_from_scene, _agent_key

logger = logging.getLogger(__name__)


def ade(pred, truth, squared: bool = False) -> float:
    """Mean displacement between two equal-length trajectories.

    Euclidean distance per step by default; ``squared`` switches to the
    mean squared distance.
    """
    pred = np.asarray(pred, dtype=float).reshape(-1, 2)
    truth = np.asarray(truth, dtype=float).reshape(-1, 2)
    if pred.shape[0] != truth.shape[0]:
        raise ValidationError(
            f"trajectory length mismatch: {pred.shape[0]} vs {truth.shape[0]}"
        )
    if pred.shape[0] < 1:
        raise ValidationError("cannot score empty trajectories")
    dists = np.linalg.norm(pred - truth, axis=1)
    if squared:
        return float(np.mean(dists**2))
    return float(np.mean(dists))


def fde(pred, truth, horizon: int, squared: bool = False) -> float:
    """Displacement at the final compared step.

    The compared step is ``horizon`` steps ahead, truncated when the
    true path ends earlier.
    """
    pred = np.asarray(pred, dtype=float).reshape(-1, 2)
    truth = np.asarray(truth, dtype=float).reshape(-1, 2)
    if pred.shape[0] < 1 or truth.shape[0] < 1:
        raise ValidationError("cannot score empty trajectories")
    last = min(horizon, truth.shape[0])
    if pred.shape[0] < last:
        raise ValidationError(
            f"prediction has {pred.shape[0]} steps, need {last} for the final error"
        )
    d = float(np.linalg.norm(pred[last - 1] - truth[last - 1]))
    return d * d if squared else d


def constant_velocity_baseline(history, horizon: int, dt: float) -> np.ndarray:
    """Extrapolate the mean velocity of the last (up to) five steps.

    Returns ``horizon`` positions continuing from the final observed
    position.
    """
    history = np.asarray(history, dtype=float).reshape(-1, 2)
    if history.shape[0] < 2:
        raise ValidationError(
            f"need at least 2 positions for the baseline, got {history.shape[0]}"
        )
    if not dt > 0:
        raise ValidationError(f"dt must be > 0, got {dt}")
    velocities = np.diff(history, axis=0) / dt
    v_bar = velocities[-min(5, velocities.shape[0]) :].mean(axis=0)
    steps = np.arange(1, horizon + 1)[:, None]
    return history[-1] + steps * (v_bar * dt)


@dataclass(frozen=True)
class BenchmarkConfig:
    """Benchmark protocol parameters."""

    horizons: tuple[int, ...] = (1, 2, 5, 10, 20)
    samples: int = 100
    obs_steps: int = 8  # observed history length per window
    n_windows: int = 5
    min_agents: int = 2
    mode: str = "map"
    squared: bool = False
    seed: int = 0
    threads: int = 1
    window_separation: int | None = None  # default: max horizon

    def __post_init__(self):
        if not self.horizons or any(h < 1 for h in self.horizons):
            raise ValidationError("horizons must be >= 1")
        if self.obs_steps < 2:
            raise ValidationError("need at least 2 observed steps")
        object.__setattr__(self, "horizons", tuple(int(h) for h in self.horizons))


@dataclass(frozen=True)
class ReportRow:
    metric: str  # "ade" | "fde"
    horizon: int
    method: str
    value: float


@dataclass(frozen=True)
class BenchmarkReport:
    """Aggregated errors plus plot-ready per-step curves."""

    rows: tuple[ReportRow, ...]
    per_step: tuple[tuple[str, int, float], ...]  # (method, step, mean error)
    metadata: dict

    def value(self, metric: str, horizon: int, method: str) -> float:
        for row in self.rows:
            if row.metric == metric and row.horizon == horizon and row.method == method:
                return row.value
        raise KeyError(f"no row for {metric}/{horizon}/{method}")

    def to_csv(self) -> str:
        lines = ["metric,horizon,method,value"]
        for row in self.rows:
            lines.append(f"{row.metric},{row.horizon},{row.method},{repr(row.value)}")
        return "\n".join(lines) + "\n"

    def per_step_csv(self) -> str:
        lines = ["method,step,mean_error"]
        for method, step, value in self.per_step:
            lines.append(f"{method},{step},{repr(value)}")
        return "\n".join(lines) + "\n"

    def table(self) -> str:
        methods = sorted({row.method for row in self.rows})
        horizons = sorted({row.horizon for row in self.rows})
        width = max(12, max(len(m) for m in methods) + 2)
        header = f"{'metric':<8}{'H':>4}" + "".join(f"{m:>{width}}" for m in methods)
        lines = [header, "-" * len(header)]
        for metric in ("ade", "fde"):
            for h in horizons:
                cells = "".join(
                    f"{self.value(metric, h, m):>{width}.3f}" for m in methods
                )
                lines.append(f"{metric:<8}{h:>4}" + cells)
        return "\n".join(lines)


def eligible_robots(scene: Scene, split: int, obs_steps: int) -> list[str]:
    """Agents observable and predictable at a split step.

    Eligible agents have a position at the split, at least two observed
    positions inside the observation window, and at least one step of
    ground truth after the split.
    """
    out = []
    for traj in scene.trajectories:
        if not traj.has_step(split) or not traj.has_step(split + 1):
            continue
        window_start = max(traj.start_step, split - obs_steps + 1)
        if split - window_start + 1 >= 2:
            out.append(traj.agent_id)
    return sorted(out)


def select_windows(scene: Scene, cfg: BenchmarkConfig) -> list[int]:
    """Pick the ``n_windows`` busiest split steps, kept apart in time."""
    if not scene.trajectories:
        return []
    separation = (
        cfg.window_separation
        if cfg.window_separation is not None
        else max(cfg.horizons)
    )
    counts = []
    for split in range(scene.trajectories[0].start_step, scene.last_step):
        n = len(eligible_robots(scene, split, cfg.obs_steps))
        if n >= cfg.min_agents:
            counts.append((n, split))
    counts.sort(key=lambda c: (-c[0], c[1]))
    chosen: list[int] = []
    for _, split in counts:
        if len(chosen) >= cfg.n_windows:
            break
        if all(abs(split - c) >= separation for c in chosen):
            chosen.append(split)
    return sorted(chosen)


def _derived_seed(seed: int, split: int, robot_id: str) -> int:
    seq = np.random.SeedSequence([int(seed), int(split), _agent_key(robot_id)])
    return int(seq.generate_state(1, np.uint64)[0])


def make_gp_method(model: GoalModel, cfg: BenchmarkConfig):
    """Built-in method: joint GP rollout with the robot's goal known."""

    def method(scene: Scene, split: int, robot_id: str, horizon: int) -> np.ndarray:
        true_goal = label_goal(scene.agent(robot_id), model.goals)
        request = request_from_scene(
            scene,
            split,
            horizon,
            cfg.samples,
            mode=cfg.mode,
            known_goals={robot_id: true_goal},
            seed=_derived_seed(cfg.seed, split, robot_id),
            obs_window=cfg.obs_steps,
        )
        fan = multi_step(request, model)
        return map_trajectory(fan)[robot_id]

    return method


def make_const_vel_method(cfg: BenchmarkConfig):
    """Built-in method: constant-velocity extrapolation of the robot."""

    def method(scene: Scene, split: int, robot_id: str, horizon: int) -> np.ndarray:
        traj = scene.agent(robot_id)
        window_start = max(traj.start_step, split - cfg.obs_steps + 1)
        history = traj.positions[
            window_start - traj.start_step : split - traj.start_step + 1
        ]
        return constant_velocity_baseline(history, horizon, scene.timestep_duration)

    return method


def run_benchmark(
    scene: Scene, model: GoalModel | None, cfg: BenchmarkConfig, methods=None
) -> BenchmarkReport:
    """Score prediction methods across windows, robots, and horizons.

    ``methods`` maps a name to a callable
    ``(scene, split, robot_id, horizon) -> (<= horizon, 2) array``;
    each is invoked once per (window, robot) at the largest horizon and
    shorter horizons reuse prefixes, which is exact for the built-in
    sampler (prefix-consistent streams). The scene should be disjoint
    from the training data; that is the caller's responsibility and is
    recorded in the report metadata.
    """
    if methods is None:
        if model is None:
            raise ValidationError("run_benchmark needs a model or explicit methods")
        methods = {
            "gp": make_gp_method(model, cfg),
            "const_vel": make_const_vel_method(cfg),
        }

    windows = select_windows(scene, cfg)
    used_windows = []
    for split in windows:
        robots = eligible_robots(scene, split, cfg.obs_steps)
        if len(robots) < cfg.min_agents:
            logger.warning("window at step %d has %d agents; skipped", split, len(robots))
            continue
        used_windows.append((split, robots))
    if not used_windows:
        raise ValidationError("no evaluation windows with enough agents")

    h_max = max(cfg.horizons)
    cells = [
        (split, robot, name)
        for split, robots in used_windows
        for robot in robots
        for name in methods
    ]

    def run_cell(cell):
        split, robot, name = cell
        pred = np.asarray(methods[name](scene, split, robot, h_max), dtype=float)
        traj = scene.agent(robot)
        avail = traj.last_step - split
        truth = traj.positions[
            split + 1 - traj.start_step : split + 1 + min(h_max, avail) - traj.start_step
        ]
        return cell, pred, truth

    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            results = list(pool.map(run_cell, cells))
    else:
        results = [run_cell(cell) for cell in cells]
    by_cell = {cell: (pred, truth) for cell, pred, truth in results}

    rows = []
    for metric in ("ade", "fde"):
        for h in cfg.horizons:
            for name in sorted(methods):
                window_means = []
                for split, robots in used_windows:
                    errors = []
                    for robot in robots:
                        pred, truth = by_cell[(split, robot, name)]
                        compare = min(h, truth.shape[0])
                        if metric == "ade":
                            errors.append(
                                ade(pred[:compare], truth[:compare], cfg.squared)
                            )
                        else:
                            errors.append(fde(pred, truth, h, cfg.squared))
                    window_means.append(float(np.mean(errors)))
                rows.append(ReportRow(metric, h, name, float(np.mean(window_means))))

    per_step = []
    for name in sorted(methods):
        for step in range(1, h_max + 1):
            dists = []
            for split, robots in used_windows:
                for robot in robots:
                    pred, truth = by_cell[(split, robot, name)]
                    if truth.shape[0] >= step:
                        dists.append(float(np.linalg.norm(pred[step - 1] - truth[step - 1])))
            if dists:
                per_step.append((name, step, float(np.mean(dists))))

    metadata = {
        "windows": [split for split, _ in used_windows],
        "robots_per_window": [len(robots) for _, robots in used_windows],
        "seed": cfg.seed,
        "mode": cfg.mode,
        "squared": cfg.squared,
        "samples": cfg.samples,
        "obs_steps": cfg.obs_steps,
        "training_disjoint": "caller-asserted",
    }
    return BenchmarkReport(tuple(rows), tuple(per_step), metadata)
