"""Trajectory datasets: loading, preprocessing, and synthetic scenes.

A scene is a set of agent trajectories sharing one clock with a fixed
timestep duration. Preprocessing turns trajectories into forward
difference velocities paired with occupancy grids, labels each training
agent with the goal nearest its final position, and collects per-goal
bags of (grid, velocity) training pairs.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ParseError, ValidationError
from .grid import GridConfig, occupancy_grid

logger = logging.getLogger(__name__)

SCENE_HEADER = ("step", "agent_id", "x", "y")
GOALS_HEADER = ("x", "y")


@dataclass(frozen=True)
class Trajectory:
    """Positions of one agent at contiguous timesteps."""

    agent_id: str
    start_step: int
    positions: np.ndarray  # (length, 2) float64

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        if pos.ndim != 2 or pos.shape[1] != 2 or pos.shape[0] < 1:
            raise ValidationError(
                f"trajectory for agent {self.agent_id!r} must be a non-empty (n, 2) array"
            )
        if not np.all(np.isfinite(pos)):
            raise ValidationError(f"non-finite position for agent {self.agent_id!r}")
        object.__setattr__(self, "positions", pos)

    def __len__(self) -> int:
        return self.positions.shape[0]

    @property
    def last_step(self) -> int:
        return self.start_step + len(self) - 1

    def has_step(self, step: int) -> bool:
        return self.start_step <= step <= self.last_step

    def position_at(self, step: int) -> np.ndarray:
        if not self.has_step(step):
            raise KeyError(f"agent {self.agent_id!r} has no position at step {step}")
        return self.positions[step - self.start_step]


@dataclass(frozen=True)
class Scene:
    """A collection of trajectories on a shared clock."""

    trajectories: tuple[Trajectory, ...]
    timestep_duration: float = 0.4
    unit_name: str = "units"

    def __post_init__(self):
        object.__setattr__(self, "trajectories", tuple(self.trajectories))
        if not self.timestep_duration > 0:
            raise ValidationError(
                f"timestep duration must be > 0, got {self.timestep_duration}"
            )
        ids = [t.agent_id for t in self.trajectories]
        if len(set(ids)) != len(ids):
            dup = sorted({i for i in ids if ids.count(i) > 1})
            raise ValidationError(f"duplicate agent ids in scene: {dup}")

    def __len__(self) -> int:
        return len(self.trajectories)

    @property
    def agent_ids(self) -> list[str]:
        return [t.agent_id for t in self.trajectories]

    def agent(self, agent_id: str) -> Trajectory:
        for t in self.trajectories:
            if t.agent_id == agent_id:
                return t
        raise KeyError(f"no agent {agent_id!r} in scene")

    @property
    def last_step(self) -> int:
        if not self.trajectories:
            raise ValidationError("empty scene has no last step")
        return max(t.last_step for t in self.trajectories)


@dataclass(frozen=True)
class VelocitySeries:
    """Forward-difference velocities of one agent, in units/second."""

    agent_id: str
    velocities: np.ndarray  # (length - 1, 2)
    aligned_steps: np.ndarray  # (length - 1,) step index each velocity is anchored at


@dataclass(frozen=True)
class GoalSet:
    """Ordered goal positions; list order defines goal indices."""

    positions: np.ndarray  # (n_goals, 2)

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float).reshape(-1, 2)
        if pos.shape[0] < 1:
            raise ValidationError("goal set must contain at least one goal")
        if not np.all(np.isfinite(pos)):
            raise ValidationError("non-finite goal position")
        for i in range(pos.shape[0]):
            for j in range(i + 1, pos.shape[0]):
                if np.array_equal(pos[i], pos[j]):
                    raise ValidationError(f"goals {i} and {j} are identical")
        object.__setattr__(self, "positions", pos)

    def __len__(self) -> int:
        return self.positions.shape[0]


@dataclass(frozen=True)
class GoalBag:
    """Training pairs for one goal: shared grids with per-axis velocities."""

    grids: np.ndarray  # (n, m**2)
    vx: np.ndarray  # (n,)
    vy: np.ndarray  # (n,)

    def __len__(self) -> int:
        return self.grids.shape[0]


@dataclass(frozen=True)
class TrainingSet:
    """Per-goal bags of (occupancy grid, velocity) pairs."""

    bags: tuple[GoalBag, ...]
    grid_cfg: GridConfig

    def x_bag(self, goal: int) -> tuple[np.ndarray, np.ndarray]:
        bag = self.bags[goal]
        return bag.grids, bag.vx

    def y_bag(self, goal: int) -> tuple[np.ndarray, np.ndarray]:
        bag = self.bags[goal]
        return bag.grids, bag.vy

    @property
    def pair_counts(self) -> list[int]:
        return [len(b) for b in self.bags]


def load_scene(path, timestep_duration: float = 0.4, unit_name: str = "units") -> Scene:
    """Load a scene from a CSV file with header ``step,agent_id,x,y``.

    Rows may appear in any order; they are grouped per agent and sorted
    by step. Duplicate (step, agent) rows and gaps in an agent's step
    sequence are rejected.
    """
    rows: dict[str, dict[int, np.ndarray]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        for line_no, record in enumerate(reader, start=1):
            if not record or (len(record) == 1 and not record[0].strip()):
                continue
            if line_no == 1 and [c.strip().lower() for c in record] == list(SCENE_HEADER):
                continue
            if len(record) != 4:
                raise ParseError(f"expected 4 fields, got {len(record)}", line_no)
            try:
                step = int(record[0])
            except ValueError:
                raise ParseError(f"bad step {record[0]!r}", line_no) from None
            agent_id = record[1].strip()
            if not agent_id:
                raise ParseError("empty agent_id", line_no)
            try:
                x = float(record[2])
                y = float(record[3])
            except ValueError:
                raise ParseError(
                    f"bad coordinates {record[2]!r},{record[3]!r}", line_no
                ) from None
            if not (math.isfinite(x) and math.isfinite(y)):
                raise ParseError(f"non-finite coordinates for agent {agent_id}", line_no)
            per_agent = rows.setdefault(agent_id, {})
            if step in per_agent:
                raise ParseError(
                    f"duplicate row for agent {agent_id} at step {step}", line_no
                )
            per_agent[step] = np.array([x, y])

    trajectories = []
    for agent_id in sorted(rows):
        steps = sorted(rows[agent_id])
        if steps[-1] - steps[0] + 1 != len(steps):
            raise ValidationError(f"gap in steps for agent {agent_id}")
        positions = np.stack([rows[agent_id][s] for s in steps])
        trajectories.append(Trajectory(agent_id, steps[0], positions))
    return Scene(tuple(trajectories), timestep_duration, unit_name)


def save_scene(scene: Scene, path) -> None:
    """Write a scene as CSV, rows sorted by (step, agent_id)."""
    rows = []
    for traj in scene.trajectories:
        for offset, pos in enumerate(traj.positions):
            rows.append((traj.start_step + offset, traj.agent_id, pos[0], pos[1]))
    rows.sort(key=lambda r: (r[0], r[1]))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(SCENE_HEADER)
        for step, agent_id, x, y in rows:
            writer.writerow([step, agent_id, repr(float(x)), repr(float(y))])


def load_goals(path) -> GoalSet:
    """Load a goal set from a CSV file with header ``x,y``."""
    goals = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        for line_no, record in enumerate(reader, start=1):
            if not record or (len(record) == 1 and not record[0].strip()):
                continue
            if line_no == 1 and [c.strip().lower() for c in record] == list(GOALS_HEADER):
                continue
            if len(record) != 2:
                raise ParseError(f"expected 2 fields, got {len(record)}", line_no)
            try:
                goals.append((float(record[0]), float(record[1])))
            except ValueError:
                raise ParseError(f"bad goal row {record!r}", line_no) from None
    if not goals:
        raise ValidationError(f"goal file {path} contains no goals")
    return GoalSet(np.array(goals))


def save_goals(goals: GoalSet, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(GOALS_HEADER)
        for x, y in goals.positions:
            writer.writerow([repr(float(x)), repr(float(y))])


def compute_velocities(traj: Trajectory, dt: float) -> VelocitySeries:
    """Forward-difference velocities: v_t = (f_{t+1} - f_t) / dt.

    The velocity anchored at step t describes the move from t to t+1,
    so the series is one shorter than the trajectory.
    """
    if len(traj) < 2:
        raise ValidationError(
            f"trajectory too short for velocity (agent {traj.agent_id!r}, length {len(traj)})"
        )
    if not dt > 0:
        raise ValidationError(f"dt must be > 0, got {dt}")
    velocities = np.diff(traj.positions, axis=0) / dt
    steps = traj.start_step + np.arange(len(traj) - 1)
    return VelocitySeries(traj.agent_id, velocities, steps)


def label_goal(traj: Trajectory, goals: GoalSet) -> int:
    """Index of the goal nearest the final position; ties pick the lowest index."""
    final = traj.positions[-1]
    dists = np.linalg.norm(goals.positions - final, axis=1)
    return int(np.argmin(dists))


def positions_by_step(trajectories) -> dict[int, list[tuple[str, np.ndarray]]]:
    """Index positions by timestep: step -> [(agent_id, position), ...]."""
    table: dict[int, list[tuple[str, np.ndarray]]] = {}
    for traj in trajectories:
        for offset, pos in enumerate(traj.positions):
            table.setdefault(traj.start_step + offset, []).append((traj.agent_id, pos))
    return table


@dataclass(frozen=True)
class AgentFeatures:
    """Per-step occupancy grids and forward-difference velocities of one agent.

    ``grids`` has one row per observed step (length L); ``velocities``
    covers the first L - 1 steps. The final grid has no matching
    velocity and serves as the query point for the next prediction.
    """

    agent_id: str
    steps: np.ndarray  # (L,)
    grids: np.ndarray  # (L, m**2)
    velocities: np.ndarray  # (L - 1, 2)


def trajectory_features(trajectories, grid_cfg: GridConfig, dt: float) -> dict[str, AgentFeatures]:
    """Occupancy grids and velocities for every agent of a trajectory set.

    The grid of agent i at step t counts all other agents with a
    position at t, regardless of their own trajectory length.
    """
    trajectories = list(trajectories)
    by_step = positions_by_step(trajectories)
    out = {}
    for traj in trajectories:
        steps = traj.start_step + np.arange(len(traj))
        grids = np.empty((len(traj), grid_cfg.n_cells))
        for row, step in enumerate(steps):
            neighbors = [p for aid, p in by_step[step] if aid != traj.agent_id]
            grids[row] = occupancy_grid(traj.positions[row], neighbors, grid_cfg)
        if len(traj) >= 2:
            velocities = np.diff(traj.positions, axis=0) / dt
        else:
            velocities = np.zeros((0, 2))
        out[traj.agent_id] = AgentFeatures(traj.agent_id, steps, grids, velocities)
    return out


def build_training_set(scene: Scene, goals: GoalSet, grid_cfg: GridConfig) -> TrainingSet:
    """Collect per-goal training bags from a scene.

    Every agent with at least two positions contributes one
    (grid at t, velocity at t) pair per velocity step to the bag of the
    goal nearest its final position. Single-point agents contribute no
    pairs (but still appear in other agents' grids).
    """
    features = trajectory_features(scene.trajectories, grid_cfg, scene.timestep_duration)
    grids: list[list[np.ndarray]] = [[] for _ in range(len(goals))]
    vx: list[list[float]] = [[] for _ in range(len(goals))]
    vy: list[list[float]] = [[] for _ in range(len(goals))]
    for traj in scene.trajectories:
        if len(traj) < 2:
            logger.warning(
                "agent %s has a single observation; skipped for training", traj.agent_id
            )
            continue
        g = label_goal(traj, goals)
        feats = features[traj.agent_id]
        grids[g].extend(feats.grids[:-1])
        vx[g].extend(feats.velocities[:, 0])
        vy[g].extend(feats.velocities[:, 1])
    bags = []
    d = grid_cfg.n_cells
    for g in range(len(goals)):
        if grids[g]:
            bag = GoalBag(np.stack(grids[g]), np.array(vx[g]), np.array(vy[g]))
        else:
            bag = GoalBag(np.zeros((0, d)), np.zeros(0), np.zeros(0))
        bags.append(bag)
    return TrainingSet(tuple(bags), grid_cfg)


def default_goal_fan(radius: float = 100.0) -> GoalSet:
    """Four goals on a quarter arc (0, 30, 60, 90 degrees).

    The spread keeps per-axis speed signatures pairwise distinct, which
    is what the goal-likelihood scoring can actually separate; goals
    placed at mirror-opposite angles are not distinguishable from
    velocity history alone.
    """
    angles = np.deg2rad([0.0, 30.0, 60.0, 90.0])
    pts = radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    return GoalSet(pts)


@dataclass(frozen=True)
class SynthConfig:
    """Configuration of the synthetic scene generator.

    Agents head toward their assigned goal at constant speed, pushed by
    a pairwise repulsion that decays with distance, and freeze once
    within ``stop_radius`` of the goal. With explicit ``starts`` the
    generator is fully prescribed; otherwise agents spawn at the point
    reflection of their goal through ``spawn_center`` with seeded
    jitter, so crossing paths meet near the center and each goal keeps
    a distinct heading. (Avoid goal sets symmetric through the center:
    opposite headings produce velocity histories that goal scoring
    cannot tell apart.)
    """

    n_agents: int
    n_steps: int
    goals: GoalSet
    speed: float = 15.0
    repulsion: float = 0.0
    dt: float = 0.4
    noise: float = 0.0  # per-step velocity noise, units/second
    starts: np.ndarray | None = None  # (n_agents, 2)
    assignments: tuple[int, ...] | None = None
    stop_radius: float | None = None  # default: one step length (speed * dt)
    spawn_center: tuple[float, float] = (0.0, 0.0)
    spawn_spacing: float | None = None  # lateral gap between same-goal agents
    spawn_jitter: float | None = None  # default: scene scale / 10

    def __post_init__(self):
        if self.n_agents < 1:
            raise ValidationError(f"need at least 1 agent, got {self.n_agents}")
        if self.n_steps < 1:
            raise ValidationError(f"need at least 1 step, got {self.n_steps}")
        if not self.dt > 0:
            raise ValidationError(f"dt must be > 0, got {self.dt}")
        if self.speed < 0 or self.repulsion < 0 or self.noise < 0:
            raise ValidationError("speed, repulsion and noise must be >= 0")
        if self.starts is not None:
            starts = np.asarray(self.starts, dtype=float).reshape(-1, 2)
            if starts.shape[0] != self.n_agents:
                raise ValidationError(
                    f"starts has {starts.shape[0]} rows for {self.n_agents} agents"
                )
            object.__setattr__(self, "starts", starts)
        if self.assignments is not None:
            assignments = tuple(int(a) for a in self.assignments)
            if len(assignments) != self.n_agents:
                raise ValidationError("assignments length must equal agent count")
            if any(a < 0 or a >= len(self.goals) for a in assignments):
                raise ValidationError("assignment index out of goal range")
            object.__setattr__(self, "assignments", assignments)


def synth_scene(cfg: SynthConfig, seed: int) -> Scene:
    """Generate a deterministic synthetic scene.

    Agent k is named ``a{k}`` and starts at step 0 with a trajectory of
    exactly ``cfg.n_steps`` positions. Identical seed and config always
    produce a bitwise identical scene.
    """
    rng = np.random.default_rng(seed)
    goals = cfg.goals.positions
    n = cfg.n_agents

    if cfg.assignments is not None:
        assign = np.array(cfg.assignments)
    else:
        assign = np.arange(n) % len(goals)

    scale = float(np.max(np.linalg.norm(goals - goals.mean(axis=0), axis=1)))
    scale = max(scale, cfg.speed * cfg.dt, 1.0)
    if cfg.starts is not None:
        pos = cfg.starts.copy()
    else:
        jitter = cfg.spawn_jitter if cfg.spawn_jitter is not None else scale / 10.0
        spacing = cfg.spawn_spacing if cfg.spawn_spacing is not None else scale / 8.0
        center = np.asarray(cfg.spawn_center, dtype=float)
        group_size = np.bincount(assign, minlength=len(goals))
        # Same-goal agents line up abreast (perpendicular to their
        # heading) so spawn-time repulsion does not scatter headings.
        seen = np.zeros(len(goals), dtype=int)
        pos = np.empty((n, 2))
        for k in range(n):
            g = assign[k]
            d = goals[g] - center
            length = np.linalg.norm(d)
            direction = d / length if length > 0 else np.array([1.0, 0.0])
            perp = np.array([-direction[1], direction[0]])
            lateral = (seen[g] - (group_size[g] - 1) / 2.0) * spacing
            seen[g] += 1
            pos[k] = 2.0 * center - goals[g] + lateral * perp
        pos += rng.uniform(-jitter, jitter, size=(n, 2))

    stop_radius = cfg.stop_radius if cfg.stop_radius is not None else cfg.speed * cfg.dt

    history = [pos.copy()]
    arrived = np.linalg.norm(goals[assign] - pos, axis=1) <= stop_radius
    for _ in range(cfg.n_steps - 1):
        to_goal = goals[assign] - pos
        dist = np.linalg.norm(to_goal, axis=1)
        arrived = arrived | (dist <= stop_radius)
        moving = ~arrived

        step_vec = np.zeros_like(pos)
        safe = np.maximum(dist, 1e-12)
        # Advance capped at the remaining distance so agents land on the
        # goal instead of oscillating across it.
        reach = np.minimum(cfg.speed * cfg.dt, dist)
        step_vec[moving] = (to_goal[moving] / safe[moving, None]) * reach[moving, None]

        if cfg.repulsion > 0 and n > 1:
            rel = pos[:, None, :] - pos[None, :, :]  # rel[i, j] = p_i - p_j
            r2 = np.sum(rel * rel, axis=2)
            weight = cfg.repulsion / (r2 + 1.0)
            np.fill_diagonal(weight, 0.0)
            push = np.sum(weight[:, :, None] * rel, axis=1)
            # Bounded so a near-overlap cannot fling agents to infinity.
            mag = np.linalg.norm(push, axis=1)
            cap = 2.0 * max(cfg.speed, 1.0)
            too_big = mag > cap
            push[too_big] *= (cap / mag[too_big])[:, None]
            step_vec[moving] += push[moving] * cfg.dt

        if cfg.noise > 0:
            step_vec[moving] += rng.normal(0.0, cfg.noise * cfg.dt, size=(moving.sum(), 2))

        pos = pos + step_vec
        history.append(pos.copy())

    stacked = np.stack(history)  # (n_steps, n, 2)
    trajectories = tuple(
        Trajectory(f"a{k}", 0, stacked[:, k, :].copy()) for k in range(n)
    )
    return Scene(trajectories, cfg.dt)
