"""Joint multi-step trajectory prediction by Monte Carlo sampling.

Every agent gets a pair of GPs conditioned on its own (grid, velocity)
history with the hyperparameters of its chosen goal. Rollout then
alternates between sampling velocities for all agents, advancing the
sampled joint positions, rebuilding occupancy grids per sample, and
collapsing the grid samples to their per-cell mean before the next
prediction step. The collapse keeps a single predictive distribution
per agent per step at the cost of inter-sample grid correlation.

All randomness is drawn from counter-based substreams keyed by
(seed, purpose, step, agent, axis), so results are bitwise reproducible
and independent of agent enumeration order or worker count.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from types import MappingProxyType

import numpy as np

from .data import Scene, Trajectory, trajectory_features
from .errors import ValidationError
from .goals import GoalPosterior, infer_goal_posterior, _checked_prior
from .gp import TrainedGp, condition, predict as gp_predict
from .grid import cell_coords
from .model import GoalModel

logger = logging.getLogger(__name__)

_VEL_TAG = 1
_GOAL_TAG = 2

MODE_MAP = "map"
MODE_MIXTURE = "mixture"


def _agent_key(agent_id: str) -> int:
    """Stable 64-bit key for substream derivation (process-independent)."""
    digest = hashlib.sha256(agent_id.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def _substream(seed: int, *fields: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), *fields]))


@dataclass(frozen=True)
class PredictionRequest:
    """Inputs of one joint prediction query.

    Every observation trajectory must end exactly at ``at_step`` (the
    shared observation time). ``known_goals`` pins agents (e.g. the
    robot) to a goal index regardless of their posterior; everyone else
    follows ``mode``: the posterior argmax for ``"map"`` or per-sample
    goal draws for ``"mixture"``.
    """

    observations: dict[str, Trajectory]
    at_step: int
    horizon: int
    samples: int
    timestep_duration: float
    mode: str = MODE_MAP
    known_goals: dict[str, int] = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if not self.observations:
            raise ValidationError("prediction request has no agents")
        if self.horizon < 1:
            raise ValidationError(f"horizon must be >= 1, got {self.horizon}")
        if self.samples < 1:
            raise ValidationError(f"samples must be >= 1, got {self.samples}")
        if self.mode not in (MODE_MAP, MODE_MIXTURE):
            raise ValidationError(f"unknown mode {self.mode!r}")
        if not self.timestep_duration > 0:
            raise ValidationError("timestep duration must be > 0")
        if self.seed < 0:
            raise ValidationError(f"seed must be >= 0, got {self.seed}")
        for agent_id, traj in self.observations.items():
            if traj.agent_id != agent_id:
                raise ValidationError(
                    f"observation key {agent_id!r} does not match trajectory id {traj.agent_id!r}"
                )
            if traj.last_step != self.at_step:
                raise ValidationError(
                    f"agent {agent_id!r} observations end at step {traj.last_step}, "
                    f"request is at step {self.at_step}"
                )
        for agent_id in self.known_goals:
            if agent_id not in self.observations:
                raise ValidationError(f"known goal for unobserved agent {agent_id!r}")
        object.__setattr__(self, "observations", MappingProxyType(dict(self.observations)))
        object.__setattr__(self, "known_goals", MappingProxyType(dict(self.known_goals)))


def request_from_scene(
    scene: Scene,
    at_step: int,
    horizon: int,
    samples: int,
    mode: str = MODE_MAP,
    known_goals: dict[str, int] | None = None,
    seed: int = 0,
    obs_window: int | None = None,
) -> PredictionRequest:
    """Window a scene into a request at ``at_step``.

    Includes every agent with a position at ``at_step``; each history
    keeps at most ``obs_window`` most recent positions (all by default).
    """
    observations = {}
    for traj in scene.trajectories:
        if not traj.has_step(at_step):
            continue
        length = at_step - traj.start_step + 1
        if obs_window is not None:
            length = min(length, obs_window)
        start = at_step - length + 1
        positions = traj.positions[start - traj.start_step : at_step - traj.start_step + 1]
        observations[traj.agent_id] = Trajectory(traj.agent_id, start, positions)
    if not observations:
        raise ValidationError(f"no agents observed at step {at_step}")
    return PredictionRequest(
        observations,
        at_step,
        horizon,
        samples,
        scene.timestep_duration,
        mode,
        known_goals or {},
        seed,
    )


@dataclass(frozen=True)
class ConditionedAgent:
    """One agent's goal choice, conditioned GPs, and launch state."""

    agent_id: str
    posterior: GoalPosterior | None  # None for degenerate histories
    gps: dict[int, tuple[TrainedGp, TrainedGp]]  # goal index -> (x GP, y GP)
    fixed_goal: int | None  # set in map/known modes
    last_pos: np.ndarray  # (2,)
    last_grid: np.ndarray  # (m**2,)
    degenerate: bool


@dataclass(frozen=True)
class TrajectoryFan:
    """S sampled joint futures for all agents over the horizon.

    ``positions[k, j, i]`` is agent ``i``'s sampled position at step
    ``start_step + 1 + k`` in rollout ``j``. ``goal_choices[j, i]`` is
    the goal index rollout ``j`` used for agent ``i`` (-1 for agents
    propagated at zero velocity). Agents are never dropped before the
    horizon ends; truncation to shorter true paths is evaluation's job.
    """

    agent_ids: tuple[str, ...]
    start_step: int
    timestep_duration: float
    positions: np.ndarray  # (horizon, samples, n_agents, 2)
    goal_choices: np.ndarray  # (samples, n_agents)
    degenerate: frozenset[str]

    @property
    def horizon(self) -> int:
        return self.positions.shape[0]

    @property
    def n_samples(self) -> int:
        return self.positions.shape[1]

    def agent_index(self, agent_id: str) -> int:
        return self.agent_ids.index(agent_id)


def condition_agents(request: PredictionRequest, model: GoalModel) -> dict[str, ConditionedAgent]:
    """Choose goals and condition per-agent GPs on their own histories.

    Agents with fewer than two observations cannot be conditioned; they
    are flagged degenerate and later propagated at zero velocity.
    """
    for agent_id, g in request.known_goals.items():
        if not 0 <= g < model.n_goals:
            raise ValidationError(
                f"known goal {g} for agent {agent_id!r} out of range ({model.n_goals} goals)"
            )
    features = trajectory_features(
        request.observations.values(), model.grid_cfg, request.timestep_duration
    )
    uniform = _checked_prior(None, model.n_goals)
    out = {}
    for agent_id in sorted(request.observations):
        feats = features[agent_id]
        traj = request.observations[agent_id]
        last_pos = traj.positions[-1].copy()
        last_grid = feats.grids[-1].copy()
        if feats.velocities.shape[0] < 1:
            logger.warning(
                "agent %s has %d observation(s); propagating at zero velocity",
                agent_id,
                len(traj),
            )
            out[agent_id] = ConditionedAgent(
                agent_id, None, {}, None, last_pos, last_grid, True
            )
            continue

        grids = feats.grids[:-1]
        vx = feats.velocities[:, 0]
        vy = feats.velocities[:, 1]
        posterior = infer_goal_posterior(grids, vx, vy, model)

        if agent_id in request.known_goals:
            fixed = int(request.known_goals[agent_id])
            pool = [fixed]
        elif request.mode == MODE_MAP:
            fixed = posterior.map_goal
            pool = [fixed]
        else:
            fixed = None
            pool = [g for g in range(model.n_goals) if posterior.probabilities[g] > 0]
            if not pool:
                pool = list(range(model.n_goals))
                posterior = GoalPosterior(uniform.copy())

        gps = {}
        for g in pool:
            hp_x, hp_y = model.pair(g)
            gps[g] = (condition(hp_x, grids, vx), condition(hp_y, grids, vy))
        out[agent_id] = ConditionedAgent(
            agent_id, posterior, gps, fixed, last_pos, last_grid, False
        )
    return out


def _draw_goals(
    agents: dict[str, ConditionedAgent], ids: list[str], request: PredictionRequest
) -> np.ndarray:
    """Per-sample goal assignment, shape (samples, n_agents); -1 marks degenerate."""
    S = request.samples
    choices = np.full((S, len(ids)), -1, dtype=np.int64)
    for i, agent_id in enumerate(ids):
        ca = agents[agent_id]
        if ca.degenerate:
            continue
        if ca.fixed_goal is not None:
            choices[:, i] = ca.fixed_goal
        else:
            rng = _substream(request.seed, _GOAL_TAG, _agent_key(agent_id))
            pool = np.array(sorted(ca.gps))
            probs = ca.posterior.probabilities[pool]
            probs = probs / probs.sum()
            choices[:, i] = rng.choice(pool, size=S, p=probs)
    return choices


def _joint_mean_grids(positions: np.ndarray, cfg) -> np.ndarray:
    """Per-cell mean over samples of each agent's occupancy grid.

    ``positions`` has shape (samples, n_agents, 2); the result is
    (n_agents, m**2).
    """
    S, n, _ = positions.shape
    d = cfg.n_cells
    if n == 1:
        return np.zeros((1, d))
    rel = positions[:, None, :, :] - positions[:, :, None, :]  # [s, i, j] = p_j - p_i
    a, b, valid = cell_coords(rel, cfg)
    valid = valid & ~np.eye(n, dtype=bool)[None, :, :]
    flat = (a - 1) + cfg.m * (b - 1)
    agent_ix = np.broadcast_to(np.arange(n)[None, :, None], flat.shape)
    combined = agent_ix * d + flat
    counts = np.bincount(combined[valid].ravel(), minlength=n * d)
    return counts.reshape(n, d) / float(S)


def _distributions_at(
    agents: dict[str, ConditionedAgent], ids: list[str], grids: np.ndarray
) -> list[dict[int, tuple[float, float, float, float]]]:
    """Per agent: goal -> (mean_x, std_x, mean_y, std_y) at its query grid."""
    out = []
    for i, agent_id in enumerate(ids):
        ca = agents[agent_id]
        table = {}
        for g, (gp_x, gp_y) in ca.gps.items():
            dist_x = gp_predict(gp_x, grids[i])
            dist_y = gp_predict(gp_y, grids[i])
            table[g] = (
                dist_x.mean,
                float(np.sqrt(dist_x.variance)),
                dist_y.mean,
                float(np.sqrt(dist_y.variance)),
            )
        out.append(table)
    return out


def multi_step(request: PredictionRequest, model: GoalModel) -> TrajectoryFan:
    """Sample S joint rollouts of all agents for H steps.

    Per step: draw S velocity samples per agent and axis from the
    current predictive distributions, advance positions by v * dt,
    rebuild occupancy grids from the sampled joint positions, collapse
    them to their per-sample mean, and recompute the predictive
    distributions at the mean grids. Deterministic given the seed; a
    fan is prefix-consistent, i.e. the first k steps match a run with
    horizon k.
    """
    agents = condition_agents(request, model)
    ids = sorted(agents)
    keys = [_agent_key(a) for a in ids]
    n = len(ids)
    S = request.samples
    H = request.horizon
    dt = request.timestep_duration

    goal_choices = _draw_goals(agents, ids, request)
    query_grids = np.stack([agents[a].last_grid for a in ids])
    dists = _distributions_at(agents, ids, query_grids)

    cur = np.tile(
        np.stack([agents[a].last_pos for a in ids])[None, :, :], (S, 1, 1)
    )  # (S, n, 2)
    out = np.empty((H, S, n, 2))

    for k in range(1, H + 1):
        for i, agent_id in enumerate(ids):
            ca = agents[agent_id]
            if ca.degenerate:
                continue
            table = dists[i]
            pool = sorted(table)
            means = np.array([[table[g][0], table[g][2]] for g in pool])
            stds = np.array([[table[g][1], table[g][3]] for g in pool])
            if len(pool) == 1:
                mean_x = np.full(S, means[0, 0])
                std_x = np.full(S, stds[0, 0])
                mean_y = np.full(S, means[0, 1])
                std_y = np.full(S, stds[0, 1])
            else:
                lookup = {g: row for row, g in enumerate(pool)}
                rows = np.array([lookup[g] for g in goal_choices[:, i]])
                mean_x, mean_y = means[rows, 0], means[rows, 1]
                std_x, std_y = stds[rows, 0], stds[rows, 1]
            zx = _substream(request.seed, _VEL_TAG, k, keys[i], 0).standard_normal(S)
            zy = _substream(request.seed, _VEL_TAG, k, keys[i], 1).standard_normal(S)
            cur[:, i, 0] += (mean_x + std_x * zx) * dt
            cur[:, i, 1] += (mean_y + std_y * zy) * dt
        out[k - 1] = cur
        if k < H:
            mean_grids = _joint_mean_grids(cur, model.grid_cfg)
            dists = _distributions_at(agents, ids, mean_grids)

    return TrajectoryFan(
        tuple(ids),
        request.at_step,
        dt,
        out,
        goal_choices,
        frozenset(a for a in ids if agents[a].degenerate),
    )


def map_trajectory(fan: TrajectoryFan) -> dict[str, np.ndarray]:
    """Point-estimate trajectory per agent: the per-axis sample mean.

    Stands in for the maximizer of the joint posterior, which is not
    well defined from finite samples; isolated here so alternatives can
    be swapped without touching the sampler.
    """
    if fan.positions.size == 0:
        raise ValidationError("empty fan")
    means = fan.positions.mean(axis=1)  # (horizon, n_agents, 2)
    return {agent_id: means[:, i, :].copy() for i, agent_id in enumerate(fan.agent_ids)}
