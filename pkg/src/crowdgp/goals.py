"""Goal inference from partial velocity and grid histories.

The likelihood of an agent's goal is the GP evidence of its observed
velocity series (per axis, summed in log space since the axes are
independent GPs) under that goal's trained hyperparameters. Posteriors
are normalized with the log-sum-exp trick; the prior defaults to
uniform.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .data import Scene, trajectory_features
from .errors import ValidationError
from .gp import Hyperparams, log_marginal
from .model import GoalModel


@dataclass(frozen=True)
class GoalPosterior:
    """Probability simplex over the known goal set."""

    probabilities: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probabilities, dtype=float).reshape(-1)
        if p.shape[0] < 1:
            raise ValidationError("empty posterior")
        if np.any(p < 0) or not np.all(np.isfinite(p)):
            raise ValidationError("posterior entries must be finite and >= 0")
        if abs(float(p.sum()) - 1.0) > 1e-9:
            raise ValidationError(f"posterior sums to {p.sum()}, not 1")
        object.__setattr__(self, "probabilities", p)

    def __len__(self) -> int:
        return self.probabilities.shape[0]

    @property
    def map_goal(self) -> int:
        """Most probable goal; ties pick the lowest index."""
        return int(np.argmax(self.probabilities))


def goal_log_likelihood(grids, vx, vy, hp_x: Hyperparams, hp_y: Hyperparams) -> float:
    """Joint evidence of both velocity axes under one goal's hyperparameters."""
    grids = np.asarray(grids, dtype=float)
    if grids.ndim == 1:
        grids = grids.reshape(1, -1)
    vx = np.asarray(vx, dtype=float).reshape(-1)
    vy = np.asarray(vy, dtype=float).reshape(-1)
    if grids.shape[0] == 0:
        raise ValidationError("no observations to score")
    if grids.shape[0] != vx.shape[0] or vx.shape[0] != vy.shape[0]:
        raise ValidationError(
            f"mismatched history lengths: {grids.shape[0]} grids, "
            f"{vx.shape[0]} x-velocities, {vy.shape[0]} y-velocities"
        )
    return log_marginal(hp_x, grids, vx) + log_marginal(hp_y, grids, vy)


def _checked_prior(prior, n_goals: int) -> np.ndarray:
    if prior is None:
        return np.full(n_goals, 1.0 / n_goals)
    prior = np.asarray(prior, dtype=float).reshape(-1)
    if prior.shape[0] != n_goals:
        raise ValidationError(f"prior has {prior.shape[0]} entries for {n_goals} goals")
    if np.any(prior < 0) or not np.all(np.isfinite(prior)):
        raise ValidationError("prior entries must be finite and >= 0")
    total = float(prior.sum())
    if not total > 0:
        raise ValidationError("prior has no mass")
    return prior / total


def infer_goal_posterior(grids, vx, vy, model: GoalModel, prior=None) -> GoalPosterior:
    """Posterior over goals given one agent's observed history.

    Likelihoods can underflow for long histories, so all arithmetic
    stays in log space until the final normalization.
    """
    prior = _checked_prior(prior, model.n_goals)
    with np.errstate(divide="ignore"):
        log_prior = np.log(prior)
    log_post = np.empty(model.n_goals)
    for g in range(model.n_goals):
        if prior[g] == 0.0:
            log_post[g] = -np.inf
            continue
        hp_x, hp_y = model.pair(g)
        log_post[g] = goal_log_likelihood(grids, vx, vy, hp_x, hp_y) + log_prior[g]
    norm = logsumexp(log_post)
    if not np.isfinite(norm):
        raise ValidationError("all goals have zero posterior mass")
    return GoalPosterior(np.exp(log_post - norm))


def infer_scene_goals(
    scene: Scene, model: GoalModel, upto_step: int | None = None, prior=None
) -> dict[str, GoalPosterior]:
    """Posterior per agent with any observation at or before ``upto_step``.

    Agents with fewer than two observations carry no velocity evidence
    and receive the (normalized) prior unchanged.
    """
    prior_vec = _checked_prior(prior, model.n_goals)
    if upto_step is None and scene.trajectories:
        upto_step = scene.last_step
    windowed = []
    for traj in scene.trajectories:
        if upto_step is not None and traj.start_step > upto_step:
            continue
        if upto_step is not None and traj.last_step > upto_step:
            length = upto_step - traj.start_step + 1
            windowed.append(
                type(traj)(traj.agent_id, traj.start_step, traj.positions[:length])
            )
        else:
            windowed.append(traj)

    features = trajectory_features(windowed, model.grid_cfg, scene.timestep_duration)
    out = {}
    for traj in windowed:
        feats = features[traj.agent_id]
        if feats.velocities.shape[0] < 1:
            out[traj.agent_id] = GoalPosterior(prior_vec.copy())
            continue
        out[traj.agent_id] = infer_goal_posterior(
            feats.grids[:-1],
            feats.velocities[:, 0],
            feats.velocities[:, 1],
            model,
            prior_vec,
        )
    return out
