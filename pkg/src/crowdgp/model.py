"""Goal-conditioned model container, training driver, and persistence.

A trained model holds one (x, y) pair of kernel hyperparameter sets per
goal, together with the grid geometry, the goal set, the timestep
duration of the training data, and the run seed used for training
subsampling. The on-disk format is a versioned line-oriented text file;
floats are written with 17 significant digits so a save/load round trip
is bit exact.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .data import GoalSet, TrainingSet
from .errors import NumericalError, SchemaError, ValidationError
from .gp import GpFitConfig, Hyperparams, fit, log_marginal
from .grid import GridConfig

logger = logging.getLogger(__name__)

MODEL_MAGIC = "crowdgp-model-v1"
AXES = ("x", "y")


@dataclass(frozen=True)
class GoalModel:
    """Per-goal (x-velocity, y-velocity) hyperparameter pairs."""

    grid_cfg: GridConfig
    goals: GoalSet
    hyperparams: tuple[tuple[Hyperparams, Hyperparams], ...]
    timestep_duration: float
    seed: int

    def __post_init__(self):
        if len(self.hyperparams) != len(self.goals):
            raise ValidationError(
                f"{len(self.hyperparams)} hyperparameter pairs for {len(self.goals)} goals"
            )
        d = self.grid_cfg.n_cells
        for pair in self.hyperparams:
            for hp in pair:
                if hp.dim != d:
                    raise ValidationError(
                        f"hyperparameters have {hp.dim} lengthscales, grid has {d} cells"
                    )

    @property
    def n_goals(self) -> int:
        return len(self.goals)

    def pair(self, goal: int) -> tuple[Hyperparams, Hyperparams]:
        return self.hyperparams[goal]


@dataclass(frozen=True)
class FitStat:
    """Training summary for one goal and axis."""

    goal: int
    axis: str
    n_pairs: int
    log_evidence: float


def _job_seed(run_seed: int, goal: int, axis_ix: int) -> int:
    seq = np.random.SeedSequence([int(run_seed), goal, axis_ix])
    return int(seq.generate_state(1, np.uint64)[0])


def train_goal_models(
    training: TrainingSet,
    goals: GoalSet,
    fit_cfg: GpFitConfig,
    timestep_duration: float,
    threads: int = 1,
) -> tuple[GoalModel, list[FitStat]]:
    """Fit one x-GP and one y-GP per goal.

    Fits are independent and run on a thread pool when ``threads`` > 1;
    each job derives its own seed from the run seed, the goal index and
    the axis, so the result does not depend on worker count.
    """
    n_goals = len(goals)
    for g in range(n_goals):
        n = len(training.bags[g])
        if n < 2:
            raise ValidationError(
                f"goal {g} has {n} training pair(s); need at least 2 - "
                "consider merging goals or adding training data"
            )

    jobs = []
    for g in range(n_goals):
        bag = training.bags[g]
        for axis_ix, targets in enumerate((bag.vx, bag.vy)):
            job_cfg = GpFitConfig(
                max_iters=fit_cfg.max_iters,
                tol=fit_cfg.tol,
                restarts=fit_cfg.restarts,
                subsample_cap=fit_cfg.subsample_cap,
                seed=_job_seed(fit_cfg.seed, g, axis_ix),
            )
            jobs.append((g, axis_ix, bag.grids, targets, job_cfg))

    def run(job):
        g, axis_ix, grids, targets, job_cfg = job
        try:
            hp = fit(grids, targets, job_cfg)
        except NumericalError as exc:
            raise NumericalError(f"GP fit failed for goal {g} axis {AXES[axis_ix]}: {exc}")
        return g, axis_ix, hp, log_marginal(hp, grids, targets), len(targets)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, jobs))
    else:
        results = [run(job) for job in jobs]

    by_key = {(g, axis_ix): (hp, lml, n) for g, axis_ix, hp, lml, n in results}
    pairs = []
    stats = []
    for g in range(n_goals):
        hp_x, lml_x, n_x = by_key[(g, 0)]
        hp_y, lml_y, n_y = by_key[(g, 1)]
        pairs.append((hp_x, hp_y))
        stats.append(FitStat(g, "x", n_x, lml_x))
        stats.append(FitStat(g, "y", n_y, lml_y))
    model = GoalModel(
        training.grid_cfg, goals, tuple(pairs), timestep_duration, fit_cfg.seed
    )
    return model, stats


def _fmt(value: float) -> str:
    return format(float(value), ".17g")


def save_model(model: GoalModel, path) -> None:
    """Write the model as versioned text with 17-digit floats."""
    lines = [MODEL_MAGIC]
    lines.append(f"grid_m {model.grid_cfg.m}")
    lines.append(f"grid_span {_fmt(model.grid_cfg.span)}")
    lines.append(f"timestep {_fmt(model.timestep_duration)}")
    lines.append(f"seed {model.seed}")
    lines.append(f"goals {model.n_goals}")
    for g, (x, y) in enumerate(model.goals.positions):
        lines.append(f"goal {g} {_fmt(x)} {_fmt(y)}")
    lines.append(f"records {2 * model.n_goals}")
    for g in range(model.n_goals):
        for axis_ix, hp in enumerate(model.hyperparams[g]):
            lines.append(f"record {g} {AXES[axis_ix]}")
            lines.append(f"signal {_fmt(hp.log_signal)}")
            lines.append(f"noise {_fmt(hp.log_noise)}")
            lines.append("lengthscales " + " ".join(_fmt(v) for v in hp.log_lengthscales))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


class _Cursor:
    def __init__(self, lines):
        self.lines = lines
        self.pos = 0

    def next(self, field: str) -> list[str]:
        if self.pos >= len(self.lines):
            raise SchemaError(f"model file truncated; expected field {field!r}")
        parts = self.lines[self.pos].split()
        self.pos += 1
        if not parts or parts[0] != field:
            raise SchemaError(f"expected field {field!r}, got {self.lines[self.pos - 1]!r}")
        return parts[1:]


def _parse_float(field: str, token: str) -> float:
    try:
        return float(token)
    except ValueError:
        raise SchemaError(f"bad float {token!r} in field {field!r}") from None


def _parse_int(field: str, token: str) -> int:
    try:
        return int(token)
    except ValueError:
        raise SchemaError(f"bad integer {token!r} in field {field!r}") from None


def load_model(path) -> GoalModel:
    """Read a model file written by :func:`save_model`."""
    with open(path, encoding="utf-8") as fh:
        lines = [line.rstrip("\n") for line in fh if line.strip()]
    if not lines or lines[0] != MODEL_MAGIC:
        raise SchemaError(f"not a {MODEL_MAGIC} file: {path}")
    cur = _Cursor(lines[1:])

    m = _parse_int("grid_m", cur.next("grid_m")[0])
    span = _parse_float("grid_span", cur.next("grid_span")[0])
    grid_cfg = GridConfig(m, span)
    timestep = _parse_float("timestep", cur.next("timestep")[0])
    seed = _parse_int("seed", cur.next("seed")[0])

    n_goals = _parse_int("goals", cur.next("goals")[0])
    goal_rows = []
    for g in range(n_goals):
        parts = cur.next("goal")
        if len(parts) != 3 or _parse_int("goal", parts[0]) != g:
            raise SchemaError(f"bad goal row for index {g}")
        goal_rows.append((_parse_float("goal", parts[1]), _parse_float("goal", parts[2])))
    goals = GoalSet(np.array(goal_rows))

    n_records = _parse_int("records", cur.next("records")[0])
    if n_records != 2 * n_goals:
        raise SchemaError(f"records field says {n_records}, expected {2 * n_goals}")
    table: dict[tuple[int, str], Hyperparams] = {}
    for _ in range(n_records):
        head = cur.next("record")
        if len(head) != 2 or head[1] not in AXES:
            raise SchemaError(f"bad record header {head!r}")
        g = _parse_int("record", head[0])
        if not 0 <= g < n_goals:
            raise SchemaError(f"record goal index {g} out of range")
        log_signal = _parse_float("signal", cur.next("signal")[0])
        log_noise = _parse_float("noise", cur.next("noise")[0])
        ls_tokens = cur.next("lengthscales")
        if len(ls_tokens) != grid_cfg.n_cells:
            raise SchemaError(
                f"lengthscales holds {len(ls_tokens)} values, grid needs {grid_cfg.n_cells}"
            )
        ls = np.array([_parse_float("lengthscales", t) for t in ls_tokens])
        table[(g, head[1])] = Hyperparams(log_signal, ls, log_noise)

    pairs = []
    for g in range(n_goals):
        for axis in AXES:
            if (g, axis) not in table:
                raise SchemaError(f"missing record for goal {g} axis {axis}")
        pairs.append((table[(g, "x")], table[(g, "y")]))
    return GoalModel(grid_cfg, goals, tuple(pairs), timestep, seed)
