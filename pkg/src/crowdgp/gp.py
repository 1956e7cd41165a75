"""Squared-exponential ARD Gaussian-process regression.

The kernel between two occupancy grids o and o' is

    k(o, o') = sf^2 * exp(-0.5 * sum_d (o_d - o'_d)^2 / l_d^2) + sn^2 * [same point]

with signal standard deviation sf, one lengthscale l_d per grid cell,
and noise standard deviation sn. Noise is added on the training-matrix
diagonal only (per observation), never between distinct observations
that happen to share a grid vector. All hyperparameters live in log
space, which keeps them positive for free during optimization.

Evidence (log marginal likelihood) and its analytic gradient are
computed through a Cholesky factorization of the kernel matrix plus a
small diagonal jitter proportional to the signal variance; the jitter
escalates by factors of ten on factorization failure before giving up.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular
from scipy.optimize import minimize

from .errors import NumericalError, ValidationError

logger = logging.getLogger(__name__)

JITTER_BASE = 1e-8  # fraction of signal variance added to the diagonal
JITTER_MAX = 1e-2  # escalation limit before raising
LOG_PARAM_BOUND = 20.0  # optimizer box in log space


@dataclass(frozen=True)
class Hyperparams:
    """Log-space kernel hyperparameters: signal, per-cell lengthscales, noise."""

    log_signal: float
    log_lengthscales: np.ndarray
    log_noise: float

    def __post_init__(self):
        ls = np.asarray(self.log_lengthscales, dtype=float).reshape(-1)
        vals = np.concatenate([[self.log_signal, self.log_noise], ls])
        if not np.all(np.isfinite(vals)):
            raise ValidationError("hyperparameters must be finite")
        object.__setattr__(self, "log_lengthscales", ls)

    @property
    def dim(self) -> int:
        return self.log_lengthscales.shape[0]

    @property
    def signal_var(self) -> float:
        return float(np.exp(2.0 * self.log_signal))

    @property
    def noise_var(self) -> float:
        return float(np.exp(2.0 * self.log_noise))

    @property
    def lengthscales(self) -> np.ndarray:
        return np.exp(self.log_lengthscales)

    def to_vector(self) -> np.ndarray:
        """Pack as [log_signal, log_lengthscales..., log_noise]."""
        return np.concatenate([[self.log_signal], self.log_lengthscales, [self.log_noise]])

    @classmethod
    def from_vector(cls, vec: np.ndarray) -> "Hyperparams":
        vec = np.asarray(vec, dtype=float)
        return cls(float(vec[0]), vec[1:-1].copy(), float(vec[-1]))


@dataclass(frozen=True)
class GpFitConfig:
    """Evidence-maximization settings."""

    max_iters: int = 200
    tol: float = 1e-5  # gradient-norm convergence tolerance
    restarts: int = 3  # perturbed starts in addition to the base start
    subsample_cap: int = 1000
    seed: int = 0


@dataclass(frozen=True)
class Gaussian1:
    """One-dimensional Gaussian predictive distribution."""

    mean: float
    variance: float

    def __post_init__(self):
        if not (np.isfinite(self.mean) and np.isfinite(self.variance)):
            raise ValidationError("non-finite predictive distribution")
        if self.variance < 0:
            raise ValidationError(f"negative variance {self.variance}")


@dataclass(frozen=True)
class TrainedGp:
    """A GP conditioned on training pairs, ready for prediction.

    Holds the lower Cholesky factor of the training covariance (noise
    on the diagonal plus the jitter actually used) and the solved
    weights alpha = K^-1 y.
    """

    hyperparams: Hyperparams
    train_inputs: np.ndarray  # (n, dim)
    train_targets: np.ndarray  # (n,)
    chol: np.ndarray  # (n, n) lower triangular
    alpha: np.ndarray  # (n,)
    jitter: float


def kernel(o1, o2, hp: Hyperparams, same_point: bool = False) -> float:
    """Kernel between two grids; adds noise only for the same training point.

    ``same_point`` marks the training-matrix diagonal. Two distinct
    observations with incidentally equal grids get no noise term.
    """
    o1 = np.asarray(o1, dtype=float).reshape(-1)
    o2 = np.asarray(o2, dtype=float).reshape(-1)
    if o1.shape[0] != hp.dim or o2.shape[0] != hp.dim:
        raise ValidationError(
            f"grid length {o1.shape[0]}/{o2.shape[0]} does not match {hp.dim} lengthscales"
        )
    z = (o1 - o2) / hp.lengthscales
    value = hp.signal_var * np.exp(-0.5 * float(z @ z))
    if same_point:
        value += hp.noise_var
    return float(value)


def _as_matrix(X, hp: Hyperparams) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if X.shape[1] != hp.dim:
        raise ValidationError(
            f"inputs have {X.shape[1]} dimensions, hyperparams have {hp.dim}"
        )
    return X


def _se_matrix(X: np.ndarray, hp: Hyperparams) -> np.ndarray:
    """Noise-free kernel matrix sf^2 * E."""
    # Centering is free (pairwise differences are shift-invariant) and
    # keeps the Gram-trick expansion well conditioned.
    Xs = (X - X[0]) / hp.lengthscales
    sq = np.sum(Xs * Xs, axis=1)
    r2 = sq[:, None] + sq[None, :] - 2.0 * (Xs @ Xs.T)
    np.maximum(r2, 0.0, out=r2)
    return hp.signal_var * np.exp(-0.5 * r2)


def _se_cross(X: np.ndarray, x_star: np.ndarray, hp: Hyperparams) -> np.ndarray:
    z = (X - x_star) / hp.lengthscales
    return hp.signal_var * np.exp(-0.5 * np.sum(z * z, axis=1))


def _chol_with_jitter(kse: np.ndarray, hp: Hyperparams, context: str = ""):
    """Cholesky of kse + sn^2 I + jitter I, escalating jitter on failure."""
    n = kse.shape[0]
    level = JITTER_BASE
    base = kse + hp.noise_var * np.eye(n)
    if not np.all(np.isfinite(base)):
        raise NumericalError(f"non-finite kernel matrix{context}")
    while level <= JITTER_MAX * 1.0000001:
        jitter = level * hp.signal_var
        try:
            L = cholesky(base + jitter * np.eye(n), lower=True)
            return L, jitter
        except np.linalg.LinAlgError:
            level *= 10.0
    raise NumericalError(f"Cholesky failed even at maximum jitter{context}")


def log_marginal(hp: Hyperparams, X, y) -> float:
    """Evidence of targets y at inputs X under the kernel hyperparameters.

    Computed as -0.5 y^T K^-1 y - 0.5 log|K| - n/2 log(2 pi) with
    log|K| taken from the Cholesky diagonal.
    """
    value, _ = _evidence_terms(hp, X, y)
    return value


def _evidence_terms(hp: Hyperparams, X, y):
    X = _as_matrix(X, hp)
    y = np.asarray(y, dtype=float).reshape(-1)
    n = X.shape[0]
    if n < 1 or y.shape[0] != n:
        raise ValidationError(f"need matching inputs and targets, got {n} and {y.shape[0]}")
    kse = _se_matrix(X, hp)
    L, jitter = _chol_with_jitter(kse, hp)
    alpha = cho_solve((L, True), y)
    value = (
        -0.5 * float(y @ alpha)
        - float(np.sum(np.log(np.diag(L))))
        - 0.5 * n * np.log(2.0 * np.pi)
    )
    return value, (X, y, kse, L, alpha, jitter)


def log_marginal_grad(hp: Hyperparams, X, y) -> np.ndarray:
    """Gradient of the evidence w.r.t. the log hyperparameters.

    Component order matches ``Hyperparams.to_vector``:
    [log_signal, log_lengthscales..., log_noise].
    """
    _, grad = _log_marginal_with_grad(hp, X, y)
    return grad


def _log_marginal_with_grad(hp: Hyperparams, X, y):
    value, (X, y, kse, L, alpha, jitter) = _evidence_terms(hp, X, y)
    n = X.shape[0]
    k_inv = cho_solve((L, True), np.eye(n))
    M = 0.5 * (np.outer(alpha, alpha) - k_inv)
    tr_m = float(np.trace(M))

    # d/d log sf: the jitter scales with sf^2, so it contributes too.
    A = M * kse
    g_signal = 2.0 * (float(A.sum()) + jitter * tr_m)
    g_noise = 2.0 * hp.noise_var * tr_m
    # d/d log l_d = sum_ij A_ij (x_id - x_jd)^2 / l_d^2, expanded to
    # avoid an (n, n, dim) tensor; centering on the first row makes
    # constant dimensions cancel exactly instead of to rounding error.
    Xc = X - X[0]
    s = A.sum(axis=0)
    g_ls = 2.0 * (s @ (Xc * Xc) - np.sum(Xc * (A @ Xc), axis=0)) / hp.lengthscales**2
    grad = np.concatenate([[g_signal], g_ls, [g_noise]])
    return value, grad


def fit(X, y, cfg: GpFitConfig) -> Hyperparams:
    """Maximize the evidence over log hyperparameters.

    Runs L-BFGS-B from a data-scaled base start plus ``cfg.restarts``
    perturbed starts (uniform +-0.5 in log space, seeded) and returns
    the best candidate; the result never scores below any start point.
    Inputs beyond ``cfg.subsample_cap`` are uniformly subsampled with
    the configured seed.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    y = np.asarray(y, dtype=float).reshape(-1)
    n, dim = X.shape
    if n != y.shape[0]:
        raise ValidationError(f"inputs/targets length mismatch: {n} vs {y.shape[0]}")
    if n < 2:
        raise ValidationError(f"insufficient data: need at least 2 training pairs, got {n}")

    if n > cfg.subsample_cap:
        rng = np.random.default_rng([cfg.seed, 0x5AB5])
        idx = np.sort(rng.choice(n, size=cfg.subsample_cap, replace=False))
        X = X[idx]
        y = y[idx]
        n = cfg.subsample_cap
        logger.info("subsampled training set to %d pairs", n)

    spread = float(np.std(y))
    if not spread > 0:
        spread = 1.0
    base = np.concatenate(
        [[np.log(spread)], np.zeros(dim), [np.log(0.5 * spread)]]
    )
    rng = np.random.default_rng([cfg.seed, 0x0F17])
    starts = [base]
    for _ in range(cfg.restarts):
        starts.append(base + rng.uniform(-0.5, 0.5, size=base.shape[0]))

    def value_of(vec: np.ndarray) -> float:
        try:
            return log_marginal(Hyperparams.from_vector(vec), X, y)
        except NumericalError:
            return -np.inf

    def objective(vec: np.ndarray):
        try:
            value, grad = _log_marginal_with_grad(Hyperparams.from_vector(vec), X, y)
        except NumericalError:
            return 1e25, np.zeros_like(vec)
        return -value, -grad

    bounds = [(-LOG_PARAM_BOUND, LOG_PARAM_BOUND)] * base.shape[0]
    candidates: list[tuple[float, np.ndarray]] = []
    for start in starts:
        start = np.clip(start, -LOG_PARAM_BOUND, LOG_PARAM_BOUND)
        candidates.append((value_of(start), start))
        result = minimize(
            objective,
            start,
            jac=True,
            method="L-BFGS-B",
            bounds=bounds,
            options={"maxiter": cfg.max_iters, "gtol": cfg.tol},
        )
        if np.all(np.isfinite(result.x)):
            candidates.append((value_of(result.x), result.x))

    best_value, best_vec = max(candidates, key=lambda c: c[0])
    if not np.isfinite(best_value):
        raise NumericalError("all optimization starts diverged")
    return Hyperparams.from_vector(best_vec)


def condition(hp: Hyperparams, X, y) -> TrainedGp:
    """Precompute the Cholesky factor and weights for prediction.

    No hyperparameter optimization happens here; the factorization uses
    the training covariance with noise on the diagonal plus jitter.
    """
    X = _as_matrix(X, hp)
    y = np.asarray(y, dtype=float).reshape(-1)
    if X.shape[0] < 1 or X.shape[0] != y.shape[0]:
        raise ValidationError(
            f"need at least 1 training pair with matching targets, got {X.shape[0]} and {y.shape[0]}"
        )
    kse = _se_matrix(X, hp)
    L, jitter = _chol_with_jitter(kse, hp)
    alpha = cho_solve((L, True), y)
    return TrainedGp(hp, X, y, L, alpha, jitter)


def predict(model: TrainedGp, o_star) -> Gaussian1:
    """Predictive distribution of a new noisy observation at ``o_star``.

    The mean uses noise-free cross-covariances; the variance includes
    the noise variance because rollouts sample realized velocities.
    """
    o_star = np.asarray(o_star, dtype=float).reshape(-1)
    hp = model.hyperparams
    if o_star.shape[0] != hp.dim:
        raise ValidationError(
            f"query grid length {o_star.shape[0]} does not match {hp.dim} lengthscales"
        )
    k_star = _se_cross(model.train_inputs, o_star, hp)
    mean = float(k_star @ model.alpha)
    v = solve_triangular(model.chol, k_star, lower=True)
    variance = hp.signal_var + hp.noise_var - float(v @ v)
    return Gaussian1(mean, max(variance, 0.0))
