"""
Hinge-Loss Codebook Transfer
============================
Learns target user factors U (m' x k1), item factors V (n' x k2) and
per-user thresholds Theta (m' x (r-1)) against a fixed codebook B by
minimizing

    J = sum_{(i,j) observed} sum_{c=1}^{r-1} h(T_ij^c (theta_ic - z_ij))
        + lambda/2 (||U||^2 + ||V||^2),        z = U B V^T

where T_ij^c = -1 if c < y_ij else +1 and h is the smoothed hinge.
A score is decoded into a rating by counting the thresholds it reaches.
"""

import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import List, Literal, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy import sparse

from .codebook import Codebook
from .errors import ConfigError, Diverged, EmptyMatrix, ShapeMismatch
from .ratings import DenseMatrix, SparseRatingMatrix

logger = logging.getLogger(__name__)

ARMIJO_SIGMA = 1e-4
ARMIJO_SHRINK = 0.5
ARMIJO_GROW = 2.0
MAX_BACKTRACKS = 50

ArrayLike = Union[float, np.ndarray]


class TransferConfig(BaseModel):
    """Hyperparameters of the target-side optimization."""
    model_config = ConfigDict(frozen=True, extra="forbid", populate_by_name=True)

    lambda_: float = Field(0.5, gt=0.0, alias="lambda", description="Frobenius regularization")
    learn_rate: float = Field(0.01, gt=0.0, description="initial (or fixed) gradient step")
    max_iters: int = Field(500, ge=0)
    tol: float = Field(1e-5, gt=0.0, description="relative decrease over `window` iterations")
    window: int = Field(10, ge=1)
    seed: int = 0
    r_max: int = Field(5, ge=2, description="number of rating levels r")
    step_mode: Literal["armijo", "fixed"] = "armijo"
    init_scale: float = Field(0.01, gt=0.0, description="std of the normal factor initialization")


def smoothed_hinge(d: ArrayLike) -> ArrayLike:
    """0 for d >= 1, (1-d)^2/2 for 0 < d < 1, 1/2 - d otherwise."""
    d = np.asarray(d, dtype=np.float64)
    out = np.where(d >= 1.0, 0.0, np.where(d > 0.0, 0.5 * (1.0 - d) ** 2, 0.5 - d))
    return float(out) if out.ndim == 0 else out


def smoothed_hinge_grad(d: ArrayLike) -> ArrayLike:
    """0 for d >= 1, d-1 for 0 < d < 1, -1 otherwise."""
    d = np.asarray(d, dtype=np.float64)
    out = np.where(d >= 1.0, 0.0, np.where(d > 0.0, d - 1.0, -1.0))
    return float(out) if out.ndim == 0 else out


def ordinal_sign(c: ArrayLike, y: ArrayLike) -> ArrayLike:
    """-1 when threshold index c lies below rating y, +1 otherwise."""
    out = np.where(np.asarray(c) < np.asarray(y), -1, 1)
    return int(out) if out.ndim == 0 else out


def decode_scores(z: np.ndarray, theta_rows: np.ndarray) -> np.ndarray:
    """Rating = 1 + number of thresholds the score reaches (z >= theta)."""
    z = np.asarray(z, dtype=np.float64)
    theta_rows = np.asarray(theta_rows, dtype=np.float64)
    return 1 + np.count_nonzero(z[..., None] >= theta_rows, axis=-1)


@dataclass
class TransferModel:
    """Target factors, thresholds and the (fixed) codebook they were fit against."""
    U: DenseMatrix
    V: DenseMatrix
    Theta: DenseMatrix
    B: Codebook
    objective_trace: List[float] = field(default_factory=list)
    n_iters: int = 0
    converged: bool = False
    lambda_: float = 0.5
    seed: int = 0

    @property
    def r_max(self) -> int:
        return self.Theta.shape[1] + 1

    @property
    def final_objective(self) -> float:
        return self.objective_trace[-1]

    def unordered_threshold_fraction(self) -> float:
        """Fraction of users whose thresholds are not non-decreasing."""
        if self.Theta.shape[0] == 0 or self.Theta.shape[1] < 2:
            return 0.0
        return float(np.mean(np.any(np.diff(self.Theta, axis=1) < 0, axis=1)))

    def to_dict(self) -> dict:
        return {
            "n_users": self.U.shape[0],
            "n_items": self.V.shape[0],
            "k1": self.U.shape[1],
            "k2": self.V.shape[1],
            "r": self.r_max,
            "lambda": self.lambda_,
            "seed": self.seed,
            "n_iters": self.n_iters,
            "converged": self.converged,
            "final_objective": self.final_objective,
            "unordered_threshold_fraction": self.unordered_threshold_fraction(),
        }


@dataclass(eq=False)
class PredictionMatrix:
    """
    Decoded predictions for the whole target, evaluated lazily.

    `scores_at` / `ratings_at` work on index arrays; the dense `scores` and
    `ratings` properties materialize m' x n' arrays and are meant for small
    targets.
    """
    UB: DenseMatrix
    V: DenseMatrix
    Theta: DenseMatrix

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.UB.shape[0], self.V.shape[0])

    @property
    def r_max(self) -> int:
        return self.Theta.shape[1] + 1

    def scores_at(self, users: np.ndarray, items: np.ndarray) -> np.ndarray:
        return np.einsum("ij,ij->i", self.UB[users], self.V[items])

    def ratings_at(self, users: np.ndarray, items: np.ndarray) -> np.ndarray:
        return decode_scores(self.scores_at(users, items), self.Theta[users])

    @cached_property
    def scores(self) -> DenseMatrix:
        return self.UB @ self.V.T

    @cached_property
    def ratings(self) -> np.ndarray:
        z = self.scores
        out = np.ones(z.shape, dtype=np.int64)
        for c in range(self.Theta.shape[1]):
            out += z >= self.Theta[:, c:c + 1]
        return out


class _HingeObjective:
    """Objective and gradients over the observed target entries."""

    def __init__(self, Y: SparseRatingMatrix, B: DenseMatrix, lambda_: float, r_max: int):
        self.Y = Y
        self.B = B
        self.lambda_ = lambda_
        levels = np.arange(1, r_max)
        self.T = ordinal_sign(levels[None, :], Y.ratings[:, None]).astype(np.float64)
        csr = Y.by_user
        self._indices = csr.indices
        self._indptr = csr.indptr
        # user x observed-entry incidence; rows sum per-entry terms into per-user totals
        n = len(Y)
        self._incidence = sparse.csr_matrix(
            (np.ones(n), np.arange(n), csr.indptr), shape=(Y.n_users, n)
        )

    def scores(self, U: DenseMatrix, V: DenseMatrix) -> np.ndarray:
        return np.einsum("ij,ij->i", (U @ self.B)[self.Y.users], V[self.Y.items])

    def margins(self, U, V, Theta) -> np.ndarray:
        z = self.scores(U, V)
        return self.T * (Theta[self.Y.users] - z[:, None])

    def value(self, U, V, Theta) -> float:
        loss = float(np.sum(smoothed_hinge(self.margins(U, V, Theta))))
        return loss + 0.5 * self.lambda_ * float(np.sum(U * U) + np.sum(V * V))

    def gradients(self, U, V, Theta) -> Tuple[DenseMatrix, DenseMatrix, DenseMatrix]:
        H = self.T * smoothed_hinge_grad(self.margins(U, V, Theta))
        g = H.sum(axis=1)
        G = sparse.csr_matrix((g, self._indices, self._indptr), shape=self.Y.shape)
        grad_U = self.lambda_ * U - G @ (V @ self.B.T)
        grad_V = self.lambda_ * V - G.T @ (U @ self.B)
        grad_Theta = self._incidence @ H
        return np.asarray(grad_U), np.asarray(grad_V), np.asarray(grad_Theta)


def _check_model(Y: SparseRatingMatrix, M: TransferModel) -> None:
    k1, k2 = M.B.shape
    if M.U.shape != (Y.n_users, k1):
        raise ShapeMismatch(f"U has shape {M.U.shape}, expected {(Y.n_users, k1)}")
    if M.V.shape != (Y.n_items, k2):
        raise ShapeMismatch(f"V has shape {M.V.shape}, expected {(Y.n_items, k2)}")
    if M.Theta.ndim != 2 or M.Theta.shape[0] != Y.n_users or M.Theta.shape[1] < 1:
        raise ShapeMismatch(f"Theta has shape {M.Theta.shape}, expected ({Y.n_users}, r-1)")
    if Y.r_max > M.r_max:
        raise ShapeMismatch(f"target ratings reach {Y.r_max} but Theta encodes {M.r_max} levels")


def objective(Y: SparseRatingMatrix, M: TransferModel, lambda_: float) -> float:
    """Smoothed-hinge transfer objective J(U, V, Theta)."""
    _check_model(Y, M)
    return _HingeObjective(Y, M.B.B, lambda_, M.r_max).value(M.U, M.V, M.Theta)


def gradients(
    Y: SparseRatingMatrix,
    M: TransferModel,
    lambda_: float,
) -> Tuple[DenseMatrix, DenseMatrix, DenseMatrix]:
    """Analytic gradients of J with respect to U, V and Theta."""
    _check_model(Y, M)
    return _HingeObjective(Y, M.B.B, lambda_, M.r_max).gradients(M.U, M.V, M.Theta)


def initial_thresholds(n_users: int, r_max: int) -> DenseMatrix:
    """Centered, strictly increasing thresholds c - r/2 + 1/2 for every user."""
    levels = np.arange(1, r_max, dtype=np.float64) - r_max / 2.0 + 0.5
    return np.tile(levels, (n_users, 1))


def _stalled(trace: List[float], window: int, tol: float) -> bool:
    if trace[-1] == 0.0:
        return True
    if len(trace) <= window:
        return False
    past = trace[-1 - window]
    return (past - trace[-1]) <= tol * max(abs(past), np.finfo(float).tiny)


def fit(Y: SparseRatingMatrix, B: Codebook, cfg: TransferConfig) -> TransferModel:
    """
    Gradient descent on U, V, Theta from a seeded random start.

    In armijo mode the first trial step is `learn_rate`, later iterations
    start from twice the previously accepted step and halve until the
    sufficient-decrease condition holds. In fixed mode every update uses
    `learn_rate` unchecked.

    Raises:
        EmptyMatrix: Y has no ratings
        ConfigError: Y holds ratings above cfg.r_max
        Diverged: the objective became non-finite
    """
    if len(Y) == 0:
        raise EmptyMatrix("cannot fit a transfer model on a target with no ratings")
    if Y.r_max > cfg.r_max:
        raise ConfigError(f"target rating scale {Y.r_max} exceeds r_max={cfg.r_max}")

    k1, k2 = B.shape
    rng = np.random.default_rng(cfg.seed)
    U = rng.normal(0.0, cfg.init_scale, size=(Y.n_users, k1))
    V = rng.normal(0.0, cfg.init_scale, size=(Y.n_items, k2))
    Theta = initial_thresholds(Y.n_users, cfg.r_max)

    obj = _HingeObjective(Y, B.B, cfg.lambda_, cfg.r_max)
    f = obj.value(U, V, Theta)
    if not np.isfinite(f):
        raise Diverged("initial transfer objective is not finite")

    logger.info(
        "Fitting transfer model on %dx%d target (%d ratings), codebook %dx%d, lambda=%g",
        Y.n_users, Y.n_items, len(Y), k1, k2, cfg.lambda_,
    )

    trace = [f]
    step = cfg.learn_rate
    converged = False
    it = 0

    for it in range(1, cfg.max_iters + 1):
        gU, gV, gT = obj.gradients(U, V, Theta)

        if cfg.step_mode == "fixed":
            U, V, Theta = U - step * gU, V - step * gV, Theta - step * gT
            f = obj.value(U, V, Theta)
        else:
            gnorm2 = float(np.sum(gU * gU) + np.sum(gV * gV) + np.sum(gT * gT))
            t = step
            accepted = False
            for _ in range(MAX_BACKTRACKS):
                U_new, V_new, T_new = U - t * gU, V - t * gV, Theta - t * gT
                f_new = obj.value(U_new, V_new, T_new)
                if np.isfinite(f_new) and f_new <= f - ARMIJO_SIGMA * t * gnorm2:
                    accepted = True
                    break
                t *= ARMIJO_SHRINK
            if not accepted:
                logger.debug("transfer line search found no decrease at iteration %d", it)
                converged = True
                it -= 1
                break
            U, V, Theta, f = U_new, V_new, T_new, f_new
            step = t * ARMIJO_GROW

        if not np.isfinite(f):
            raise Diverged(f"transfer objective became non-finite at iteration {it}")
        trace.append(f)
        logger.debug("transfer iter=%d objective=%.6g step=%.3g", it, f, step)

        if _stalled(trace, cfg.window, cfg.tol):
            converged = True
            break

    model = TransferModel(
        U=U, V=V, Theta=Theta, B=B,
        objective_trace=trace, n_iters=it, converged=converged,
        lambda_=cfg.lambda_, seed=cfg.seed,
    )
    unordered = model.unordered_threshold_fraction()
    if unordered > 0:
        logger.warning("%.1f%% of users ended with unordered thresholds", 100 * unordered)
    logger.info(
        "Transfer finished after %d iterations: objective %.6g -> %.6g",
        it, trace[0], trace[-1],
    )
    return model


def decode(M: TransferModel) -> PredictionMatrix:
    """Prediction matrix mapping U B V^T through the per-user thresholds."""
    return PredictionMatrix(UB=M.U @ M.B.B, V=M.V, Theta=M.Theta)


def fit_baseline_mmmf(Y: SparseRatingMatrix, k: int, cfg: TransferConfig) -> TransferModel:
    """Plain max-margin factorization of the target: the same fit with B = I_k."""
    return fit(Y, Codebook.identity(k), cfg)
