"""
Co-Clustering
=============
Masked nonnegative tri-factorization of the source rating matrix

    min_{P,S,Q >= 0} ||(X - P S Q^T) . W||_F^2 + alpha ||P 1 - 1||^2 + beta ||Q 1 - 1||^2

followed by argmax binarization of P and Q into hard user/item cluster
memberships.

Solver: block-coordinate projected gradient descent (P, then S, then Q) with
an Armijo backtracking line search on each block. Every accepted block step
satisfies the projected sufficient-decrease condition, so the recorded
objective trace never increases.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, List, Literal, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy import sparse
from sklearn.cluster import KMeans

from .errors import ConfigError, Diverged, EmptyMatrix, NegativeFactor, ShapeMismatch
from .ratings import DenseMatrix, SparseRatingMatrix, observed_mean

logger = logging.getLogger(__name__)

# Armijo parameters
ARMIJO_SIGMA = 1e-2
ARMIJO_SHRINK = 0.5
ARMIJO_GROW = 2.0
MAX_BACKTRACKS = 40


class CoClusterConfig(BaseModel):
    """Hyperparameters of the source-side tri-factorization."""
    model_config = ConfigDict(frozen=True, extra="forbid")

    k1: int = Field(125, ge=1, description="user clusters")
    k2: int = Field(125, ge=1, description="item clusters")
    alpha: float = Field(1.0, ge=0.0, description="row-sum penalty on P")
    beta: float = Field(1.0, ge=0.0, description="row-sum penalty on Q")
    max_iters: int = Field(300, ge=0)
    tol: float = Field(1e-5, gt=0.0, description="relative decrease over `window` iterations")
    window: int = Field(10, ge=1)
    seed: int = 0
    init: Literal["random", "kmeans"] = "random"


@dataclass(frozen=True, eq=False)
class MembershipMatrix:
    """Hard cluster assignment, one cluster per row."""
    assignments: np.ndarray
    n_rows: int
    n_clusters: int

    def __post_init__(self):
        self.assignments.flags.writeable = False

    def cluster_sizes(self) -> np.ndarray:
        return np.bincount(self.assignments, minlength=self.n_clusters)

    def indicator(self) -> DenseMatrix:
        """Dense binary one-hot matrix (n_rows x n_clusters)."""
        out = np.zeros((self.n_rows, self.n_clusters))
        out[np.arange(self.n_rows), self.assignments] = 1.0
        return out

    def to_dict(self) -> dict:
        return {
            "n_rows": self.n_rows,
            "n_clusters": self.n_clusters,
            "cluster_sizes": self.cluster_sizes().tolist(),
        }


@dataclass
class TriFactorization:
    """Nonnegative factors P (m x k1), S (k1 x k2), Q (n x k2)."""
    P: DenseMatrix
    S: DenseMatrix
    Q: DenseMatrix
    objective_trace: List[float] = field(default_factory=list)
    n_iters: int = 0
    converged: bool = False

    @property
    def final_objective(self) -> float:
        return self.objective_trace[-1]

    def reconstruction(self) -> DenseMatrix:
        """Dense P S Q^T. Only sensible for small matrices."""
        return self.P @ self.S @ self.Q.T

    def user_memberships(self) -> MembershipMatrix:
        return binarize(self.P)

    def item_memberships(self) -> MembershipMatrix:
        return binarize(self.Q)

    def to_dict(self) -> dict:
        return {
            "shape_P": list(self.P.shape),
            "shape_S": list(self.S.shape),
            "shape_Q": list(self.Q.shape),
            "n_iters": self.n_iters,
            "converged": self.converged,
            "initial_objective": self.objective_trace[0],
            "final_objective": self.final_objective,
        }


class _MaskedTriObjective:
    """Objective and block gradients evaluated on the observed entries only."""

    def __init__(self, X: SparseRatingMatrix, alpha: float, beta: float):
        self.X = X
        self.alpha = alpha
        self.beta = beta
        self.x = X.ratings.astype(np.float64)
        # canonical triple order is CSR order, so residuals drop straight into this layout
        csr = X.by_user
        self._indices = csr.indices
        self._indptr = csr.indptr

    def residual(self, P: DenseMatrix, S: DenseMatrix, Q: DenseMatrix) -> np.ndarray:
        PS = P @ S
        pred = np.einsum("ij,ij->i", PS[self.X.users], Q[self.X.items])
        return self.x - pred

    def value(self, P: DenseMatrix, S: DenseMatrix, Q: DenseMatrix) -> float:
        r = self.residual(P, S, Q)
        p_dev = P.sum(axis=1) - 1.0
        q_dev = Q.sum(axis=1) - 1.0
        return float(r @ r + self.alpha * (p_dev @ p_dev) + self.beta * (q_dev @ q_dev))

    def _residual_matrix(self, r: np.ndarray) -> sparse.csr_matrix:
        return sparse.csr_matrix((r, self._indices, self._indptr), shape=self.X.shape)

    def grad_P(self, P, S, Q) -> DenseMatrix:
        R = self._residual_matrix(self.residual(P, S, Q))
        dev = P.sum(axis=1, keepdims=True) - 1.0
        return -2.0 * (R @ (Q @ S.T)) + 2.0 * self.alpha * dev

    def grad_S(self, P, S, Q) -> DenseMatrix:
        R = self._residual_matrix(self.residual(P, S, Q))
        return -2.0 * (P.T @ (R @ Q))

    def grad_Q(self, P, S, Q) -> DenseMatrix:
        R = self._residual_matrix(self.residual(P, S, Q))
        dev = Q.sum(axis=1, keepdims=True) - 1.0
        return -2.0 * (R.T @ (P @ S)) + 2.0 * self.beta * dev


def _check_factors(X: SparseRatingMatrix, P, S, Q) -> None:
    m, n = X.shape
    if P.ndim != 2 or S.ndim != 2 or Q.ndim != 2:
        raise ShapeMismatch("factors must be 2-D")
    if P.shape[0] != m or Q.shape[0] != n or S.shape != (P.shape[1], Q.shape[1]):
        raise ShapeMismatch(
            f"inconsistent shapes P{P.shape} S{S.shape} Q{Q.shape} for X{X.shape}"
        )
    for name, F in (("P", P), ("S", S), ("Q", Q)):
        if F.size and F.min() < 0:
            raise NegativeFactor(f"factor {name} has negative entries")


def onmtf_objective(
    X: SparseRatingMatrix,
    P: DenseMatrix,
    S: DenseMatrix,
    Q: DenseMatrix,
    alpha: float,
    beta: float,
) -> float:
    """Masked tri-factorization objective with row-sum penalties."""
    P, S, Q = (np.asarray(F, dtype=np.float64) for F in (P, S, Q))
    _check_factors(X, P, S, Q)
    return _MaskedTriObjective(X, alpha, beta).value(P, S, Q)


def _projected_armijo(
    f: Callable[[DenseMatrix], float],
    Z: DenseMatrix,
    G: DenseMatrix,
    f0: float,
    step: float,
) -> Tuple[DenseMatrix, float, float]:
    """
    One projected gradient step on a block.

    Returns (new block, new objective, accepted step). A step of 0.0 means
    no trial point gave sufficient decrease and the block is unchanged.
    """
    t = step
    for _ in range(MAX_BACKTRACKS):
        Z_new = np.maximum(Z - t * G, 0.0)
        f_new = f(Z_new)
        if np.isfinite(f_new) and f_new <= f0 + ARMIJO_SIGMA * float(np.sum(G * (Z_new - Z))):
            return Z_new, f_new, t
        t *= ARMIJO_SHRINK
    return Z, f0, 0.0


def _row_normalize(F: DenseMatrix) -> DenseMatrix:
    sums = F.sum(axis=1, keepdims=True)
    sums[sums == 0] = 1.0
    return F / sums


def _initialize(X: SparseRatingMatrix, cfg: CoClusterConfig) -> Tuple[DenseMatrix, DenseMatrix, DenseMatrix]:
    m, n = X.shape
    S = np.full((cfg.k1, cfg.k2), observed_mean(X))

    if cfg.init == "kmeans":
        def hard_start(rows: sparse.csr_matrix, k: int) -> DenseMatrix:
            labels = KMeans(n_clusters=k, n_init=10, random_state=cfg.seed).fit(rows).labels_
            F = np.zeros((rows.shape[0], k))
            F[np.arange(rows.shape[0]), labels] = 1.0
            return _row_normalize(F + 0.2)

        P = hard_start(X.by_user, cfg.k1)
        Q = hard_start(X.by_item.T.tocsr(), cfg.k2)
        return P, S, Q

    rng = np.random.default_rng(cfg.seed)
    P = _row_normalize(rng.uniform(size=(m, cfg.k1)))
    Q = _row_normalize(rng.uniform(size=(n, cfg.k2)))
    return P, S, Q


def _stalled(trace: List[float], window: int, tol: float) -> bool:
    if trace[-1] == 0.0:
        return True
    if len(trace) <= window:
        return False
    past = trace[-1 - window]
    return (past - trace[-1]) <= tol * max(abs(past), np.finfo(float).tiny)


def factorize(X: SparseRatingMatrix, cfg: CoClusterConfig) -> TriFactorization:
    """
    Tri-factorize X into nonnegative P, S, Q.

    Hitting max_iters is not an error: the factors reached so far are
    returned with converged=False.

    Raises:
        EmptyMatrix: X has no ratings
        ConfigError: more clusters than users/items
        Diverged: the objective became non-finite
    """
    if len(X) == 0:
        raise EmptyMatrix("cannot factorize a matrix with no ratings")
    if cfg.k1 > X.n_users or cfg.k2 > X.n_items:
        raise ConfigError(
            f"k1={cfg.k1}, k2={cfg.k2} exceed matrix shape {X.shape}",
            k1=cfg.k1, k2=cfg.k2,
        )

    obj = _MaskedTriObjective(X, cfg.alpha, cfg.beta)
    P, S, Q = _initialize(X, cfg)
    f = obj.value(P, S, Q)
    if not np.isfinite(f):
        raise Diverged("initial co-clustering objective is not finite")

    logger.info(
        "Factorizing %dx%d source (%d ratings) with k1=%d k2=%d init=%s",
        X.n_users, X.n_items, len(X), cfg.k1, cfg.k2, cfg.init,
    )

    trace = [f]
    steps = {"P": 1.0, "S": 1.0, "Q": 1.0}
    converged = False
    it = 0

    for it in range(1, cfg.max_iters + 1):
        G = obj.grad_P(P, S, Q)
        P, f, t = _projected_armijo(lambda Z: obj.value(Z, S, Q), P, G, f, steps["P"])
        steps["P"] = t * ARMIJO_GROW if t > 0 else steps["P"] * ARMIJO_SHRINK

        G = obj.grad_S(P, S, Q)
        S, f, t = _projected_armijo(lambda Z: obj.value(P, Z, Q), S, G, f, steps["S"])
        steps["S"] = t * ARMIJO_GROW if t > 0 else steps["S"] * ARMIJO_SHRINK

        G = obj.grad_Q(P, S, Q)
        Q, f, t = _projected_armijo(lambda Z: obj.value(P, S, Z), Q, G, f, steps["Q"])
        steps["Q"] = t * ARMIJO_GROW if t > 0 else steps["Q"] * ARMIJO_SHRINK

        if not np.isfinite(f):
            raise Diverged(f"co-clustering objective became non-finite at iteration {it}")
        trace.append(f)
        logger.debug("cocluster iter=%d objective=%.6g steps=%s", it, f, steps)

        if _stalled(trace, cfg.window, cfg.tol):
            converged = True
            break

    logger.info(
        "Co-clustering finished after %d iterations: objective %.6g -> %.6g",
        it, trace[0], trace[-1],
    )
    return TriFactorization(P=P, S=S, Q=Q, objective_trace=trace, n_iters=it, converged=converged)


def binarize(F: DenseMatrix) -> MembershipMatrix:
    """Map each row to the index of its largest entry (lowest index on ties)."""
    F = np.asarray(F, dtype=np.float64)
    if F.ndim != 2 or F.shape[0] == 0 or F.shape[1] == 0:
        raise EmptyMatrix(f"cannot binarize a matrix of shape {F.shape}")
    if np.isnan(F).any():
        raise Diverged("membership factor contains NaN")
    return MembershipMatrix(
        assignments=np.argmax(F, axis=1).astype(np.int64),
        n_rows=F.shape[0],
        n_clusters=F.shape[1],
    )
