"""
Codebook
========
Cluster-level rating pattern B (k1 x k2) built from the source matrix and
its hard user/item memberships.

Two averaging modes:
- observed: B[a, b] = mean of the observed ratings in co-cluster (a, b)
- literal:  B[a, b] = sum of the ratings in (a, b) / (|a| * |b|), i.e.
            missing entries count as zeros

Blocks without any observed rating receive `fill_value`, the mean of the
non-empty blocks.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Union

import numpy as np

from .coclustering import MembershipMatrix
from .errors import MembershipSizeMismatch, ShapeMismatch
from .ratings import DenseMatrix, SparseRatingMatrix, observed_mean

logger = logging.getLogger(__name__)


class AveragingMode(str, Enum):
    OBSERVED = "observed"
    LITERAL = "literal"


@dataclass(frozen=True, eq=False)
class Codebook:
    """Dense k1 x k2 codebook plus the per-block observed counts."""
    B: DenseMatrix
    block_counts: np.ndarray
    fill_value: float
    mode: AveragingMode = AveragingMode.OBSERVED

    def __post_init__(self):
        self.B.flags.writeable = False
        self.block_counts.flags.writeable = False

    @property
    def shape(self):
        return self.B.shape

    @property
    def n_empty_blocks(self) -> int:
        return int(np.count_nonzero(self.block_counts == 0))

    @classmethod
    def identity(cls, k: int) -> "Codebook":
        """k x k identity codebook; reduces transfer to plain max-margin factorization."""
        return cls(
            B=np.eye(k),
            block_counts=np.ones((k, k), dtype=np.int64),
            fill_value=0.0,
        )

    def to_dict(self) -> dict:
        return {
            "k1": self.B.shape[0],
            "k2": self.B.shape[1],
            "mode": self.mode.value,
            "fill_value": self.fill_value,
            "empty_blocks": self.n_empty_blocks,
            "min": float(self.B.min()),
            "max": float(self.B.max()),
        }


def build_codebook(
    X: SparseRatingMatrix,
    Ps: MembershipMatrix,
    Qs: MembershipMatrix,
    mode: Union[AveragingMode, str] = AveragingMode.OBSERVED,
) -> Codebook:
    """
    Average the source ratings inside each user-cluster x item-cluster block.

    Raises:
        MembershipSizeMismatch: Ps/Qs do not cover exactly the source users/items
    """
    mode = AveragingMode(mode)
    if Ps.n_rows != X.n_users:
        raise MembershipSizeMismatch(
            f"user memberships cover {Ps.n_rows} rows, source has {X.n_users} users"
        )
    if Qs.n_rows != X.n_items:
        raise MembershipSizeMismatch(
            f"item memberships cover {Qs.n_rows} rows, source has {X.n_items} items"
        )

    k1, k2 = Ps.n_clusters, Qs.n_clusters
    a = Ps.assignments[X.users]
    b = Qs.assignments[X.items]
    flat = a * k2 + b
    sums = np.bincount(flat, weights=X.ratings.astype(np.float64), minlength=k1 * k2).reshape(k1, k2)
    counts = np.bincount(flat, minlength=k1 * k2).reshape(k1, k2).astype(np.int64)

    if mode is AveragingMode.OBSERVED:
        denom = counts.astype(np.float64)
    else:
        denom = np.outer(Ps.cluster_sizes(), Qs.cluster_sizes()).astype(np.float64)

    filled = counts > 0
    B = np.zeros((k1, k2))
    B[filled] = sums[filled] / denom[filled]
    fill_value = float(B[filled].mean()) if filled.any() else observed_mean(X)
    B[~filled] = fill_value

    if not filled.all():
        logger.info("Codebook has %d empty blocks, filled with %.4f", int((~filled).sum()), fill_value)

    return Codebook(B=B, block_counts=counts, fill_value=fill_value, mode=mode)


def codebook_reconstruction(
    B: Codebook,
    Ps: MembershipMatrix,
    Qs: MembershipMatrix,
) -> DenseMatrix:
    """Dense approximation Ps B Qs^T of the source matrix."""
    k1, k2 = B.shape
    if Ps.n_clusters != k1 or Qs.n_clusters != k2:
        raise ShapeMismatch(
            f"codebook is {k1}x{k2}, memberships have {Ps.n_clusters} and {Qs.n_clusters} clusters"
        )
    return B.B[np.ix_(Ps.assignments, Qs.assignments)]
