"""
Rating Matrices
===============
Sparse user-item rating storage shared by every numerical stage.

Ratings live in coordinate form: a missing rating is simply absent, it is
never stored as a zero. Triples are kept in canonical (user, item) order so
that every downstream computation is independent of file order.
"""

import hashlib
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Iterator, List, Sequence, Tuple, Union

import numpy as np
from scipy import sparse

from .errors import DuplicateEntry, EmptyMatrix, InvalidRating, OutOfBounds, ShapeMismatch

# Backing store for every dense factor (P, S, Q, U, V, B, Theta).
DenseMatrix = np.ndarray


@dataclass(frozen=True)
class RatingTriple:
    """A single observed rating with zero-based indices."""
    user: int
    item: int
    rating: int

    def to_dict(self) -> dict:
        return {"user": self.user, "item": self.item, "rating": self.rating}


TripleLike = Union[RatingTriple, Tuple[int, int, int]]


@dataclass(frozen=True, eq=False)
class SparseRatingMatrix:
    """
    Immutable coordinate-form rating matrix.

    `users`, `items` and `ratings` are parallel read-only arrays holding the
    observed set in (user, item) order. The CSR/CSC views are the per-user and
    per-item adjacency indices.
    """
    n_users: int
    n_items: int
    r_max: int
    users: np.ndarray
    items: np.ndarray
    ratings: np.ndarray

    def __post_init__(self):
        for arr in (self.users, self.items, self.ratings):
            arr.flags.writeable = False

    def __len__(self) -> int:
        return int(self.ratings.shape[0])

    def __iter__(self) -> Iterator[RatingTriple]:
        for u, i, r in zip(self.users.tolist(), self.items.tolist(), self.ratings.tolist()):
            yield RatingTriple(u, i, r)

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.n_users, self.n_items)

    @property
    def n_observed(self) -> int:
        return len(self)

    @property
    def density(self) -> float:
        cells = self.n_users * self.n_items
        return len(self) / cells if cells else 0.0

    @property
    def triples(self) -> List[RatingTriple]:
        return list(self)

    @cached_property
    def by_user(self) -> sparse.csr_matrix:
        """Per-user adjacency (row i lists the items user i rated)."""
        return sparse.csr_matrix(
            (self.ratings.astype(np.float64), (self.users, self.items)),
            shape=self.shape,
        )

    @cached_property
    def by_item(self) -> sparse.csc_matrix:
        """Per-item adjacency (column j lists the users who rated item j)."""
        return self.by_user.tocsc()

    def items_of(self, user: int) -> np.ndarray:
        csr = self.by_user
        return csr.indices[csr.indptr[user]:csr.indptr[user + 1]]

    def users_of(self, item: int) -> np.ndarray:
        csc = self.by_item
        return csc.indices[csc.indptr[item]:csc.indptr[item + 1]]

    def subset(self, index: np.ndarray) -> "SparseRatingMatrix":
        """Matrix of the same shape holding only the triples at `index`."""
        index = np.sort(np.asarray(index, dtype=np.int64))
        return SparseRatingMatrix(
            n_users=self.n_users,
            n_items=self.n_items,
            r_max=self.r_max,
            users=self.users[index].copy(),
            items=self.items[index].copy(),
            ratings=self.ratings[index].copy(),
        )

    def fingerprint(self) -> str:
        """Content hash, used as a cache key for source-side results."""
        digest = hashlib.sha1()
        digest.update(np.array([self.n_users, self.n_items, self.r_max], dtype=np.int64).tobytes())
        for arr in (self.users, self.items, self.ratings):
            digest.update(np.ascontiguousarray(arr).tobytes())
        return digest.hexdigest()

    def to_dict(self) -> dict:
        return {
            "n_users": self.n_users,
            "n_items": self.n_items,
            "r_max": self.r_max,
            "n_observed": self.n_observed,
            "density": self.density,
        }


def from_arrays(
    users: Sequence[int],
    items: Sequence[int],
    ratings: Sequence[int],
    n_users: int,
    n_items: int,
    r_max: int,
) -> SparseRatingMatrix:
    """
    Validate parallel index/rating arrays and build the canonical matrix.

    Raises:
        OutOfBounds: an index falls outside n_users x n_items
        InvalidRating: a rating outside 1..r_max (0 means missing and is rejected)
        DuplicateEntry: the same (user, item) pair appears twice
    """
    users = np.asarray(users, dtype=np.int64).ravel()
    items = np.asarray(items, dtype=np.int64).ravel()
    raw = np.asarray(ratings).ravel()
    if not (users.shape == items.shape == raw.shape):
        raise ShapeMismatch("users, items and ratings must have equal length")
    if r_max < 1:
        raise InvalidRating(r_max, r_max)

    bad = np.flatnonzero((users < 0) | (users >= n_users) | (items < 0) | (items >= n_items))
    if bad.size:
        k = int(bad[0])
        raise OutOfBounds(int(users[k]), int(items[k]))

    ratings = raw.astype(np.int64)
    bad = np.flatnonzero((ratings != raw) | (ratings < 1) | (ratings > r_max))
    if bad.size:
        raise InvalidRating(raw[int(bad[0])].item(), r_max)

    linear = users * n_items + items
    order = np.argsort(linear, kind="stable")
    sorted_linear = linear[order]
    dup = np.flatnonzero(sorted_linear[1:] == sorted_linear[:-1])
    if dup.size:
        k = int(order[dup[0] + 1])
        raise DuplicateEntry(int(users[k]), int(items[k]))

    return SparseRatingMatrix(
        n_users=int(n_users),
        n_items=int(n_items),
        r_max=int(r_max),
        users=users[order],
        items=items[order],
        ratings=ratings[order],
    )


def build_matrix(
    triples: Iterable[TripleLike],
    n_users: int,
    n_items: int,
    r_max: int,
) -> SparseRatingMatrix:
    """Build an indexed matrix from (user, item, rating) triples."""
    rows = [tuple(t) if not isinstance(t, RatingTriple) else (t.user, t.item, t.rating) for t in triples]
    if rows:
        users, items, ratings = (list(col) for col in zip(*rows))
    else:
        users, items, ratings = [], [], []
    return from_arrays(users, items, ratings, n_users, n_items, r_max)


def observed_mean(M: SparseRatingMatrix) -> float:
    """Arithmetic mean of the stored ratings."""
    if len(M) == 0:
        raise EmptyMatrix("observed_mean of a matrix with no ratings")
    return float(M.ratings.mean(dtype=np.float64))


def observed_values(M: SparseRatingMatrix, A: DenseMatrix) -> np.ndarray:
    """Entries of the dense matrix A at the observed positions of M."""
    A = np.asarray(A)
    if A.shape != M.shape:
        raise ShapeMismatch(f"dense matrix has shape {A.shape}, expected {M.shape}")
    return A[M.users, M.items]


def masked_residual_sq(M: SparseRatingMatrix, A: DenseMatrix) -> float:
    """Squared Frobenius norm of (X - A) restricted to observed entries."""
    resid = M.ratings.astype(np.float64) - observed_values(M, A)
    return float(resid @ resid)


def densify(M: SparseRatingMatrix) -> DenseMatrix:
    """Dense copy with observed ratings in place and zeros elsewhere."""
    return M.by_user.toarray()
