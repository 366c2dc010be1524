"""
Shared pytest fixtures: toy rating matrices, prediction helpers and
on-disk datasets/configs for the runner tests.
"""

import json
import sys

import numpy as np
import pytest

sys.path.insert(0, '.')

from codebook_transfer.evaluation import SourceCache
from codebook_transfer.hinge_transfer import PredictionMatrix
from codebook_transfer.ratings import SparseRatingMatrix, build_matrix

BLOCK_4x4 = np.array([
    [5, 5, 1, 1],
    [5, 5, 1, 1],
    [1, 1, 5, 5],
    [1, 1, 5, 5],
])


def matrix_from_dense(A, r_max: int = 5) -> SparseRatingMatrix:
    """Observed entries are the nonzero cells of A."""
    A = np.asarray(A)
    users, items = np.nonzero(A)
    triples = [(int(u), int(i), int(A[u, i])) for u, i in zip(users, items)]
    return build_matrix(triples, A.shape[0], A.shape[1], r_max)


def random_matrix(rng: np.random.Generator, m: int, n: int, density: float, r_max: int = 5) -> SparseRatingMatrix:
    """Random ratings at a random mask, with at least one observed entry."""
    mask = rng.random((m, n)) < density
    if not mask.any():
        mask[rng.integers(m), rng.integers(n)] = True
    A = np.where(mask, rng.integers(1, r_max + 1, size=(m, n)), 0)
    return matrix_from_dense(A, r_max)


def prediction_from_ratings(R) -> PredictionMatrix:
    """PredictionMatrix whose decoded ratings are exactly the integers in R."""
    R = np.asarray(R, dtype=np.float64)
    m, n = R.shape
    theta = np.tile(np.array([1.5, 2.5, 3.5, 4.5]), (m, 1))
    return PredictionMatrix(UB=R, V=np.eye(n), Theta=theta)


@pytest.fixture
def block_matrix() -> SparseRatingMatrix:
    """Fully observed 4x4 two-block matrix."""
    return matrix_from_dense(BLOCK_4x4)


@pytest.fixture
def block_matrix_8x8() -> SparseRatingMatrix:
    """Fully observed 8x8 two-block matrix (two 4-user x 4-item blocks of 5s)."""
    return matrix_from_dense(np.kron(BLOCK_4x4[::2, ::2], np.ones((4, 4), dtype=int)))


@pytest.fixture
def make_matrix():
    return matrix_from_dense


@pytest.fixture
def make_random_matrix():
    return random_matrix


@pytest.fixture
def make_prediction():
    return prediction_from_ratings


@pytest.fixture
def fresh_cache() -> SourceCache:
    return SourceCache()


@pytest.fixture
def toy_dataset(tmp_path):
    """The 4x4 block matrix as a headered comma file with 1-based ids."""
    path = tmp_path / "block.csv"
    lines = ["user,item,rating"]
    for u in range(4):
        for i in range(4):
            lines.append(f"{u + 1},{i + 1},{BLOCK_4x4[u, i]}")
    path.write_text("\n".join(lines) + "\n")
    return path


@pytest.fixture
def toy_config(tmp_path, toy_dataset, monkeypatch):
    """Writer for experiment configs over the toy dataset; returns the config path."""
    for var in ("CBT_OUTPUT_DIR", "CBT_SERIAL", "CBT_MAX_WORKERS", "CBT_DATA_DIR", "CBT_LOG_LEVEL"):
        monkeypatch.delenv(var, raising=False)

    def write(name: str = "toy.json", **overrides) -> str:
        data = {
            "source": {"path": toy_dataset.name, "format": "comma"},
            "target": {"path": toy_dataset.name, "format": "comma"},
            "cocluster": {"k1": 2, "k2": 2, "init": "kmeans", "max_iters": 500},
            "transfer": {"lambda": 0.1, "max_iters": 300},
            "split": {"train_fraction": 0.8, "seed": 0},
            "runs": 2,
            "method": "proposed",
            "output_dir": str(tmp_path / "out"),
        }
        for key, value in overrides.items():
            if isinstance(value, dict) and isinstance(data.get(key), dict):
                data[key] = {**data[key], **value}
            else:
                data[key] = value
        path = tmp_path / name
        path.write_text(json.dumps(data, indent=2))
        return str(path)

    return write
