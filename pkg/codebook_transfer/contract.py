"""
Result Contract
===============
Standard result structures produced by the evaluation protocol.
Every report renders to a flat dictionary so exporters and tests can
consume it without knowing how it was computed.
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional

import numpy as np


class Method(str, Enum):
    PROPOSED = "proposed"
    BASELINE_MMMF = "baseline-mmmf"
    GLOBAL_MEAN = "global-mean"


class ColdStart(str, Enum):
    MODEL = "model"
    GLOBAL_MEAN = "global_mean"


@dataclass
class DatasetStats:
    """Size and density of a loaded rating matrix."""
    n_users: int
    n_items: int
    n_observed: int
    observed_percentage: float
    mean_rating: Optional[float] = None

    def to_dict(self) -> dict:
        return {
            "n_users": self.n_users,
            "n_items": self.n_items,
            "n_observed": self.n_observed,
            "observed_percentage": self.observed_percentage,
            "mean_rating": self.mean_rating,
        }

    def to_lines(self) -> List[str]:
        """Fixed key=value block."""
        return [
            f"n_users={self.n_users}",
            f"n_items={self.n_items}",
            f"n_observed={self.n_observed}",
            f"observed_percentage={self.observed_percentage:.2f}",
            f"mean_rating={'' if self.mean_rating is None else f'{self.mean_rating:.4f}'}",
        ]


@dataclass
class RunResult:
    """Scores of one seeded train/test run."""
    run: int
    seed: int
    rmse: float
    mae: float
    n_train: int
    n_test: int
    floor_rmse: float
    floor_mae: float
    final_objective: Optional[float] = None
    train_rmse: Optional[float] = None
    n_iters: Optional[int] = None
    unordered_thresholds: Optional[float] = None

    def to_dict(self) -> dict:
        return {
            "run": self.run,
            "seed": self.seed,
            "rmse": self.rmse,
            "mae": self.mae,
            "n_train": self.n_train,
            "n_test": self.n_test,
            "floor_rmse": self.floor_rmse,
            "floor_mae": self.floor_mae,
            "final_objective": self.final_objective,
            "train_rmse": self.train_rmse,
            "n_iters": self.n_iters,
            "unordered_thresholds": self.unordered_thresholds,
        }


@dataclass
class RunArtifacts:
    """Objects kept from the first run for export; never serialized in reports."""
    factorization: Any = None
    codebook: Any = None
    model: Any = None
    test_users: Optional[np.ndarray] = None
    test_items: Optional[np.ndarray] = None
    test_ratings: Optional[np.ndarray] = None
    predicted: Optional[np.ndarray] = None
    scores: Optional[np.ndarray] = None


@dataclass
class EvalReport:
    """Averaged RMSE/MAE over repeated random holdout runs."""
    method: Method
    rmse: float
    mae: float
    per_run: List[RunResult]
    n_test: int
    floor_rmse: float
    floor_mae: float
    config_echo: Dict[str, Any] = field(default_factory=dict)
    artifacts: Optional[RunArtifacts] = None

    def to_dict(self) -> dict:
        return {
            "method": self.method.value,
            "rmse": self.rmse,
            "mae": self.mae,
            "runs": len(self.per_run),
            "n_test": self.n_test,
            "floor_rmse": self.floor_rmse,
            "floor_mae": self.floor_mae,
            "per_run": [r.to_dict() for r in self.per_run],
            "config_echo": dict(self.config_echo),
        }


@dataclass
class SweepPoint:
    """One cluster count of a k-sweep (k1 = k2 = k)."""
    k: int
    report: EvalReport

    def to_dict(self) -> dict:
        return {"k": self.k, "rmse": self.report.rmse, "mae": self.report.mae}


def validate_eval_report(report: EvalReport, expected_runs: Optional[int] = None) -> List[str]:
    """
    Check a report against its structural guarantees.
    Returns list of validation errors (empty if valid).
    """
    errors = []

    if not report.per_run:
        errors.append("At least one run required")

    if expected_runs is not None and len(report.per_run) != expected_runs:
        errors.append(f"Expected {expected_runs} runs, got {len(report.per_run)}")

    for r in report.per_run:
        if r.rmse + 1e-12 < r.mae:
            errors.append(f"Run {r.run}: rmse {r.rmse} below mae {r.mae}")
        if r.n_test <= 0:
            errors.append(f"Run {r.run}: empty test split")

    if report.per_run:
        mean_rmse = float(np.mean([r.rmse for r in report.per_run]))
        if not np.isclose(mean_rmse, report.rmse, rtol=0, atol=1e-12):
            errors.append("Reported rmse is not the mean of the runs")

    if not report.config_echo:
        errors.append("Report does not embed its configuration")

    return errors
