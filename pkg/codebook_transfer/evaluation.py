"""
Evaluation Protocol
===================
Random holdout splits, RMSE/MAE, multi-run averaging and cluster-count
sweeps.

Each run splits the target with seed `split.seed + run`, fits the chosen
method on the train part and scores the held-out part. The source side
(tri-factorization, memberships, codebook) does not depend on the split,
so it is computed once per (source, co-clustering config, averaging mode)
and shared by every run and every method.
"""

import logging
import math
import threading
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Dict, Iterable, List, Optional, Protocol, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from .coclustering import CoClusterConfig, MembershipMatrix, TriFactorization, factorize
from .codebook import AveragingMode, Codebook, build_codebook
from .contract import (
    ColdStart,
    EvalReport,
    Method,
    RunArtifacts,
    RunResult,
    SweepPoint,
    validate_eval_report,
)
from .errors import ConfigError, EmptyTestSet, ShapeMismatch, TooFewEntries
from .hinge_transfer import TransferConfig, decode, fit, fit_baseline_mmmf
from .ratings import SparseRatingMatrix, observed_mean

logger = logging.getLogger(__name__)

DEFAULT_SWEEP = [25, 50, 75, 100, 125, 150, 175, 200]
SWEEP_MINIMUM_RANGE = (100, 150)
REFERENCE_TOLERANCE = 0.05
DEFAULT_CACHE_ENTRIES = 8

# Published (rmse, mae) per (source, target) preset pair and method.
REFERENCE_RESULTS: Dict[Tuple[str, str], Dict[str, Tuple[float, float]]] = {
    ("movielens-100k", "movielens-100k"): {
        "proposed": (0.9653, 0.6600),
        "baseline-mmmf": (0.9828, 0.6808),
    },
    ("movielens-100k", "movielens-1m"): {
        "proposed": (0.9123, 0.6134),
        "baseline-mmmf": (0.9361, 0.6402),
    },
    ("movielens-1m", "movielens-1m"): {
        "proposed": (0.9138, 0.6175),
        "baseline-mmmf": (0.9349, 0.6389),
    },
    ("movielens-1m", "goodbooks"): {
        "proposed": (0.9470, 0.6381),
        "baseline-mmmf": (0.9604, 0.6524),
    },
    ("douban-music", "douban-book"): {
        "proposed": (0.7785, 0.5022),
        "baseline-mmmf": (0.7976, 0.5414),
    },
}


class SplitSpec(BaseModel):
    """Train fraction and base seed of the random holdout."""
    model_config = ConfigDict(frozen=True, extra="forbid")

    train_fraction: float = Field(0.8, gt=0.0, lt=1.0)
    seed: int = 0


class Predictor(Protocol):
    def ratings_at(self, users: np.ndarray, items: np.ndarray) -> np.ndarray: ...


@dataclass(frozen=True)
class ConstantPredictor:
    """Predicts the same rating everywhere."""
    value: float

    def scores_at(self, users: np.ndarray, items: np.ndarray) -> np.ndarray:
        return np.full(len(users), self.value, dtype=np.float64)

    def ratings_at(self, users: np.ndarray, items: np.ndarray) -> np.ndarray:
        return self.scores_at(users, items)


def global_mean_predictor(train: SparseRatingMatrix) -> ConstantPredictor:
    return ConstantPredictor(observed_mean(train))


def split(Y: SparseRatingMatrix, spec: SplitSpec) -> Tuple[SparseRatingMatrix, SparseRatingMatrix]:
    """
    Uniform random partition of the observed triples.

    The train count is round-half-up of train_fraction * |Y|, kept within
    [1, |Y| - 1] so that neither side is empty.

    Raises:
        TooFewEntries: Y has fewer than two ratings
    """
    n = len(Y)
    if n < 2:
        raise TooFewEntries(f"cannot split {n} ratings into train and test", n=n)
    n_train = int(math.floor(spec.train_fraction * n + 0.5))
    n_train = min(max(n_train, 1), n - 1)
    perm = np.random.default_rng(spec.seed).permutation(n)
    return Y.subset(perm[:n_train]), Y.subset(perm[n_train:])


def _residuals(truth: SparseRatingMatrix, predicted: np.ndarray) -> np.ndarray:
    if len(truth) == 0:
        raise EmptyTestSet("no test ratings to score")
    return truth.ratings.astype(np.float64) - np.asarray(predicted, dtype=np.float64)


def _predict(truth: SparseRatingMatrix, pred: Predictor) -> np.ndarray:
    shape = getattr(pred, "shape", None)
    if shape is not None and tuple(shape) != truth.shape:
        raise ShapeMismatch(f"prediction covers {tuple(shape)}, truth is {truth.shape}")
    return pred.ratings_at(truth.users, truth.items)


def _rmse(residuals: np.ndarray) -> float:
    return float(np.sqrt(np.mean(residuals * residuals)))


def _mae(residuals: np.ndarray) -> float:
    return float(np.mean(np.abs(residuals)))


def rmse(truth: SparseRatingMatrix, pred: Predictor) -> float:
    """Root mean square error over the entries of `truth`."""
    if len(truth) == 0:
        raise EmptyTestSet("no test ratings to score")
    return _rmse(_residuals(truth, _predict(truth, pred)))


def mae(truth: SparseRatingMatrix, pred: Predictor) -> float:
    """Mean absolute error over the entries of `truth`."""
    if len(truth) == 0:
        raise EmptyTestSet("no test ratings to score")
    return _mae(_residuals(truth, _predict(truth, pred)))


@dataclass
class SourcePipeline:
    """Everything computed from the source matrix alone."""
    factorization: TriFactorization
    user_memberships: MembershipMatrix
    item_memberships: MembershipMatrix
    codebook: Codebook


class SourceCache:
    """
    Thread-safe LRU memo of source pipelines.

    Concurrent requests for the same key wait for a single computation;
    different keys are computed in parallel. At most `max_entries`
    pipelines are kept, the least recently used one is evicted first.
    """

    def __init__(self, max_entries: int = DEFAULT_CACHE_ENTRIES):
        if max_entries < 1:
            raise ConfigError(f"cache size must be at least 1, got {max_entries}", max_entries=max_entries)
        self.max_entries = max_entries
        self._lock = threading.Lock()
        self._key_locks: Dict[Tuple[str, str, str], threading.Lock] = {}
        self._entries: "OrderedDict[Tuple[str, str, str], SourcePipeline]" = OrderedDict()

    def get(
        self,
        source: SparseRatingMatrix,
        cfg: CoClusterConfig,
        mode: AveragingMode,
    ) -> SourcePipeline:
        key = (source.fingerprint(), cfg.model_dump_json(), AveragingMode(mode).value)
        with self._lock:
            key_lock = self._key_locks.setdefault(key, threading.Lock())
        with key_lock:
            with self._lock:
                hit = self._entries.get(key)
                if hit is not None:
                    self._entries.move_to_end(key)
            if hit is not None:
                logger.debug("source pipeline cache hit k1=%d k2=%d", cfg.k1, cfg.k2)
                return hit
            hit = build_source_pipeline(source, cfg, mode)
            with self._lock:
                self._entries[key] = hit
                while len(self._entries) > self.max_entries:
                    evicted, _ = self._entries.popitem(last=False)
                    self._key_locks.pop(evicted, None)
                    logger.debug("source pipeline cache evicted one entry (max %d)", self.max_entries)
            return hit

    def clear(self) -> None:
        with self._lock:
            self._entries.clear()
            self._key_locks.clear()

    def __len__(self) -> int:
        return len(self._entries)


SOURCE_CACHE = SourceCache()


def build_source_pipeline(
    source: SparseRatingMatrix,
    cfg: CoClusterConfig,
    mode: Union[AveragingMode, str] = AveragingMode.OBSERVED,
) -> SourcePipeline:
    """Factorize the source, binarize the memberships and build the codebook."""
    tri = factorize(source, cfg)
    Ps, Qs = tri.user_memberships(), tri.item_memberships()
    B = build_codebook(source, Ps, Qs, mode)
    return SourcePipeline(factorization=tri, user_memberships=Ps, item_memberships=Qs, codebook=B)


def protocol_echo(
    cocluster: CoClusterConfig,
    transfer: TransferConfig,
    split_spec: SplitSpec,
    runs: int,
    method: Union[Method, str],
    cold_start: Union[ColdStart, str],
    codebook_mode: Union[AveragingMode, str],
) -> Dict[str, Any]:
    """Flat section.key record of every knob a protocol run depends on."""
    echo: Dict[str, Any] = {}
    for section, model in (("cocluster", cocluster), ("transfer", transfer), ("split", split_spec)):
        for key, value in model.model_dump(by_alias=True).items():
            echo[f"{section}.{key}"] = value
    echo["runs"] = runs
    echo["method"] = Method(method).value
    echo["cold_start"] = ColdStart(cold_start).value
    echo["codebook_mode"] = AveragingMode(codebook_mode).value
    return echo


def _apply_cold_start(
    train: SparseRatingMatrix,
    test: SparseRatingMatrix,
    predicted: np.ndarray,
    fallback: float,
) -> np.ndarray:
    user_seen = np.bincount(train.users, minlength=train.n_users) > 0
    item_seen = np.bincount(train.items, minlength=train.n_items) > 0
    cold = ~(user_seen[test.users] & item_seen[test.items])
    if cold.any():
        logger.debug("%d test ratings fall back to the global mean", int(cold.sum()))
        predicted = predicted.astype(np.float64)
        predicted[cold] = fallback
    return predicted


def _run_once(
    run: int,
    target: SparseRatingMatrix,
    method: Method,
    pipeline: Optional[SourcePipeline],
    baseline_k: int,
    transfer: TransferConfig,
    split_spec: SplitSpec,
    cold_start: ColdStart,
) -> Tuple[RunResult, Optional[RunArtifacts]]:
    seed = split_spec.seed + run
    train, test = split(target, split_spec.model_copy(update={"seed": seed}))
    floor = global_mean_predictor(train)
    floor_resid = _residuals(test, floor.ratings_at(test.users, test.items))

    run_cfg = transfer.model_copy(update={"seed": transfer.seed + run})
    model = None
    scores = None
    if method is Method.GLOBAL_MEAN:
        predicted = floor.ratings_at(test.users, test.items)
        scores = predicted
        fitted = floor.ratings_at(train.users, train.items)
    else:
        if method is Method.PROPOSED:
            model = fit(train, pipeline.codebook, run_cfg)
        else:
            model = fit_baseline_mmmf(train, baseline_k, run_cfg)
        prediction = decode(model)
        scores = prediction.scores_at(test.users, test.items)
        predicted = prediction.ratings_at(test.users, test.items)
        fitted = prediction.ratings_at(train.users, train.items)
        if cold_start is ColdStart.GLOBAL_MEAN:
            predicted = _apply_cold_start(train, test, predicted, floor.value)

    resid = _residuals(test, predicted)
    result = RunResult(
        run=run,
        seed=seed,
        rmse=_rmse(resid),
        mae=_mae(resid),
        n_train=len(train),
        n_test=len(test),
        floor_rmse=_rmse(floor_resid),
        floor_mae=_mae(floor_resid),
        train_rmse=_rmse(_residuals(train, fitted)),
        final_objective=model.final_objective if model else None,
        n_iters=model.n_iters if model else None,
        unordered_thresholds=model.unordered_threshold_fraction() if model else None,
    )
    logger.info(
        "run %d (seed %d) %s: rmse=%.4f mae=%.4f floor_rmse=%.4f",
        run, seed, method.value, result.rmse, result.mae, result.floor_rmse,
    )

    artifacts = None
    if run == 0:
        artifacts = RunArtifacts(
            factorization=pipeline.factorization if pipeline else None,
            codebook=pipeline.codebook if pipeline else None,
            model=model,
            test_users=test.users,
            test_items=test.items,
            test_ratings=test.ratings,
            predicted=np.asarray(predicted, dtype=np.float64),
            scores=np.asarray(scores, dtype=np.float64),
        )
    return result, artifacts


def run_protocol(
    source: SparseRatingMatrix,
    target: SparseRatingMatrix,
    cocluster: CoClusterConfig,
    transfer: TransferConfig,
    split_spec: SplitSpec = SplitSpec(),
    runs: int = 5,
    method: Union[Method, str] = Method.PROPOSED,
    cold_start: Union[ColdStart, str] = ColdStart.MODEL,
    codebook_mode: Union[AveragingMode, str] = AveragingMode.OBSERVED,
    serial: bool = True,
    max_workers: Optional[int] = None,
    config_echo: Optional[Dict[str, Any]] = None,
    cache: Optional[SourceCache] = None,
) -> EvalReport:
    """
    Split, fit, decode and score `runs` times and average the scores.

    The baseline method fits the target alone with a k1 x k1 identity
    codebook; the global-mean method predicts the train mean everywhere.
    The global-mean floor is scored on the same splits for every method.
    """
    if runs < 1:
        raise ConfigError(f"runs must be at least 1, got {runs}", runs=runs)
    method = Method(method)
    cold_start = ColdStart(cold_start)
    cache = cache if cache is not None else SOURCE_CACHE

    pipeline = None
    if method is Method.PROPOSED:
        pipeline = cache.get(source, cocluster, AveragingMode(codebook_mode))

    def job(run: int):
        return _run_once(
            run, target, method, pipeline, cocluster.k1, transfer, split_spec, cold_start,
        )

    logger.info("Running %d %s run(s)%s", runs, method.value, "" if serial else " in parallel")
    if serial or runs == 1:
        outcomes = [job(r) for r in range(runs)]
    else:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            outcomes = list(pool.map(job, range(runs)))

    per_run = [result for result, _ in outcomes]
    report = EvalReport(
        method=method,
        rmse=float(np.mean([r.rmse for r in per_run])),
        mae=float(np.mean([r.mae for r in per_run])),
        per_run=per_run,
        n_test=per_run[0].n_test,
        floor_rmse=float(np.mean([r.floor_rmse for r in per_run])),
        floor_mae=float(np.mean([r.floor_mae for r in per_run])),
        config_echo=dict(config_echo) if config_echo else protocol_echo(
            cocluster, transfer, split_spec, runs, method, cold_start, codebook_mode,
        ),
        artifacts=outcomes[0][1],
    )

    for problem in validate_eval_report(report, expected_runs=runs):
        logger.warning("report check: %s", problem)

    logger.info(
        "%s over %d run(s): rmse=%.4f mae=%.4f (global mean rmse=%.4f mae=%.4f)",
        method.value, runs, report.rmse, report.mae, report.floor_rmse, report.floor_mae,
    )
    return report


def cluster_sweep(
    source: SparseRatingMatrix,
    target: SparseRatingMatrix,
    k_values: Iterable[int],
    cocluster: CoClusterConfig,
    transfer: TransferConfig,
    split_spec: SplitSpec = SplitSpec(),
    runs: int = 5,
    method: Union[Method, str] = Method.PROPOSED,
    cold_start: Union[ColdStart, str] = ColdStart.MODEL,
    codebook_mode: Union[AveragingMode, str] = AveragingMode.OBSERVED,
    serial: bool = True,
    max_workers: Optional[int] = None,
    config_echo: Optional[Dict[str, Any]] = None,
    cache: Optional[SourceCache] = None,
) -> List[SweepPoint]:
    """One report per k with k1 = k2 = k. Duplicate k values are evaluated independently."""
    k_values = [int(k) for k in k_values]
    if not k_values:
        raise ConfigError("cluster sweep needs at least one k")
    for k in k_values:
        if k < 1:
            raise ConfigError(f"cluster count must be positive, got {k}", k=k)

    def point(k: int) -> SweepPoint:
        cfg = cocluster.model_copy(update={"k1": k, "k2": k})
        report = run_protocol(
            source, target, cfg, transfer, split_spec, runs,
            method=method,
            cold_start=cold_start,
            codebook_mode=codebook_mode,
            serial=True,
            config_echo=_sweep_echo(config_echo, k) if config_echo else None,
            cache=cache,
        )
        return SweepPoint(k=k, report=report)

    logger.info("Sweeping k over %s", k_values)
    if serial or len(k_values) == 1:
        return [point(k) for k in k_values]
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        return list(pool.map(point, k_values))


def _sweep_echo(echo: Optional[Dict[str, Any]], k: int) -> Dict[str, Any]:
    out = dict(echo or {})
    out["cocluster.k1"] = int(k)
    out["cocluster.k2"] = int(k)
    return out


def sweep_minimum(points: List[SweepPoint]) -> SweepPoint:
    """Sweep point with the lowest averaged RMSE (first one on ties)."""
    return min(points, key=lambda p: p.report.rmse)


def check_sweep_shape(points: List[SweepPoint], expected: Tuple[int, int] = SWEEP_MINIMUM_RANGE) -> bool:
    """Soft check that the RMSE minimum sits inside `expected`; logs instead of failing."""
    best = sweep_minimum(points)
    ok = expected[0] <= best.k <= expected[1]
    if not ok:
        logger.warning(
            "sweep minimum at k=%d (rmse %.4f) lies outside [%d, %d]",
            best.k, best.report.rmse, expected[0], expected[1],
        )
    return ok


def check_against_reference(
    report: EvalReport,
    source_preset: Optional[str],
    target_preset: Optional[str],
    tolerance: float = REFERENCE_TOLERANCE,
) -> Optional[bool]:
    """
    Compare a report with the published numbers for the same preset pair.

    Returns None when no reference exists, otherwise whether both metrics
    are within `tolerance`. A miss is logged as a warning.
    """
    ref = REFERENCE_RESULTS.get((source_preset, target_preset), {}).get(report.method.value)
    if ref is None:
        return None
    ref_rmse, ref_mae = ref
    ok = abs(report.rmse - ref_rmse) <= tolerance and abs(report.mae - ref_mae) <= tolerance
    if not ok:
        logger.warning(
            "%s on %s -> %s: rmse=%.4f mae=%.4f, reference rmse=%.4f mae=%.4f (tolerance %.2f)",
            report.method.value, source_preset, target_preset,
            report.rmse, report.mae, ref_rmse, ref_mae, tolerance,
        )
    return ok
