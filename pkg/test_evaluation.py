#!/usr/bin/env python3
"""
Test Evaluation Protocol
========================
Splitting, error metrics, the multi-run protocol and cluster sweeps.
"""

import logging
import os
import sys

import numpy as np
import pytest

sys.path.insert(0, '.')

from codebook_transfer import evaluation
from codebook_transfer.codebook import AveragingMode
from codebook_transfer.coclustering import CoClusterConfig
from codebook_transfer.contract import EvalReport, Method, RunResult, SweepPoint, validate_eval_report
from codebook_transfer.errors import ConfigError, EmptyTestSet, ShapeMismatch, TooFewEntries
from codebook_transfer.evaluation import (
    DEFAULT_SWEEP,
    ConstantPredictor,
    SourceCache,
    SplitSpec,
    _apply_cold_start,
    check_against_reference,
    check_sweep_shape,
    cluster_sweep,
    global_mean_predictor,
    mae,
    rmse,
    run_protocol,
    split,
)
from codebook_transfer.hinge_transfer import TransferConfig
from codebook_transfer.ingestion import DatasetSpec, load
from codebook_transfer.ratings import build_matrix

FAST_COCLUSTER = CoClusterConfig(k1=2, k2=2, max_iters=60)
FAST_TRANSFER = TransferConfig(max_iters=60)


def _line(ratings):
    """1 x n matrix holding `ratings` in order."""
    return build_matrix([(0, i, r) for i, r in enumerate(ratings)], 1, len(ratings), 5)


def test_split_counts():
    cases = [
        # (n ratings, fraction, expected train, expected test, description)
        (10, 0.8, 8, 2, "default 80/20"),
        (4, 0.5, 2, 2, "even halves"),
        (5, 0.5, 3, 2, "half rounds up"),
        (3, 0.1, 1, 2, "train never empty"),
        (3, 0.9, 2, 1, "test never empty"),
    ]
    for n, fraction, n_train, n_test, description in cases:
        train, test = split(_line([1 + i % 5 for i in range(n)]), SplitSpec(train_fraction=fraction, seed=3))
        assert (len(train), len(test)) == (n_train, n_test), description


def test_split_is_a_partition(make_random_matrix):
    rng = np.random.default_rng(1)
    for seed in range(20):
        Y = make_random_matrix(rng, 8, 7, 0.5)
        if len(Y) < 2:
            continue
        train, test = split(Y, SplitSpec(seed=seed))
        cells = lambda M: set(zip(M.users.tolist(), M.items.tolist()))
        assert cells(train) | cells(test) == cells(Y)
        assert not cells(train) & cells(test)
        assert train.shape == test.shape == Y.shape


def test_split_determinism():
    Y = _line([1, 2, 3, 4, 5, 1, 2, 3, 4, 5])
    a_train, _ = split(Y, SplitSpec(seed=42))
    b_train, _ = split(Y, SplitSpec(seed=42))
    assert a_train.fingerprint() == b_train.fingerprint()

    seen = {split(Y, SplitSpec(seed=seed))[0].fingerprint() for seed in range(10)}
    assert len(seen) > 1


def test_split_too_few_entries():
    with pytest.raises(TooFewEntries):
        split(_line([4]), SplitSpec())


def test_metrics(make_prediction):
    cases = [
        # (truth, predicted, rmse, mae, description)
        ([3, 5], [3, 5], 0.0, 0.0, "exact prediction"),
        ([3, 5], [4, 4], 1.0, 1.0, "symmetric unit errors"),
        ([2], [5], 3.0, 3.0, "single entry"),
        ([1], [5], 4.0, 4.0, "largest error on a 5-point scale"),
        ([1, 1, 1, 5], [1, 1, 1, 1], 2.0, 1.0, "one large error"),
    ]
    for truth, predicted, want_rmse, want_mae, description in cases:
        pred = make_prediction([predicted])
        assert rmse(_line(truth), pred) == pytest.approx(want_rmse), description
        assert mae(_line(truth), pred) == pytest.approx(want_mae), description


def test_metrics_errors(make_prediction):
    empty = build_matrix([], 1, 2, 5)
    with pytest.raises(EmptyTestSet):
        rmse(empty, make_prediction([[1, 1]]))
    with pytest.raises(EmptyTestSet):
        mae(empty, ConstantPredictor(3.0))
    with pytest.raises(ShapeMismatch):
        rmse(_line([1, 2]), make_prediction([[1, 2, 3]]))


def test_rmse_dominates_mae(make_prediction):
    rng = np.random.default_rng(99)
    for _ in range(1000):
        n = int(rng.integers(1, 12))
        truth = _line(rng.integers(1, 6, size=n).tolist())
        pred = make_prediction([rng.integers(1, 6, size=n)])
        assert rmse(truth, pred) + 1e-12 >= mae(truth, pred) >= 0


def test_global_mean_predictor():
    train = _line([1, 2, 3, 5])
    pred = global_mean_predictor(train)
    assert pred.value == 2.75
    assert list(pred.ratings_at(np.array([0, 0]), np.array([1, 2]))) == [2.75, 2.75]


def test_cold_start_substitution():
    train = build_matrix([(0, 0, 4), (0, 1, 2)], 2, 3, 5)
    test = build_matrix([(0, 1, 2), (1, 0, 5), (0, 2, 1)], 2, 3, 5)
    predicted = np.array([2.0, 1.0, 1.0])
    out = _apply_cold_start(train, test, predicted, 3.0)
    # canonical test order: (0,1), (0,2), (1,0); item 2 and user 1 are unseen
    assert list(out) == [2.0, 3.0, 3.0]


def test_run_protocol_averages_runs(block_matrix_8x8, fresh_cache):
    report = run_protocol(
        block_matrix_8x8, block_matrix_8x8, FAST_COCLUSTER, FAST_TRANSFER,
        SplitSpec(seed=10), runs=5, cache=fresh_cache,
    )
    assert len(report.per_run) == 5
    assert [r.seed for r in report.per_run] == [10, 11, 12, 13, 14]
    assert report.rmse == pytest.approx(np.mean([r.rmse for r in report.per_run]), abs=1e-12)
    assert report.mae == pytest.approx(np.mean([r.mae for r in report.per_run]), abs=1e-12)
    assert report.n_test == 13
    assert validate_eval_report(report, expected_runs=5) == []
    assert report.config_echo["cocluster.k1"] == 2
    assert report.config_echo["transfer.lambda"] == FAST_TRANSFER.lambda_


def test_source_factorized_once(block_matrix_8x8, fresh_cache):
    run_protocol(block_matrix_8x8, block_matrix_8x8, FAST_COCLUSTER, FAST_TRANSFER, runs=3, cache=fresh_cache)
    run_protocol(block_matrix_8x8, block_matrix_8x8, FAST_COCLUSTER, FAST_TRANSFER, runs=2, cache=fresh_cache)
    assert len(fresh_cache) == 1


def test_run_protocol_is_deterministic(block_matrix_8x8):
    reports = [
        run_protocol(block_matrix_8x8, block_matrix_8x8, FAST_COCLUSTER, FAST_TRANSFER,
                     runs=2, cache=SourceCache())
        for _ in range(2)
    ]
    assert reports[0].to_dict() == reports[1].to_dict()


def test_parallel_matches_serial(block_matrix_8x8, fresh_cache):
    serial = run_protocol(block_matrix_8x8, block_matrix_8x8, FAST_COCLUSTER, FAST_TRANSFER,
                          runs=3, serial=True, cache=fresh_cache)
    parallel = run_protocol(block_matrix_8x8, block_matrix_8x8, FAST_COCLUSTER, FAST_TRANSFER,
                            runs=3, serial=False, max_workers=3, cache=fresh_cache)
    assert serial.to_dict() == parallel.to_dict()


def test_block_self_transfer_beats_global_mean(block_matrix_8x8, fresh_cache):
    cocluster = CoClusterConfig(k1=2, k2=2, init="kmeans", max_iters=500)
    transfer = TransferConfig(lambda_=0.1, max_iters=500)
    report = run_protocol(block_matrix_8x8, block_matrix_8x8, cocluster, transfer,
                          runs=2, cache=fresh_cache)
    assert report.rmse < report.floor_rmse
    assert report.artifacts.codebook.shape == (2, 2)
    assert report.artifacts.model is not None


def test_block_self_transfer_is_exact(block_matrix, fresh_cache):
    cocluster = CoClusterConfig(k1=2, k2=2, init="kmeans", max_iters=2000)
    transfer = TransferConfig(lambda_=0.1, max_iters=2000)
    for seed in range(5):
        report = run_protocol(block_matrix, block_matrix, cocluster, transfer,
                              split_spec=SplitSpec(seed=seed), runs=1, cache=fresh_cache)
        assert report.rmse == 0.0, f"seed {seed}"
        assert report.mae == 0.0, f"seed {seed}"


def test_train_rmse_does_not_grow_with_train_fraction(block_matrix_8x8, fresh_cache):
    cocluster = CoClusterConfig(k1=2, k2=2, init="kmeans", max_iters=500)
    transfer = TransferConfig(lambda_=0.1, max_iters=500)
    train_rmse = []
    for fraction in (0.5, 0.7, 0.9):
        report = run_protocol(block_matrix_8x8, block_matrix_8x8, cocluster, transfer,
                              split_spec=SplitSpec(train_fraction=fraction), runs=2, cache=fresh_cache)
        assert all(r.train_rmse is not None for r in report.per_run)
        train_rmse.append(float(np.mean([r.train_rmse for r in report.per_run])))
    assert all(b <= a + 1e-9 for a, b in zip(train_rmse, train_rmse[1:])), train_rmse


def test_global_mean_train_rmse_is_the_train_spread(fresh_cache):
    Y = _line([1, 5, 1, 5, 1, 5, 1, 5, 1, 5])
    report = run_protocol(Y, Y, FAST_COCLUSTER, FAST_TRANSFER, runs=1, method="global-mean", cache=fresh_cache)
    run = report.per_run[0]
    train, _ = split(Y, SplitSpec(seed=run.seed))
    assert run.train_rmse == pytest.approx(float(np.std(train.ratings)))


def test_source_cache_evicts_least_recently_used(block_matrix, monkeypatch):
    built = []
    original = evaluation.build_source_pipeline

    def counting(source, cfg, mode):
        built.append(cfg.k1)
        return original(source, cfg, mode)

    monkeypatch.setattr(evaluation, "build_source_pipeline", counting)
    cache = SourceCache(max_entries=2)
    configs = {k: CoClusterConfig(k1=k, k2=k, max_iters=5) for k in (1, 2, 3)}
    cases = [
        # (k requested, cache size after, pipelines built so far, description)
        (1, 1, [1], "first request builds"),
        (2, 2, [1, 2], "second key fits"),
        (1, 2, [1, 2], "hit refreshes k=1"),
        (3, 2, [1, 2, 3], "k=2 is least recent and evicted"),
        (1, 2, [1, 2, 3], "k=1 survived"),
        (2, 2, [1, 2, 3, 2], "k=2 rebuilt"),
    ]
    for k, size, expected, description in cases:
        cache.get(block_matrix, configs[k], AveragingMode.OBSERVED)
        assert len(cache) == size, description
        assert built == expected, description

    with pytest.raises(ConfigError):
        SourceCache(max_entries=0)


def test_global_mean_method_reports_the_floor(block_matrix_8x8, fresh_cache):
    report = run_protocol(block_matrix_8x8, block_matrix_8x8, FAST_COCLUSTER, FAST_TRANSFER,
                          runs=2, method="global-mean", cache=fresh_cache)
    assert report.method is Method.GLOBAL_MEAN
    assert report.rmse == report.floor_rmse
    assert report.mae == report.floor_mae
    assert len(fresh_cache) == 0


def test_baseline_ignores_the_source(block_matrix_8x8, fresh_cache):
    empty_source = build_matrix([], 3, 3, 5)
    report = run_protocol(empty_source, block_matrix_8x8, FAST_COCLUSTER, FAST_TRANSFER,
                          runs=1, method=Method.BASELINE_MMMF, cache=fresh_cache)
    assert report.artifacts.model.B.shape == (2, 2)
    assert report.per_run[0].n_iters is not None


def test_methods_share_splits(block_matrix_8x8, fresh_cache):
    reports = [
        run_protocol(block_matrix_8x8, block_matrix_8x8, FAST_COCLUSTER, FAST_TRANSFER,
                     runs=2, method=method, cache=fresh_cache)
        for method in Method
    ]
    floors = {tuple(r.floor_rmse for r in report.per_run) for report in reports}
    assert len(floors) == 1


def test_run_protocol_rejects_zero_runs(block_matrix):
    with pytest.raises(ConfigError):
        run_protocol(block_matrix, block_matrix, FAST_COCLUSTER, FAST_TRANSFER, runs=0)


def test_cluster_sweep(block_matrix_8x8, fresh_cache):
    points = cluster_sweep(block_matrix_8x8, block_matrix_8x8, [2], FAST_COCLUSTER, FAST_TRANSFER,
                           runs=1, cache=fresh_cache)
    assert len(points) == 1 and points[0].k == 2

    points = cluster_sweep(block_matrix_8x8, block_matrix_8x8, [1, 2, 2], FAST_COCLUSTER, FAST_TRANSFER,
                           runs=1, serial=False, cache=fresh_cache)
    assert [p.k for p in points] == [1, 2, 2]
    assert points[1].report.to_dict() == points[2].report.to_dict()
    assert points[0].report.config_echo["cocluster.k1"] == 1


def test_cluster_sweep_needs_k(block_matrix):
    with pytest.raises(ConfigError):
        cluster_sweep(block_matrix, block_matrix, [], FAST_COCLUSTER, FAST_TRANSFER)


def _report(rmse_value, mae_value=None, method=Method.PROPOSED):
    mae_value = rmse_value / 2 if mae_value is None else mae_value
    run = RunResult(run=0, seed=0, rmse=rmse_value, mae=mae_value, n_train=8, n_test=2,
                    floor_rmse=1.5, floor_mae=1.0)
    return EvalReport(method=method, rmse=rmse_value, mae=mae_value, per_run=[run], n_test=2,
                      floor_rmse=1.5, floor_mae=1.0, config_echo={"runs": 1})


def test_soft_checks_only_log(caplog):
    points = [SweepPoint(k=k, report=_report(v)) for k, v in [(50, 0.95), (125, 0.91), (200, 0.93)]]
    assert check_sweep_shape(points)

    points = [SweepPoint(k=k, report=_report(v)) for k, v in [(25, 0.90), (125, 0.91)]]
    with caplog.at_level(logging.WARNING):
        assert not check_sweep_shape(points)
    assert "outside" in caplog.text

    assert check_against_reference(_report(0.92, 0.62), "movielens-100k", "movielens-1m")
    with caplog.at_level(logging.WARNING):
        assert not check_against_reference(_report(1.2), "movielens-100k", "movielens-1m")
    assert check_against_reference(_report(1.2), "goodbooks", "movielens-1m") is None


def test_validate_eval_report():
    good = _report(1.0)
    assert validate_eval_report(good, expected_runs=1) == []

    bad = _report(1.0)
    bad.per_run[0].mae = 2.0
    bad.rmse = 3.0
    problems = validate_eval_report(bad, expected_runs=2)
    assert any("Expected 2 runs" in p for p in problems)
    assert any("below mae" in p for p in problems)
    assert any("mean of the runs" in p for p in problems)


@pytest.mark.skipif(not os.environ.get("CBT_ML100K"), reason="CBT_ML100K not set")
def test_movielens_100k_self_transfer(fresh_cache):
    Y = load(DatasetSpec(path=os.environ["CBT_ML100K"], preset="movielens-100k"))
    cocluster = CoClusterConfig(k1=125, k2=125, max_iters=200)
    transfer = TransferConfig(lambda_=0.5, max_iters=500)
    report = run_protocol(Y, Y, cocluster, transfer, runs=5, serial=False, cache=fresh_cache)
    assert report.rmse < 1.05
    assert report.rmse < report.floor_rmse
    check_against_reference(report, "movielens-100k", "movielens-100k")


@pytest.mark.skipif(not (os.environ.get("CBT_ML100K") and os.environ.get("CBT_ML1M")),
                    reason="CBT_ML100K and CBT_ML1M not set")
def test_movielens_transfer_beats_baseline(fresh_cache):
    source = load(DatasetSpec(path=os.environ["CBT_ML100K"], preset="movielens-100k"))
    target = load(DatasetSpec(path=os.environ["CBT_ML1M"], preset="movielens-1m"))
    cocluster = CoClusterConfig(k1=125, k2=125, max_iters=200)
    transfer = TransferConfig(lambda_=0.5, max_iters=500)
    reports = {
        method: run_protocol(source, target, cocluster, transfer, runs=5, method=method,
                             serial=False, cache=fresh_cache)
        for method in (Method.PROPOSED, Method.BASELINE_MMMF)
    }
    proposed, baseline = reports[Method.PROPOSED], reports[Method.BASELINE_MMMF]
    # same seeds, same splits
    assert [r.floor_rmse for r in proposed.per_run] == [r.floor_rmse for r in baseline.per_run]
    assert proposed.rmse <= baseline.rmse
    for report in reports.values():
        check_against_reference(report, "movielens-100k", "movielens-1m")


@pytest.mark.skipif(not os.environ.get("CBT_ML100K"), reason="CBT_ML100K not set")
def test_movielens_100k_cluster_sweep(fresh_cache):
    Y = load(DatasetSpec(path=os.environ["CBT_ML100K"], preset="movielens-100k"))
    cocluster = CoClusterConfig(max_iters=200)
    transfer = TransferConfig(lambda_=0.5, max_iters=500)
    points = cluster_sweep(Y, Y, DEFAULT_SWEEP, cocluster, transfer, runs=1,
                           serial=False, cache=fresh_cache)
    assert [p.k for p in points] == DEFAULT_SWEEP
    assert all(p.report.rmse < p.report.floor_rmse for p in points)
    # where the minimum lands is only logged
    check_sweep_shape(points)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
