# Cross-domain codebook transfer for rating prediction
# Source co-clustering, codebook construction, hinge-loss transfer and evaluation

from .codebook import AveragingMode, Codebook, build_codebook, codebook_reconstruction
from .coclustering import (
    CoClusterConfig,
    MembershipMatrix,
    TriFactorization,
    binarize,
    factorize,
    onmtf_objective,
)
from .contract import DatasetStats, EvalReport, Method, RunResult, SweepPoint, validate_eval_report
from .errors import TransferError
from .evaluation import SplitSpec, cluster_sweep, mae, rmse, run_protocol, split
from .hinge_transfer import (
    PredictionMatrix,
    TransferConfig,
    TransferModel,
    decode,
    fit,
    fit_baseline_mmmf,
    gradients,
    objective,
)
from .ingestion import DatasetSpec, load, stats, write_csv
from .ratings import RatingTriple, SparseRatingMatrix, build_matrix, from_arrays, observed_mean
