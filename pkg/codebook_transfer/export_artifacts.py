"""
Export Artifacts
================
Writes experiment results to an output directory.

Exports:
- report.txt          key=value summary plus the resolved config
- runs.csv            one row per run
- sweep.csv           k, rmse, mae
- codebook.csv        B, plus codebook_counts.csv with per-block rating counts
- model_*.csv         U, V, Theta of the first run, with model_header.txt
- *_trace.csv         objective per iteration
- predictions.csv     user, item, rating, predicted, score on the first test split

Nothing written here carries a timestamp, so identical inputs give
byte-identical files.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np
import pandas as pd

from .codebook import Codebook
from .coclustering import TriFactorization
from .contract import DatasetStats, EvalReport, SweepPoint
from .hinge_transfer import TransferModel

logger = logging.getLogger(__name__)


@dataclass
class ExportConfig:
    """Configuration for exports."""
    include_model: bool = True
    include_traces: bool = True
    include_predictions: bool = True
    float_format: str = "%.10g"


def _format_value(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return f"{value:.10g}"
    return str(value)


def key_value_lines(values: Dict[str, Any], prefix: str = "") -> List[str]:
    """Sorted `prefix.key=value` lines."""
    head = f"{prefix}." if prefix else ""
    return [f"{head}{key}={_format_value(values[key])}" for key in sorted(values)]


class ArtifactExporter:
    """
    Writes reports, tables and matrices for one experiment directory.
    """

    def __init__(self, output_dir: Union[str, Path], config: Optional[ExportConfig] = None):
        self.output_dir = Path(output_dir)
        self.config = config or ExportConfig()

    def _path(self, name: str) -> Path:
        self.output_dir.mkdir(parents=True, exist_ok=True)
        return self.output_dir / name

    def _write_text(self, name: str, lines: List[str]) -> Path:
        path = self._path(name)
        path.write_text("\n".join(lines) + "\n")
        logger.debug("wrote %s", path)
        return path

    def _write_frame(self, name: str, frame: pd.DataFrame) -> Path:
        path = self._path(name)
        frame.to_csv(path, index=False, float_format=self.config.float_format)
        logger.debug("wrote %s", path)
        return path

    def _write_matrix(self, name: str, A: np.ndarray, fmt: Optional[str] = None) -> Path:
        path = self._path(name)
        np.savetxt(path, np.atleast_2d(A), delimiter=",", fmt=fmt or self.config.float_format)
        logger.debug("wrote %s", path)
        return path

    def report_lines(self, report: EvalReport) -> List[str]:
        """Result block followed by the config echo, both sorted by key."""
        summary = report.to_dict()
        result = {k: v for k, v in summary.items() if k not in ("per_run", "config_echo")}
        lines = key_value_lines(result, "result")
        for run in report.per_run:
            lines += key_value_lines(run.to_dict(), f"run.{run.run}")
        lines += key_value_lines(report.config_echo, "config")
        return lines

    def write_report(self, report: EvalReport, name: str = "report.txt") -> Path:
        return self._write_text(name, self.report_lines(report))

    def write_runs(self, report: EvalReport, name: str = "runs.csv") -> Path:
        return self._write_frame(name, pd.DataFrame([r.to_dict() for r in report.per_run]))

    def write_sweep(self, points: List[SweepPoint], name: str = "sweep.csv") -> Path:
        frame = pd.DataFrame([p.to_dict() for p in points], columns=["k", "rmse", "mae"])
        return self._write_frame(name, frame)

    def write_codebook(self, codebook: Codebook, name: str = "codebook.csv") -> List[Path]:
        stem = Path(name).stem
        return [
            self._write_matrix(name, codebook.B),
            self._write_matrix(f"{stem}_counts.csv", codebook.block_counts, fmt="%d"),
            self._write_text(f"{stem}_header.txt", key_value_lines(codebook.to_dict())),
        ]

    def write_model(self, model: TransferModel) -> List[Path]:
        header = model.to_dict()
        return [
            self._write_matrix("model_U.csv", model.U),
            self._write_matrix("model_V.csv", model.V),
            self._write_matrix("model_Theta.csv", model.Theta),
            self._write_text("model_header.txt", key_value_lines(header)),
        ]

    def write_trace(self, trace: List[float], name: str) -> Path:
        frame = pd.DataFrame({"iteration": np.arange(len(trace)), "objective": trace})
        return self._write_frame(name, frame)

    def write_predictions(self, report: EvalReport, name: str = "predictions.csv") -> Optional[Path]:
        art = report.artifacts
        if art is None or art.test_users is None:
            return None
        frame = pd.DataFrame({
            "user": art.test_users,
            "item": art.test_items,
            "rating": art.test_ratings,
            "predicted": art.predicted,
            "score": art.scores,
        })
        return self._write_frame(name, frame)

    def write_stats(self, stats: DatasetStats, name: str = "stats.txt") -> Path:
        return self._write_text(name, stats.to_lines())

    def export_run(self, report: EvalReport) -> List[Path]:
        """Every artifact of a `run`: report, runs table, codebook, model, traces, predictions."""
        written = [self.write_report(report), self.write_runs(report)]
        art = report.artifacts
        if art is not None:
            if art.codebook is not None:
                written += self.write_codebook(art.codebook)
            if self.config.include_model and art.model is not None:
                written += self.write_model(art.model)
            if self.config.include_traces:
                if isinstance(art.factorization, TriFactorization):
                    written.append(self.write_trace(art.factorization.objective_trace, "cocluster_trace.csv"))
                if art.model is not None:
                    written.append(self.write_trace(art.model.objective_trace, "transfer_trace.csv"))
            if self.config.include_predictions:
                path = self.write_predictions(report)
                if path is not None:
                    written.append(path)
        logger.info("Exported %d files to %s", len(written), self.output_dir)
        return written

    def export_sweep(self, points: List[SweepPoint]) -> List[Path]:
        written = [self.write_sweep(points)]
        for p in points:
            written.append(self.write_report(p.report, name=f"report_k{p.k}.txt"))
        logger.info("Exported sweep over %d cluster counts to %s", len(points), self.output_dir)
        return written

    def export_codebook(self, codebook: Codebook, factorization: Optional[TriFactorization] = None) -> List[Path]:
        written = self.write_codebook(codebook)
        if factorization is not None and self.config.include_traces:
            written.append(self.write_trace(factorization.objective_trace, "cocluster_trace.csv"))
        return written
