"""
Experiment Configuration
========================
A single JSON document describes one experiment:

    {
      "source":    {"path": "ml-100k/u.data", "preset": "movielens-100k"},
      "target":    {"path": "ml-1m/ratings.dat", "preset": "movielens-1m"},
      "cocluster": {"k1": 125, "k2": 125},
      "transfer":  {"lambda": 0.5, "max_iters": 500},
      "split":     {"train_fraction": 0.8, "seed": 0},
      "runs": 5,
      "method": "proposed",
      "output_dir": "output/ml100k-ml1m"
    }

Precedence: command-line flag > environment > config file > default.

Environment (a `.env` next to the config or in the working directory is
loaded first):
    CBT_OUTPUT_DIR   output directory
    CBT_SERIAL       1/true forces in-order runs
    CBT_MAX_WORKERS  thread pool size for parallel runs
    CBT_LOG_LEVEL    logging level name (read by the runner)
    CBT_DATA_DIR     base directory for relative dataset paths
"""

import json
import logging
import os
from pathlib import Path
from typing import Any, Dict, Optional, Union

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .codebook import AveragingMode
from .coclustering import CoClusterConfig
from .contract import ColdStart, Method
from .errors import ConfigError
from .evaluation import SplitSpec
from .hinge_transfer import TransferConfig
from .ingestion import DatasetSpec

logger = logging.getLogger(__name__)

ENV_PREFIX = "CBT_"
_TRUE = {"1", "true", "yes", "on"}


class ExperimentConfig(BaseModel):
    """Everything one `run`, `sweep` or `codebook` invocation needs."""
    model_config = ConfigDict(frozen=True, extra="forbid")

    source: DatasetSpec
    target: DatasetSpec
    cocluster: CoClusterConfig = CoClusterConfig()
    transfer: TransferConfig = TransferConfig()
    split: SplitSpec = SplitSpec()
    runs: int = Field(5, ge=1)
    method: Method = Method.PROPOSED
    cold_start: ColdStart = ColdStart.MODEL
    codebook_mode: AveragingMode = AveragingMode.OBSERVED
    output_dir: str = "output"
    serial: bool = False
    max_workers: Optional[int] = Field(None, ge=1)

    @model_validator(mode="after")
    def _check_rating_scale(self) -> "ExperimentConfig":
        if self.transfer.r_max < self.target.r_max:
            raise ValueError(
                f"transfer.r_max={self.transfer.r_max} is below the target scale {self.target.r_max}"
            )
        return self


def get_env_config() -> Dict[str, Any]:
    """Overrides read from CBT_* environment variables (unset ones are omitted)."""
    env: Dict[str, Any] = {}
    if os.getenv("CBT_OUTPUT_DIR"):
        env["output_dir"] = os.getenv("CBT_OUTPUT_DIR")
    if os.getenv("CBT_SERIAL"):
        env["serial"] = os.getenv("CBT_SERIAL", "").strip().lower() in _TRUE
    if os.getenv("CBT_MAX_WORKERS"):
        try:
            env["max_workers"] = int(os.getenv("CBT_MAX_WORKERS", ""))
        except ValueError:
            raise ConfigError(f"CBT_MAX_WORKERS must be an integer, got {os.getenv('CBT_MAX_WORKERS')!r}")
    return env


def get_log_level(default: str = "INFO") -> str:
    return os.getenv("CBT_LOG_LEVEL", default).upper()


def _describe(exc: ValidationError) -> str:
    parts = []
    for err in exc.errors():
        where = ".".join(str(p) for p in err["loc"]) or "config"
        parts.append(f"{where}: {err['msg']}")
    return "; ".join(parts)


def _resolve_path(raw: str, base: Path) -> str:
    p = Path(raw).expanduser()
    if p.is_absolute():
        return str(p)
    data_dir = os.getenv("CBT_DATA_DIR")
    return str((Path(data_dir) if data_dir else base) / p)


def build_config(data: Dict[str, Any], base_dir: Union[str, Path] = ".") -> ExperimentConfig:
    """
    Validate a config mapping, applying environment overrides.

    Relative dataset paths resolve against CBT_DATA_DIR when set, otherwise
    against `base_dir`.

    Raises:
        ConfigError: the mapping does not describe a valid experiment
    """
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    data = dict(data)
    base = Path(base_dir)
    for side in ("source", "target"):
        spec = data.get(side)
        if isinstance(spec, dict) and isinstance(spec.get("path"), str):
            data[side] = {**spec, "path": _resolve_path(spec["path"], base)}
    data.update(get_env_config())
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(f"invalid config: {_describe(exc)}")


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    """
    Read a JSON experiment config.

    Raises:
        ConfigError: unreadable file, malformed JSON or invalid values
    """
    path = Path(path)
    load_dotenv(path.parent / ".env")
    load_dotenv()
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}", path=str(path))
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: malformed JSON at line {exc.lineno}: {exc.msg}", path=str(path))
    cfg = build_config(data, base_dir=path.parent)
    logger.debug("Loaded config %s", path)
    return cfg


def with_overrides(
    cfg: ExperimentConfig,
    seed: Optional[int] = None,
    serial: Optional[bool] = None,
    output_dir: Optional[str] = None,
    method: Optional[str] = None,
) -> ExperimentConfig:
    """
    Apply command-line overrides. `seed` replaces the split, co-clustering
    and transfer seeds together.
    """
    data = cfg.model_dump(mode="json", by_alias=True)
    if seed is not None:
        for section in ("split", "cocluster", "transfer"):
            data[section]["seed"] = seed
    if serial is not None:
        data["serial"] = serial
    if output_dir is not None:
        data["output_dir"] = output_dir
    if method is not None:
        data["method"] = method
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(f"invalid override: {_describe(exc)}")


def resolved_echo(cfg: ExperimentConfig) -> Dict[str, Any]:
    """Fully resolved config as a flat, sorted section.key -> value mapping."""
    flat: Dict[str, Any] = {}

    def walk(prefix: str, value: Any):
        if isinstance(value, dict):
            for key, inner in value.items():
                walk(f"{prefix}.{key}" if prefix else key, inner)
        else:
            flat[prefix] = value

    walk("", cfg.model_dump(mode="json", by_alias=True))
    return dict(sorted(flat.items()))
