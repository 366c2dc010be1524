"""
Dataset Ingestion
=================
Parses rating files into SparseRatingMatrix values.

Formats:
- tab:          user<TAB>item<TAB>rating[<TAB>timestamp]     (MovieLens 100K u.data)
- comma:        user,item,rating[,extra...] with optional header
- double-colon: user::item::rating::timestamp                (MovieLens 1M ratings.dat)

Ratings of 0 mark missing values and are skipped. Duplicate (user, item)
pairs keep the last occurrence. `max_users` / `max_items` keep the first N
identifiers in ascending id order; the kept ids are then compacted to
0-based indices in the same order.
"""

import logging
import re
from pathlib import Path
from typing import Any, Dict, Literal, Optional, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .contract import DatasetStats
from .errors import DatasetNotFound, EmptyAfterFilter, ParseError
from .ratings import SparseRatingMatrix, from_arrays, observed_mean

logger = logging.getLogger(__name__)

SEPARATORS = {"tab": "\t", "comma": ",", "double-colon": "::"}

# Known datasets and how their files are laid out.
PRESETS: Dict[str, Dict[str, Any]] = {
    "movielens-100k": {"format": "tab", "id_base": 1, "r_max": 5},
    "movielens-1m": {"format": "double-colon", "id_base": 1, "r_max": 5},
    "goodbooks": {"format": "comma", "id_base": 1, "r_max": 5, "max_users": 5000, "max_items": 3000},
    "douban-music": {"format": "comma", "id_base": 0, "r_max": 5, "max_users": 2000, "max_items": 2000},
    "douban-book": {"format": "comma", "id_base": 0, "r_max": 5, "max_users": 2000, "max_items": 2000},
}


class DatasetSpec(BaseModel):
    """Where a rating file lives and how to read it."""
    model_config = ConfigDict(frozen=True, extra="forbid")

    path: str
    format: Literal["tab", "comma", "double-colon"] = "tab"
    max_users: Optional[int] = Field(None, ge=1)
    max_items: Optional[int] = Field(None, ge=1)
    id_base: Literal[0, 1] = 1
    r_max: int = Field(5, ge=1)
    preset: Optional[str] = None

    @model_validator(mode="before")
    @classmethod
    def _apply_preset(cls, data: Any) -> Any:
        if isinstance(data, dict) and data.get("preset") is not None:
            name = data["preset"]
            if name not in PRESETS:
                raise ValueError(f"unknown dataset preset '{name}', expected one of {sorted(PRESETS)}")
            data = {**PRESETS[name], **data}
        return data


COLUMNS = ("user", "item", "rating")
_LINE_RE = re.compile(r"line (\d+)")


def _read_table(spec: DatasetSpec, path: Path) -> pd.DataFrame:
    sep = SEPARATORS[spec.format]
    try:
        raw = pd.read_csv(
            path,
            sep=sep,
            header=None,
            names=list(COLUMNS),
            usecols=[0, 1, 2],
            index_col=False,
            dtype=str,
            engine="python",
            skip_blank_lines=False,
            keep_default_na=False,
        )
    except pd.errors.EmptyDataError:
        raise EmptyAfterFilter(f"{path} contains no ratings", path=str(path))
    except pd.errors.ParserError as exc:
        match = _LINE_RE.search(str(exc))
        raise ParseError(str(path), int(match.group(1)) if match else 0, "inconsistent number of fields")

    if raw.empty:
        raise EmptyAfterFilter(f"{path} contains no ratings", path=str(path))

    # trailing extra columns are dropped; a short line comes back with NaN fields
    table = raw.fillna("").apply(lambda col: col.str.strip())
    table["line_no"] = np.arange(1, len(table) + 1)

    # header-optional comma files: a non-numeric first user field is a header line
    if spec.format == "comma" and len(table) and not table["user"].iloc[0].lstrip("-").isdigit():
        table = table.iloc[1:]

    blank = (table[["user", "item", "rating"]] == "").all(axis=1)
    return table[~blank]


def _to_numeric(table: pd.DataFrame, path: Path, r_max: int, id_base: int) -> pd.DataFrame:
    out = pd.DataFrame({"line_no": table["line_no"].to_numpy()})
    for col in ("user", "item", "rating"):
        out[col] = pd.to_numeric(table[col], errors="coerce").to_numpy()

    bad = out[["user", "item", "rating"]].isna().any(axis=1)
    if bad.any():
        row = out[bad].iloc[0]
        raise ParseError(str(path), int(row["line_no"]), "non-numeric or missing field")

    for col in ("user", "item"):
        bad = (out[col] != np.floor(out[col])) | (out[col] < id_base)
        if bad.any():
            row = out[bad].iloc[0]
            raise ParseError(str(path), int(row["line_no"]), f"invalid {col} id {row[col]:g}")

    bad = (out["rating"] != np.floor(out["rating"])) | (out["rating"] < 0) | (out["rating"] > r_max)
    if bad.any():
        row = out[bad].iloc[0]
        raise ParseError(str(path), int(row["line_no"]), f"rating {row['rating']:g} outside 0..{r_max}")

    return out.astype({"user": np.int64, "item": np.int64, "rating": np.int64})


def _first_ids(ids: pd.Series, limit: Optional[int]) -> np.ndarray:
    kept = np.sort(ids.unique())
    return kept[:limit] if limit is not None else kept


def load(spec: DatasetSpec) -> SparseRatingMatrix:
    """
    Read a rating file into a compacted SparseRatingMatrix.

    Raises:
        DatasetNotFound: the file does not exist
        ParseError: a malformed line (carries its 1-based line number)
        EmptyAfterFilter: no rating survives zero-skipping and subsetting
    """
    path = Path(spec.path)
    if not path.is_file():
        raise DatasetNotFound(str(path))

    table = _to_numeric(_read_table(spec, path), path, spec.r_max, spec.id_base)

    zeros = int((table["rating"] == 0).sum())
    table = table[table["rating"] != 0]

    dup = table.duplicated(subset=["user", "item"], keep="last")
    if dup.any():
        first = table[dup].iloc[0]
        logger.warning(
            "%s: %d duplicate ratings, keeping the last occurrence (first at line %d)",
            path, int(dup.sum()), int(first["line_no"]),
        )
        table = table[~dup]

    user_ids = _first_ids(table["user"], spec.max_users)
    item_ids = _first_ids(table["item"], spec.max_items)
    table = table[table["user"].isin(user_ids) & table["item"].isin(item_ids)]
    if table.empty:
        raise EmptyAfterFilter(f"{path}: no ratings left after filtering", path=str(path))

    users = np.searchsorted(user_ids, table["user"].to_numpy())
    items = np.searchsorted(item_ids, table["item"].to_numpy())
    M = from_arrays(users, items, table["rating"].to_numpy(), len(user_ids), len(item_ids), spec.r_max)

    logger.info(
        "Loaded %s: %d users x %d items, %d ratings (%.2f%% observed, %d zero ratings skipped)",
        path.name, M.n_users, M.n_items, len(M), 100.0 * M.density, zeros,
    )
    return M


def stats(M: SparseRatingMatrix) -> DatasetStats:
    """Dimensions and observed percentage 100 * |observed| / (users * items)."""
    cells = M.n_users * M.n_items
    return DatasetStats(
        n_users=M.n_users,
        n_items=M.n_items,
        n_observed=len(M),
        observed_percentage=100.0 * len(M) / cells if cells else 0.0,
        mean_rating=observed_mean(M) if len(M) else None,
    )


def write_csv(M: SparseRatingMatrix, path: Union[str, Path], id_base: int = 0) -> Path:
    """Write `user,item,rating` with a header line; `load` with format=comma reads it back."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame({
        "user": M.users + id_base,
        "item": M.items + id_base,
        "rating": M.ratings,
    })
    frame.to_csv(path, index=False)
    return path
