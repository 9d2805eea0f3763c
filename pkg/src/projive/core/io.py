"""Tabular file I/O shared by the CLI, the simulation store and fit outputs.

Block files are subjects x features on disk: a header row of feature names and
the subject id in the first column. In memory blocks are features x subjects,
so every reader here transposes on the way in and every writer on the way out.

All writers are atomic: content goes to a temporary file in the destination
directory which is then renamed over the target, so concurrent cells writing
to one output tree never leave a half-written file behind.
"""

from __future__ import annotations

import hashlib
import io
import json
import logging
import os
import tempfile
from collections.abc import Mapping, Sequence
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd

from projive.core.constants import CSV_FLOAT_FORMAT
from projive.core.data import FloatArray, MultiBlockData
from projive.core.errors import ShapeError

logger = logging.getLogger(__name__)


# =============================================================================
# Atomic writers
# =============================================================================


def atomic_write_text(path: str | Path, text: str) -> Path:
    """Write text to path through a temporary file and a rename.

    Args:
        path: Destination file. Parent directories are created.
        text: Content to write.

    Returns:
        The destination path.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as f:
            f.write(text)
        os.replace(tmp_name, path)
    except BaseException:
        Path(tmp_name).unlink(missing_ok=True)
        raise
    return path


def write_json(path: str | Path, payload: Mapping[str, Any]) -> Path:
    """Atomically write a JSON document with sorted keys."""
    return atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def read_json(path: str | Path) -> dict[str, Any]:
    """Read a JSON document written by `write_json`."""
    path = Path(path)
    if not path.exists():
        msg = f"File not found: {path}"
        raise FileNotFoundError(msg)
    with path.open(encoding="utf-8") as f:
        data = json.load(f)
    if not isinstance(data, dict):
        msg = f"{path} does not contain a JSON object"
        raise ValueError(msg)
    return data


def write_frame(path: str | Path, frame: pd.DataFrame, *, index: bool = True) -> Path:
    """Atomically write a data frame as CSV with round-trip float precision."""
    buffer = io.StringIO()
    frame.to_csv(buffer, index=index, float_format=CSV_FLOAT_FORMAT, lineterminator="\n")
    return atomic_write_text(path, buffer.getvalue())


def config_hash(payload: Mapping[str, Any]) -> str:
    """SHA-256 of the canonical JSON form of a configuration mapping."""
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


# =============================================================================
# Matrices
# =============================================================================


def default_subject_ids(n: int) -> tuple[str, ...]:
    """Identifiers used when data carry none."""
    return tuple(f"subject_{i:05d}" for i in range(n))


def default_feature_names(p: int, prefix: str = "feature") -> tuple[str, ...]:
    """Feature names used when data carry none."""
    return tuple(f"{prefix}_{j:05d}" for j in range(p))


def matrix_frame(
    values: FloatArray,
    index: Sequence[str],
    columns: Sequence[str],
    *,
    index_name: str = "id",
) -> pd.DataFrame:
    """Wrap a 2-D array in a labelled frame."""
    frame = pd.DataFrame(np.asarray(values), index=pd.Index(list(index), name=index_name), columns=list(columns))
    return frame


def write_matrix_csv(
    path: str | Path,
    values: FloatArray,
    index: Sequence[str],
    columns: Sequence[str],
    *,
    index_name: str = "id",
) -> Path:
    """Write a labelled matrix (rows as given) to CSV."""
    return write_frame(path, matrix_frame(values, index, columns, index_name=index_name))


def read_matrix_csv(path: str | Path) -> tuple[FloatArray, tuple[str, ...], tuple[str, ...]]:
    """Read a labelled numeric matrix written by `write_matrix_csv`.

    Returns:
        (values, row labels, column labels), values as stored on disk.

    Raises:
        FileNotFoundError: If the file does not exist.
        ValueError: If any entry is not numeric.
    """
    path = Path(path)
    if not path.exists():
        msg = f"File not found: {path}"
        raise FileNotFoundError(msg)
    frame = pd.read_csv(path, converters={0: str}, float_precision="round_trip")
    frame = frame.set_index(frame.columns[0])
    try:
        values = frame.to_numpy(dtype=np.float64)
    except ValueError as e:
        msg = f"{path} contains non-numeric entries"
        raise ValueError(msg) from e
    labels = tuple(str(s) for s in frame.index)
    if len(set(labels)) != len(labels):
        msg = f"{path} has duplicate row labels"
        raise ShapeError(msg)
    return values, labels, tuple(str(c) for c in frame.columns)


def write_block_csv(
    path: str | Path,
    block: FloatArray,
    subject_ids: Sequence[str] | None = None,
    feature_names: Sequence[str] | None = None,
) -> Path:
    """Write a features x subjects block as a subjects x features CSV."""
    p, n = block.shape
    ids = subject_ids if subject_ids is not None else default_subject_ids(n)
    names = feature_names if feature_names is not None else default_feature_names(p)
    return write_matrix_csv(path, block.T, ids, names, index_name="subject_id")


# =============================================================================
# Readers
# =============================================================================


def read_blocks(paths: Sequence[str | Path]) -> MultiBlockData:
    """Read one CSV per block and align subjects by id.

    Subjects are ordered as in the first file; the other files may list them
    in any order but must contain exactly the same ids.

    Args:
        paths: Block files, subjects x features, id in the first column.

    Returns:
        The aligned MultiBlockData (features x subjects).

    Raises:
        FileNotFoundError: If a block file is missing.
        ShapeError: If the files do not share one set of subject ids.
    """
    blocks: list[FloatArray] = []
    names: list[tuple[str, ...]] = []
    reference: tuple[str, ...] | None = None
    for path in paths:
        values, ids, columns = read_matrix_csv(path)
        if reference is None:
            reference = ids
        elif ids != reference:
            if set(ids) != set(reference):
                missing = sorted(set(reference) ^ set(ids))[:5]
                msg = f"Subjects in {path} do not match the first block (e.g. {', '.join(missing)})"
                raise ShapeError(msg)
            order = {s: i for i, s in enumerate(ids)}
            values = values[[order[s] for s in reference]]
        blocks.append(values.T)
        names.append(columns)
        logger.debug("Read block %s: %d features x %d subjects", path, values.shape[1], values.shape[0])
    return MultiBlockData(blocks=tuple(blocks), subject_ids=reference, feature_names=tuple(names))


def read_covariates(path: str | Path, subject_ids: Sequence[str] | None) -> FloatArray:
    """Read an n x q covariate table and order its rows like the data.

    Args:
        path: CSV with subject id in the first column and one column per covariate.
        subject_ids: Subject order of the data; None keeps file order.

    Returns:
        Covariate matrix of shape (n, q).

    Raises:
        ShapeError: If a data subject has no covariate row.
    """
    values, ids, _ = read_matrix_csv(path)
    if subject_ids is None:
        return values
    position = {s: i for i, s in enumerate(ids)}
    missing = [s for s in subject_ids if s not in position]
    if missing:
        msg = f"Covariates in {path} lack {len(missing)} subjects (e.g. {missing[0]})"
        raise ShapeError(msg)
    return values[[position[s] for s in subject_ids]]


def find_manifests(root: str | Path, name: str) -> list[Path]:
    """Directories under root (root included) that contain a file called name."""
    root = Path(root)
    return sorted(p.parent for p in root.rglob(name))
