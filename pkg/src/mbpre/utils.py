"""
Utility functions for reading and writing run artifacts.
"""

import csv
import hashlib
import json
import os
import tempfile
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Sequence, Union

import numpy as np

from .exceptions import ArtifactIOError

PathLike = Union[str, Path]


def _to_builtin(value: Any) -> Any:
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, tuple):
        return list(value)
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")


def canonical_json(data: Any) -> str:
    """
    Serialize data deterministically: sorted keys, no whitespace.

    numpy scalars and arrays are converted to plain Python values.
    """
    return json.dumps(data, sort_keys=True, separators=(",", ":"), default=_to_builtin)


def config_hash(data: Mapping[str, Any]) -> str:
    """sha256 hex digest of the canonical JSON form of data."""
    return hashlib.sha256(canonical_json(data).encode("utf-8")).hexdigest()


def read_json(path: PathLike) -> Any:
    """
    Load a JSON document.

    Raises:
        ArtifactIOError: When the file cannot be read or is not valid JSON
    """
    try:
        with open(path, encoding="utf-8") as handle:
            return json.load(handle)
    except OSError as e:
        raise ArtifactIOError(f"Cannot read {path}: {e}", original_exception=e)
    except json.JSONDecodeError as e:
        raise ArtifactIOError(f"{path} is not valid JSON: {e}", original_exception=e)


def write_json_atomic(path: PathLike, data: Any) -> Path:
    """
    Write a JSON document through a temporary file and an atomic rename.

    Returns:
        The path written
    """
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
        with os.fdopen(fd, "w", encoding="utf-8") as handle:
            json.dump(data, handle, indent=2, sort_keys=True, default=_to_builtin)
            handle.write("\n")
        os.replace(tmp, path)
    except OSError as e:
        raise ArtifactIOError(f"Cannot write {path}: {e}", original_exception=e)
    return path


def write_jsonl(path: PathLike, records: Iterable[Mapping[str, Any]]) -> Path:
    """Write one canonical JSON object per line."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as handle:
            for record in records:
                handle.write(canonical_json(record))
                handle.write("\n")
    except OSError as e:
        raise ArtifactIOError(f"Cannot write {path}: {e}", original_exception=e)
    return path


def write_csv(
    path: PathLike, header: Sequence[str], rows: Iterable[Sequence[Any]]
) -> Path:
    """Write a CSV file with the given header (rows may be empty)."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(header)
            for row in rows:
                writer.writerow([_format_cell(cell) for cell in row])
    except OSError as e:
        raise ArtifactIOError(f"Cannot write {path}: {e}", original_exception=e)
    return path


def _format_cell(cell: Any) -> Any:
    if isinstance(cell, (float, np.floating)):
        return repr(float(cell))
    if isinstance(cell, np.integer):
        return int(cell)
    return cell


def read_csv(path: PathLike) -> List[Dict[str, str]]:
    """Read a CSV file into a list of row dictionaries."""
    try:
        with open(path, encoding="utf-8", newline="") as handle:
            return list(csv.DictReader(handle))
    except OSError as e:
        raise ArtifactIOError(f"Cannot read {path}: {e}", original_exception=e)
