"""
Plot-ready text artifacts.

Tables are whitespace-separated with ``# key: value`` metadata lines on top,
followed by a column-name line. Key-value files hold one ``key: value`` per
line. Both are written to a temporary sibling and renamed into place.
"""

import os
import tempfile
from typing import Dict, Mapping, Optional, Tuple

import pandas as pd

FLOAT_FORMAT = "%.10e"


def _atomic_write(path: str, text: str) -> str:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(prefix=".tmp-", dir=directory)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as f:
            f.write(text)
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise
    return path


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return ", ".join(_format_value(v) for v in value)
    return str(value)


def write_table(path: str, df: pd.DataFrame, metadata: Optional[Mapping[str, object]] = None) -> str:
    """
    Write a DataFrame as a whitespace-separated table.

    Args:
        path: Destination file
        df: Numeric columns to write
        metadata: Header entries written as ``# key: value``

    Returns:
        The path written
    """
    lines = [f"# {key}: {_format_value(value)}" for key, value in (metadata or {}).items()]
    body = df.to_csv(sep=" ", index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    return _atomic_write(path, "\n".join(lines + [body.rstrip("\n")]) + "\n")


def read_table(path: str) -> Tuple[pd.DataFrame, Dict[str, str]]:
    """Read a table written by :func:`write_table`; returns (data, metadata)."""
    metadata: Dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            if not line.startswith("#"):
                break
            body = line[1:].strip()
            if ":" in body:
                key, value = body.split(":", 1)
                metadata[key.strip()] = value.strip()
    df = pd.read_csv(path, sep=r"\s+", comment="#")
    return df, metadata


def write_key_values(path: str, values: Mapping[str, object], header: Optional[str] = None) -> str:
    """Write ``key: value`` lines in insertion order."""
    lines = [f"# {header}"] if header else []
    lines.extend(f"{key}: {_format_value(value)}" for key, value in values.items())
    return _atomic_write(path, "\n".join(lines) + "\n")


def read_key_values(path: str) -> Dict[str, object]:
    """Read a key-value file; numeric values come back as float."""
    values: Dict[str, object] = {}
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            text = line.strip()
            if not text or text.startswith("#") or ":" not in text:
                continue
            key, value = text.split(":", 1)
            value = value.strip()
            try:
                values[key.strip()] = float(value)
            except ValueError:
                values[key.strip()] = value
    return values
