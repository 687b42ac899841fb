"""CSV datasets: comma-separated, UTF-8, mandatory header, '.' decimals."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .checkpoint import write_atomic


@dataclass(frozen=True)
class Table:
    feature_names: list[str]
    features: np.ndarray
    labels: Optional[list[str]]


def read_table(path, label_column: Optional[str], require_label: bool = True) -> Table:
    """Numeric feature columns plus the raw label strings (if the column exists)."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty file, header row required")
    header, body = [h.strip() for h in rows[0]], [r for r in rows[1:] if r]
    has_label = label_column is not None and label_column in header
    if require_label and not has_label:
        raise ValueError(f"{path}: label column {label_column!r} not in header")
    label_idx = header.index(label_column) if has_label else None
    feat_idx = [i for i in range(len(header)) if i != label_idx]
    feats = np.empty((len(body), len(feat_idx)))
    for r, row in enumerate(body):
        if len(row) != len(header):
            raise ValueError(f"{path}: row {r + 2} has {len(row)} fields, header has {len(header)}")
        try:
            feats[r] = [float(row[i]) for i in feat_idx]
        except ValueError as exc:
            raise ValueError(f"{path}: row {r + 2}: {exc}") from exc
    labels = [row[label_idx].strip() for row in body] if has_label else None
    return Table([header[i] for i in feat_idx], feats, labels)


def class_values(labels: Sequence[str]) -> list[str]:
    """Sorted distinct labels; numeric order when every label parses as a number."""
    uniq = set(labels)
    try:
        return sorted(uniq, key=float)
    except ValueError:
        return sorted(uniq)


def encode_labels(labels: Sequence[str], classes: Sequence[str]) -> np.ndarray:
    index = {c: i for i, c in enumerate(classes)}
    try:
        return np.array([index[l] for l in labels], dtype=int)
    except KeyError as exc:
        raise ValueError(f"label {exc.args[0]!r} not seen in training data") from exc


def format_float(x: float) -> str:
    return repr(float(x))


def write_csv(path, header: Sequence[str], rows) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([format_float(v) if isinstance(v, (float, np.floating)) else v for v in row])
    write_atomic(path, buf.getvalue().encode("utf-8"))
