"""Deterministic artifact writers: same data, same bytes."""

from __future__ import annotations

import csv
import json

import numpy as np


def fmt(x) -> str:
    """Canonical number formatting for CSV cells."""
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if x is None:
        return ""
    return format(float(x), ".12g")


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([c if isinstance(c, str) else fmt(c) for c in row])


def write_matrix_csv(path, index_name, index, col_labels, matrix):
    """Matrix with a labeled index column; columns are labeled by col_labels."""
    header = [index_name] + [fmt(c) for c in col_labels]
    rows = ([idx, *line] for idx, line in zip(index, np.asarray(matrix)))
    write_csv(path, header, rows)


def write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2, default=_json_default)
        fh.write("\n")


def _json_default(obj):
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj)}")
