"""File parsing helpers for the CLI: CSV matrices/vectors, active-set specs."""

from __future__ import annotations

import csv
import hashlib
import json
import os
from dataclasses import dataclass

import numpy as np

from .errors import InputDataError
from .model import ActiveSet


def _is_numeric_row(row: list[str]) -> bool:
    try:
        for tok in row:
            float(tok)
        return True
    except ValueError:
        return False


def read_matrix_csv(path) -> np.ndarray:
    """Comma-separated matrix, rows = observations, optional header row."""
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = [r for r in csv.reader(fh) if r and any(tok.strip() for tok in r)]
    except OSError as exc:
        raise InputDataError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise InputDataError(f"{path} is empty")
    if not _is_numeric_row(rows[0]):
        rows = rows[1:]
        if not rows:
            raise InputDataError(f"{path} has a header but no data rows")
    width = len(rows[0])
    data = []
    for i, row in enumerate(rows):
        if len(row) != width:
            raise InputDataError(f"{path}: row {i + 1} has {len(row)} fields, expected {width}")
        try:
            data.append([float(tok) for tok in row])
        except ValueError as exc:
            raise InputDataError(f"{path}: non-numeric value in row {i + 1}") from exc
    return np.asarray(data, dtype=float)


def read_vector_csv(path) -> np.ndarray:
    mat = read_matrix_csv(path)
    if mat.ndim == 2 and 1 in mat.shape:
        return mat.reshape(-1)
    if mat.ndim == 1:
        return mat
    raise InputDataError(f"{path} does not contain a single row or column")


@dataclass(frozen=True)
class ActiveSpec:
    """Parsed active-set input, possibly carrying pipeline outputs."""

    active: ActiveSet
    beta_train: np.ndarray | None = None
    sigma_sq: float | None = None


def parse_active_spec(spec: str, one_based: bool = True) -> ActiveSpec:
    """Parse an active set given inline ("1,4,7"), as a JSON array file, or as
    the JSON object written by estimate-active-set (which also carries the
    training coefficients).  Indices are 1-based at this boundary."""
    if os.path.exists(spec):
        try:
            with open(spec, encoding="utf-8") as fh:
                payload = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise InputDataError(f"cannot parse active-set file {spec}: {exc}") from exc
        if isinstance(payload, list):
            return ActiveSpec(active=_indices_to_set(payload, one_based))
        if isinstance(payload, dict) and "active" in payload:
            beta = payload.get("beta_train")
            return ActiveSpec(
                active=_indices_to_set(payload["active"], one_based),
                beta_train=None if beta is None else np.asarray(beta, dtype=float),
                sigma_sq=payload.get("sigma_sq"),
            )
        raise InputDataError(f"{spec}: expected a JSON array or an object with 'active'")
    try:
        indices = [int(tok) for tok in spec.split(",") if tok.strip()]
    except ValueError as exc:
        raise InputDataError(f"cannot parse active set {spec!r}") from exc
    if not indices:
        raise InputDataError("active set is empty")
    return ActiveSpec(active=_indices_to_set(indices, one_based))


def _indices_to_set(indices, one_based: bool) -> ActiveSet:
    idx = [int(i) for i in indices]
    if one_based:
        if any(i < 1 for i in idx):
            raise InputDataError("1-based indices must be >= 1")
        idx = [i - 1 for i in idx]
    try:
        return ActiveSet(tuple(idx))
    except Exception as exc:
        raise InputDataError(str(exc)) from exc


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def dump_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")
