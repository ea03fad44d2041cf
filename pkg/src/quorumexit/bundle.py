"""Portable on-disk bundle format for prediction tensors, labels, and costs.

A bundle directory holds four files:

* ``manifest.txt``   -- ``key = value`` text with K, E, N, C, dtype, endianness,
  format-version
* ``predictions.bin`` -- row-major [k][e][n][c] 32-bit little-endian floats
* ``labels.bin``      -- 32-bit little-endian unsigned ints
* ``costs.csv``       -- plain CSV, rows = learners, cols = exit stages

All invariants are re-validated on load; truncated payloads are rejected by
byte-count checks before any array is built.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

ROW_SUM_TOL = 1e-5
FORMAT_VERSION = "1"

MANIFEST_NAME = "manifest.txt"
PREDICTIONS_NAME = "predictions.bin"
LABELS_NAME = "labels.bin"
COSTS_NAME = "costs.csv"


class BundleValidationError(ValueError):
    """Raised when a bundle component violates a format invariant."""


@dataclass(frozen=True)
class PredictionTensor:
    """Per-(learner, exit, sample) class-probability distributions.

    ``probs`` is indexed ``[k][e][n][c]``; every inner C-vector is a
    probability distribution (entries in [0, 1], sum within ``ROW_SUM_TOL``
    of 1). At least two learners are required: a quorum needs voters.
    """

    probs: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.probs)
        if probs.ndim != 4:
            raise BundleValidationError(
                f"predictions must be 4-D [k][e][n][c], got {probs.ndim}-D"
            )
        k, e, n, c = probs.shape
        if min(k, e, n, c) < 1:
            raise BundleValidationError(
                f"all axes must be positive, got shape {probs.shape}"
            )
        if k < 2:
            raise BundleValidationError(f"learner axis violates K >= 2 (got K={k})")
        if c < 2:
            raise BundleValidationError(f"class axis violates C >= 2 (got C={c})")
        if not np.isfinite(probs).all():
            raise BundleValidationError("predictions contain non-finite values")
        if probs.min() < 0.0 or probs.max() > 1.0 + ROW_SUM_TOL:
            raise BundleValidationError("probabilities outside [0, 1]")
        sums = probs.sum(axis=3, dtype=np.float64)
        bad = np.abs(sums - 1.0) > ROW_SUM_TOL
        if bad.any():
            k_i, e_i, n_i = (int(ax[0]) for ax in np.nonzero(bad))
            raise BundleValidationError(
                f"row sum {sums[k_i, e_i, n_i]:.6f} at [k={k_i}][e={e_i}][n={n_i}] "
                f"not within {ROW_SUM_TOL} of 1"
            )
        object.__setattr__(self, "probs", probs)

    @property
    def K(self) -> int:
        return self.probs.shape[0]

    @property
    def E(self) -> int:
        return self.probs.shape[1]

    @property
    def N(self) -> int:
        return self.probs.shape[2]

    @property
    def C(self) -> int:
        return self.probs.shape[3]


@dataclass(frozen=True)
class LabelVector:
    """Ground-truth class indices, one per sample."""

    y: np.ndarray

    def __post_init__(self):
        y = np.asarray(self.y)
        if y.ndim != 1:
            raise BundleValidationError(f"labels must be 1-D, got {y.ndim}-D")
        if not np.issubdtype(y.dtype, np.integer):
            raise BundleValidationError(f"labels must be integers, got {y.dtype}")
        if y.size and (y.min() < 0):
            raise BundleValidationError("labels contain negative entries")
        object.__setattr__(self, "y", y.astype(np.uint32))

    @property
    def N(self) -> int:
        return self.y.shape[0]

    def check_against(self, tensor: PredictionTensor) -> None:
        if self.N != tensor.N:
            raise BundleValidationError(
                f"label count {self.N} does not match sample axis N={tensor.N}"
            )
        if self.y.size and int(self.y.max()) >= tensor.C:
            raise BundleValidationError(
                f"label {int(self.y.max())} out of range for C={tensor.C} classes"
            )


@dataclass(frozen=True)
class CostModel:
    """Incremental MAC cost per learner per exit stage, shape (K, E)."""

    costs: np.ndarray

    def __post_init__(self):
        costs = np.asarray(self.costs, dtype=np.float64)
        if costs.ndim != 2:
            raise BundleValidationError(f"costs must be 2-D [k][e], got {costs.ndim}-D")
        if not np.isfinite(costs).all():
            raise BundleValidationError("costs contain non-finite values")
        if costs.min() < 0.0:
            raise BundleValidationError("costs must be non-negative MACs")
        object.__setattr__(self, "costs", costs)

    @property
    def K(self) -> int:
        return self.costs.shape[0]

    @property
    def E(self) -> int:
        return self.costs.shape[1]

    def check_against(self, tensor: PredictionTensor) -> None:
        if (self.K, self.E) != (tensor.K, tensor.E):
            raise BundleValidationError(
                f"cost table shape {(self.K, self.E)} does not match "
                f"(K, E) = {(tensor.K, tensor.E)}"
            )


class Bundle(NamedTuple):
    tensor: PredictionTensor
    labels: LabelVector
    costs: CostModel


def write_bundle(
    tensor: PredictionTensor, labels: LabelVector, costs: CostModel, path: str
) -> None:
    """Write a bundle directory; payloads are cast to f32/u32 little-endian."""
    labels.check_against(tensor)
    costs.check_against(tensor)
    os.makedirs(path, exist_ok=True)

    manifest = (
        f"K = {tensor.K}\n"
        f"E = {tensor.E}\n"
        f"N = {tensor.N}\n"
        f"C = {tensor.C}\n"
        f"dtype = f32\n"
        f"endianness = little\n"
        f"format-version = {FORMAT_VERSION}\n"
    )
    with open(os.path.join(path, MANIFEST_NAME), "w", encoding="ascii") as fh:
        fh.write(manifest)

    with open(os.path.join(path, PREDICTIONS_NAME), "wb") as fh:
        fh.write(np.ascontiguousarray(tensor.probs, dtype="<f4").tobytes())

    with open(os.path.join(path, LABELS_NAME), "wb") as fh:
        fh.write(np.ascontiguousarray(labels.y, dtype="<u4").tobytes())

    # repr round-trips float64 exactly, keeping write/read the identity
    with open(os.path.join(path, COSTS_NAME), "w", encoding="ascii") as fh:
        for row in costs.costs:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def _read_manifest(path: str) -> dict[str, str]:
    entries: dict[str, str] = {}
    with open(path, "r", encoding="ascii") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise BundleValidationError(f"{MANIFEST_NAME}: malformed line {line!r}")
            key, _, value = line.partition("=")
            entries[key.strip()] = value.strip()
    return entries


def read_bundle(path: str) -> Bundle:
    """Load and fully re-validate a bundle directory."""
    manifest_path = os.path.join(path, MANIFEST_NAME)
    for name in (MANIFEST_NAME, PREDICTIONS_NAME, LABELS_NAME, COSTS_NAME):
        if not os.path.isfile(os.path.join(path, name)):
            raise BundleValidationError(f"missing bundle file {name} in {path}")
    entries = _read_manifest(manifest_path)

    for key in ("K", "E", "N", "C", "dtype", "endianness", "format-version"):
        if key not in entries:
            raise BundleValidationError(f"{MANIFEST_NAME}: missing key {key!r}")
    if entries["dtype"] != "f32":
        raise BundleValidationError(f"unsupported dtype {entries['dtype']!r}")
    if entries["endianness"] != "little":
        raise BundleValidationError(f"unsupported endianness {entries['endianness']!r}")
    if entries["format-version"] != FORMAT_VERSION:
        raise BundleValidationError(
            f"unsupported format-version {entries['format-version']!r}"
        )
    try:
        k, e, n, c = (int(entries[key]) for key in ("K", "E", "N", "C"))
    except ValueError as exc:
        raise BundleValidationError(f"{MANIFEST_NAME}: non-integer dimension") from exc
    if min(k, e, n, c) < 1:
        raise BundleValidationError(f"non-positive dimension in manifest: {entries}")

    pred_path = os.path.join(path, PREDICTIONS_NAME)
    expected = k * e * n * c * 4
    actual = os.path.getsize(pred_path)
    if actual != expected:
        raise BundleValidationError(
            f"{PREDICTIONS_NAME}: size mismatch, expected {expected} bytes "
            f"for K*E*N*C*4, found {actual}"
        )
    with open(pred_path, "rb") as fh:
        probs = np.frombuffer(fh.read(), dtype="<f4").reshape(k, e, n, c)

    labels_path = os.path.join(path, LABELS_NAME)
    if os.path.getsize(labels_path) != n * 4:
        raise BundleValidationError(
            f"{LABELS_NAME}: size mismatch, expected {n * 4} bytes, "
            f"found {os.path.getsize(labels_path)}"
        )
    with open(labels_path, "rb") as fh:
        y = np.frombuffer(fh.read(), dtype="<u4")

    rows = []
    with open(os.path.join(path, COSTS_NAME), "r", encoding="ascii") as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append([float(v) for v in line.split(",")])
    if len(rows) != k or any(len(r) != e for r in rows):
        raise BundleValidationError(
            f"{COSTS_NAME}: expected {k} rows x {e} cols, "
            f"found {len(rows)} rows"
        )

    tensor = PredictionTensor(probs)
    labels = LabelVector(y)
    costs = CostModel(np.array(rows, dtype=np.float64))
    labels.check_against(tensor)
    costs.check_against(tensor)
    return Bundle(tensor, labels, costs)
