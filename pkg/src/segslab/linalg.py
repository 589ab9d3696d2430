"""Dense helpers: column centering, covariance PCA, projection, CSV I/O."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidInputError


@dataclass(frozen=True)
class PcaModel:
    """Principal subspace of a feature cloud.

    ``basis`` has shape (C, n_components) with orthonormal columns ordered by
    decreasing eigenvalue.
    """

    mean: np.ndarray
    basis: np.ndarray
    eigenvalues: np.ndarray

    @property
    def n_components(self) -> int:
        return self.basis.shape[1]

    @property
    def n_features(self) -> int:
        return self.basis.shape[0]


def _as_matrix(m) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    if m.ndim != 2:
        raise InvalidInputError(f"expected a 2-D matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise InvalidInputError("matrix has non-finite entries")
    return m


def center_columns(m) -> tuple[np.ndarray, np.ndarray]:
    """Subtract per-column means. Returns ``(centered, means)``."""
    m = _as_matrix(m)
    if m.shape[0] < 1 or m.shape[1] < 1:
        raise InvalidInputError("cannot center an empty matrix")
    mean = m.mean(axis=0)
    centered = m - mean
    # second pass removes the O(eps * |mean|) residue left by the first
    centered -= centered.mean(axis=0)
    return centered, mean


def pca_fit(m, n_components: int) -> PcaModel:
    """PCA by symmetric eigendecomposition of the sample covariance.

    The covariance uses the ``rows - 1`` normalizer. Components are sorted by
    decreasing eigenvalue (ties keep eigensolver order) and each is signed so
    its largest-magnitude entry is positive.
    """
    m = _as_matrix(m)
    rows, cols = m.shape
    if rows < 2:
        raise InvalidInputError("pca_fit needs at least two rows")
    if not 1 <= n_components <= cols:
        raise InvalidInputError(
            f"n_components={n_components} must lie in [1, {cols}]")
    centered, mean = center_columns(m)
    cov = centered.T @ centered / (rows - 1)
    cov = 0.5 * (cov + cov.T)
    evals, evecs = np.linalg.eigh(cov)
    # descending eigenvalue, ascending original index on ties
    order = np.lexsort((np.arange(cols), -evals))[:n_components]
    evals = np.clip(evals[order], 0.0, None)
    basis = evecs[:, order]
    pivot = np.argmax(np.abs(basis), axis=0)
    signs = np.sign(basis[pivot, np.arange(n_components)])
    signs[signs == 0] = 1.0
    basis = basis * signs
    # enforce non-increasing after clipping round-off negatives
    evals = np.minimum.accumulate(evals)
    return PcaModel(mean=mean, basis=basis, eigenvalues=evals)


def project(model: PcaModel, features) -> np.ndarray:
    """Unwhitened projection ``(features - mean) @ basis`` along the last axis."""
    features = np.asarray(features, dtype=float)
    if features.shape[-1] != model.n_features:
        raise InvalidInputError(
            f"feature width {features.shape[-1]} != PCA width {model.n_features}")
    return (features - model.mean) @ model.basis


def reconstruct(model: PcaModel, projected) -> np.ndarray:
    return np.asarray(projected, dtype=float) @ model.basis.T + model.mean


def write_matrix_csv(path, m) -> None:
    m = _as_matrix(m)
    with open(Path(path), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"c{j}" for j in range(m.shape[1])])
        for row in m:
            writer.writerow([repr(float(v)) for v in row])


def read_matrix_csv(path) -> np.ndarray:
    with open(Path(path), newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        data = [[float(v) for v in row] for row in reader]
    if not data:
        return np.zeros((0, len(header)))
    return np.array(data, dtype=float)
