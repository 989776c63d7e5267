"""Dense embedding containers and the shared numeric primitives.

All arithmetic is float64 in memory; float32 only appears at the file
boundary. Normalization happens once at ingestion, after which similarity
is a plain dot product.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DimensionMismatchError,
    NonPositiveTemperatureError,
    ZeroVectorError,
)

SEMANTICS = ("patch", "tissue_text", "class_text")

NORM_EPS = 1e-12


def _as_matrix(data) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionMismatchError(f"expected 2-d matrix, got ndim={arr.ndim}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise DimensionMismatchError(f"matrix must be at least 1x1, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("matrix contains non-finite entries")
    return arr


@dataclass(frozen=True)
class EmbeddingMatrix:
    """Row-major matrix of feature vectors with declared row semantics."""

    data: np.ndarray
    semantics: str = "patch"

    def __post_init__(self):
        object.__setattr__(self, "data", _as_matrix(self.data))
        if self.semantics not in SEMANTICS:
            raise ValueError(f"unknown semantics tag {self.semantics!r}")

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    def row(self, i: int) -> np.ndarray:
        return self.data[i]


@dataclass(frozen=True)
class SimilarityMatrix:
    """Row-stochastic similarity matrix produced by a temperature softmax."""

    data: np.ndarray
    temperature: float

    def __post_init__(self):
        object.__setattr__(self, "data", _as_matrix(self.data))
        if self.temperature <= 0:
            raise NonPositiveTemperatureError(f"temperature {self.temperature} <= 0")
        # Entries can underflow to exactly 0.0 for extreme logit spreads;
        # only the upper bound and sign are enforced here.
        if np.any(self.data < 0) or np.any(self.data > 1 + 1e-9):
            raise ValueError("similarity entries outside [0, 1]")

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class WsiBag:
    """One slide: patch embeddings, grid coordinates, label, patient id."""

    patches: EmbeddingMatrix
    coords: tuple = field(default=())
    label: int = 0
    patient_id: str = ""

    def __post_init__(self):
        coords = tuple((int(x), int(y)) for x, y in self.coords)
        object.__setattr__(self, "coords", coords)
        if len(coords) != self.patches.rows:
            raise DimensionMismatchError(
                f"{len(coords)} coords for {self.patches.rows} patches"
            )
        if any(x < 0 or y < 0 for x, y in coords):
            raise ValueError("grid coordinates must be non-negative")
        if self.label < 0:
            raise ValueError("label must be non-negative")

    @property
    def num_patches(self) -> int:
        return self.patches.rows


def l2_normalize_rows(m: EmbeddingMatrix) -> EmbeddingMatrix:
    """Scale each row to unit Euclidean norm."""
    norms = np.linalg.norm(m.data, axis=1)
    if np.any(norms < NORM_EPS):
        bad = int(np.argmin(norms))
        raise ZeroVectorError(f"row {bad} has norm {norms[bad]:.3e} < 1e-12")
    return EmbeddingMatrix(m.data / norms[:, None], semantics=m.semantics)


def normalize_vector(v: np.ndarray) -> np.ndarray:
    """Unit-normalize a single vector, rejecting near-zero norms."""
    v = np.asarray(v, dtype=np.float64)
    n = np.linalg.norm(v)
    if n < NORM_EPS:
        raise ZeroVectorError(f"vector norm {n:.3e} < 1e-12")
    return v / n


def cosine_matrix(a: EmbeddingMatrix, b: EmbeddingMatrix) -> np.ndarray:
    """Pairwise dot products between rows of a and rows of b.

    Both inputs are expected to be row-normalized, making this cosine
    similarity.
    """
    if a.cols != b.cols:
        raise DimensionMismatchError(f"feature dims differ: {a.cols} vs {b.cols}")
    return a.data @ b.data.T


def softmax_rows(logits, temperature: float) -> SimilarityMatrix:
    """Temperature softmax per row with max-subtraction stabilization."""
    if temperature <= 0:
        raise NonPositiveTemperatureError(f"temperature {temperature} <= 0")
    z = _as_matrix(logits) / temperature
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)
    return SimilarityMatrix(p, temperature=temperature)
