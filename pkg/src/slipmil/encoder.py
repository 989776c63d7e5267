"""Deterministic differentiable text encoder with learnable prompt contexts.

A hashing vocabulary maps tokens to rows of a frozen seeded table; the
encoder mean-pools the sequence (optionally prefixed by learnable context
vectors), projects to the visual dimension and unit-normalizes. Gradients
with respect to the context are analytic.
"""
from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass

import numpy as np

from .core import NORM_EPS
from .errors import EmptySequenceError, ZeroVectorError

_TOKEN_RE = re.compile(r"[0-9a-z]+")

DEFAULT_HASH_BUCKETS = 4096
DEFAULT_D_T = 16
DEFAULT_D_V = 32


@dataclass(frozen=True)
class Vocabulary:
    """Stable hashing tokenizer: lowercase, split on non-alphanumeric runs."""

    hash_buckets: int = DEFAULT_HASH_BUCKETS
    seed: int = 0

    def token_id(self, token: str) -> int:
        key = (self.seed & 0xFFFFFFFFFFFFFFFF).to_bytes(8, "little")
        digest = hashlib.blake2b(token.encode("utf-8"), key=key, digest_size=8)
        return int.from_bytes(digest.digest(), "little") % self.hash_buckets

    def tokenize(self, text: str) -> list[int]:
        return [self.token_id(t) for t in _TOKEN_RE.findall(text.lower())]


@dataclass(frozen=True)
class FrozenEncoderWeights:
    """Seeded token table and projection; never modified after construction."""

    token_table: np.ndarray  # hash_buckets x d_t
    projection: np.ndarray  # d_t x d_v
    vocab: Vocabulary
    seed: int

    @classmethod
    def create(
        cls,
        seed: int,
        d_t: int = DEFAULT_D_T,
        d_v: int = DEFAULT_D_V,
        hash_buckets: int = DEFAULT_HASH_BUCKETS,
    ) -> "FrozenEncoderWeights":
        rng = np.random.default_rng(seed)
        scale = 1.0 / np.sqrt(d_t)
        token_table = rng.uniform(-scale, scale, size=(hash_buckets, d_t))
        projection = rng.uniform(-scale, scale, size=(d_t, d_v))
        return cls(
            token_table=token_table,
            projection=projection,
            vocab=Vocabulary(hash_buckets=hash_buckets, seed=seed),
            seed=seed,
        )

    @property
    def d_t(self) -> int:
        return self.token_table.shape[1]

    @property
    def d_v(self) -> int:
        return self.projection.shape[1]


@dataclass(frozen=True)
class PromptContext:
    """Learnable context vectors; the only trainable parameters anywhere."""

    vectors: np.ndarray  # M x d_t, M may be 0
    shared_across_classes: bool = True

    def __post_init__(self):
        arr = np.asarray(self.vectors, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError("context vectors must be an M x d_t matrix")
        if not np.all(np.isfinite(arr)):
            raise ValueError("context vectors must be finite")
        object.__setattr__(self, "vectors", arr)

    @property
    def length(self) -> int:
        return self.vectors.shape[0]

    @classmethod
    def init(cls, rng: np.random.Generator, length: int, d_t: int,
             scale: float = 0.01, shared: bool = True) -> "PromptContext":
        return cls(rng.uniform(-scale, scale, size=(length, d_t)),
                   shared_across_classes=shared)


def _sequence(weights: FrozenEncoderWeights, context, text: str) -> np.ndarray:
    parts = []
    if context is not None and context.length > 0:
        parts.append(context.vectors)
    ids = weights.vocab.tokenize(text)
    if ids:
        parts.append(weights.token_table[ids])
    if not parts:
        raise EmptySequenceError(f"no tokens and no context for text {text!r}")
    return np.vstack(parts)


def encode_text(weights: FrozenEncoderWeights, text: str,
                context: PromptContext | None = None) -> np.ndarray:
    """Mean-pool the (context + token) sequence, project, unit-normalize."""
    seq = _sequence(weights, context, text)
    h = seq.mean(axis=0)
    e = h @ weights.projection
    n = np.linalg.norm(e)
    if n < NORM_EPS:
        raise ZeroVectorError(f"projected embedding norm {n:.3e} < 1e-12")
    return e / n


def encode_text_grad(weights: FrozenEncoderWeights, text: str,
                     upstream: np.ndarray,
                     context: PromptContext) -> np.ndarray:
    """Jacobian-transpose product of encode_text w.r.t. the context rows.

    Chains through the output normalization, the projection and the mean
    pooling; every context row receives 1/L of the mean gradient.
    """
    if context is None:
        raise EmptySequenceError("gradient requires a prompt context")
    upstream = np.asarray(upstream, dtype=np.float64)
    seq = _sequence(weights, context, text)
    h = seq.mean(axis=0)
    e = h @ weights.projection
    n = np.linalg.norm(e)
    if n < NORM_EPS:
        raise ZeroVectorError(f"projected embedding norm {n:.3e} < 1e-12")
    out = e / n
    g_e = (upstream - (upstream @ out) * out) / n
    g_h = weights.projection @ g_e
    row_grad = g_h / seq.shape[0]
    return np.tile(row_grad, (context.length, 1))
