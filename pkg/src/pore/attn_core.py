"""Last-text-token attention over visual tokens.

A trace is the normalized attention distribution of the final text token
over the N visual tokens of one sample, averaged across heads. Traces are
always stored normalized over the visual tokens only; producers whose
softmax spans the whole sequence must pass their raw slice through
:func:`renormalize`. Grid layout, when present, is row-major
(index = row * cols + col).

All arithmetic is float64 and all operations here are pure functions on
immutable inputs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import SchemaError

# Tolerance on sum(scores) == 1 for a valid trace.
SUM_TOL = 1e-6


def _check_finite(arr: np.ndarray, name: str) -> None:
    bad = np.flatnonzero(~np.isfinite(arr.reshape(-1)))
    if bad.size:
        raise SchemaError(f"{name} has non-finite entry at flat index {bad[0]}")


@dataclass(frozen=True)
class AttentionTrace:
    """One sample's attention distribution over its visual tokens."""

    sample_id: str
    scores: np.ndarray
    grid: tuple[int, int] | None = None
    layer: int = 0

    def __post_init__(self):
        scores = np.array(self.scores, dtype=np.float64)
        if scores.ndim != 1 or scores.size < 1:
            raise SchemaError(f"trace {self.sample_id!r}: scores must be a non-empty 1-D sequence")
        _check_finite(scores, f"trace {self.sample_id!r}: scores")
        if np.any(scores < 0):
            i = int(np.flatnonzero(scores < 0)[0])
            raise SchemaError(f"trace {self.sample_id!r}: negative score at index {i}")
        total = float(scores.sum())
        if abs(total - 1.0) > SUM_TOL:
            raise SchemaError(
                f"trace {self.sample_id!r}: scores sum to {total!r}, expected 1 within {SUM_TOL}"
            )
        if self.grid is not None:
            rows, cols = self.grid
            if rows < 1 or cols < 1 or rows * cols != scores.size:
                raise SchemaError(
                    f"trace {self.sample_id!r}: grid {rows}x{cols} does not cover n={scores.size}"
                )
            object.__setattr__(self, "grid", (int(rows), int(cols)))
        scores.flags.writeable = False
        object.__setattr__(self, "scores", scores)

    @property
    def n(self) -> int:
        return self.scores.size


@dataclass(frozen=True)
class QueryKeyBlock:
    """Query of the last text token plus the key matrix of the visual tokens."""

    q_last: np.ndarray
    keys: np.ndarray

    def __post_init__(self):
        q = np.array(self.q_last, dtype=np.float64)
        k = np.array(self.keys, dtype=np.float64)
        if q.ndim != 1 or q.size < 1:
            raise SchemaError("q_last must be a non-empty 1-D vector")
        if k.ndim != 2 or k.shape[0] < 1 or k.shape[1] != q.size:
            raise SchemaError(f"keys must be (n, {q.size}), got shape {k.shape}")
        _check_finite(q, "q_last")
        for i in range(k.shape[0]):
            if not np.all(np.isfinite(k[i])):
                raise SchemaError(f"keys row {i} has a non-finite entry")
        q.flags.writeable = False
        k.flags.writeable = False
        object.__setattr__(self, "q_last", q)
        object.__setattr__(self, "keys", k)

    @property
    def d(self) -> int:
        return self.q_last.size

    @property
    def n(self) -> int:
        return self.keys.shape[0]


def softmax(logits: np.ndarray) -> np.ndarray:
    """Numerically stable softmax (max is subtracted before exponentiation)."""
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max()
    e = np.exp(shifted)
    return e / e.sum()


def scaled_logits(block: QueryKeyBlock) -> np.ndarray:
    """Pre-softmax attention logits: keys @ q_last / sqrt(d)."""
    return block.keys @ block.q_last / np.sqrt(block.d)


def last_token_attention(
    block: QueryKeyBlock,
    sample_id: str = "",
    grid: tuple[int, int] | None = None,
    layer: int = 0,
) -> AttentionTrace:
    """Single-head attention of the last text token over the visual tokens."""
    return AttentionTrace(sample_id, softmax(scaled_logits(block)), grid=grid, layer=layer)


def average_heads(traces: Sequence[AttentionTrace], heads: int | None = None) -> AttentionTrace:
    """Elementwise mean of per-head traces; the mean is again a distribution."""
    if len(traces) == 0:
        raise SchemaError("average_heads needs at least one head")
    if heads is not None and len(traces) != heads:
        raise SchemaError(f"expected {heads} head traces, got {len(traces)}")
    first = traces[0]
    for t in traces[1:]:
        if t.n != first.n:
            raise SchemaError(
                f"trace {t.sample_id!r}: head length {t.n} != {first.n} of first head"
            )
    mean = np.mean([t.scores for t in traces], axis=0)
    return AttentionTrace(first.sample_id, mean, grid=first.grid, layer=first.layer)


def renormalize(
    raw_scores: np.ndarray,
    sample_id: str = "",
    grid: tuple[int, int] | None = None,
    layer: int = 0,
) -> AttentionTrace:
    """Rescale nonnegative raw scores so they sum to 1 over the visual tokens.

    Adapts scores exported from softmaxes that span more than the visual
    tokens. Rejects all-zero input: a trace with no attention mass on the
    visual tokens carries no ranking signal.
    """
    raw = np.asarray(raw_scores, dtype=np.float64)
    if raw.ndim != 1 or raw.size < 1:
        raise SchemaError(f"trace {sample_id!r}: raw scores must be a non-empty 1-D sequence")
    _check_finite(raw, f"trace {sample_id!r}: raw scores")
    if np.any(raw < 0):
        i = int(np.flatnonzero(raw < 0)[0])
        raise SchemaError(f"trace {sample_id!r}: negative raw score at index {i}")
    total = raw.sum()
    if total <= 0.0:
        raise SchemaError(f"trace {sample_id!r}: no attention mass on visual tokens")
    return AttentionTrace(sample_id, raw / total, grid=grid, layer=layer)
