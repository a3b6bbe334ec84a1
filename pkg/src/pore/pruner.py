"""Token selection: raw-attention baseline and position-reweighted criterion.

Both methods keep the highest-scoring tokens and discard the rest. The
baseline (``fastv``) ranks by the raw attention a token receives; the
reweighted criterion (``pore``) first divides each score by the fitted
positional bias, so tokens are ranked by content rather than position.
Ties break toward the lower index, which makes every decision
deterministic and slightly favors early tokens.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .attn_core import AttentionTrace
from .bias_model import BiasProfile
from .errors import SchemaError

METHOD_FASTV = "fastv"
METHOD_PORE = "pore"
METHODS = (METHOD_FASTV, METHOD_PORE)


@dataclass(frozen=True)
class PruneConfig:
    """Pruning ratio, selection method, and (for ``pore``) the bias profile."""

    ratio: float
    method: str
    bias: BiasProfile | None = None

    def __post_init__(self):
        if not 0.0 <= self.ratio < 1.0:
            raise SchemaError(f"ratio must be in [0, 1), got {self.ratio!r}")
        if self.method not in METHODS:
            raise SchemaError(f"unknown method {self.method!r}, expected one of {METHODS}")
        if self.method == METHOD_PORE and self.bias is None:
            raise SchemaError(f"method {METHOD_PORE!r} requires a bias profile")


@dataclass(frozen=True)
class PruneDecision:
    """Retained token indices plus the scores that produced the selection."""

    sample_id: str
    method: str
    ratio: float
    retain_k: int
    kept: tuple[int, ...]
    scores_used: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.retain_k < 1:
            raise SchemaError(f"retain_k must be >= 1, got {self.retain_k}")
        kept = tuple(int(i) for i in self.kept)
        if len(kept) != self.retain_k:
            raise SchemaError(f"kept has {len(kept)} indices, retain_k={self.retain_k}")
        if any(b <= a for a, b in zip(kept, kept[1:])):
            raise SchemaError("kept indices must be strictly increasing")
        if kept and kept[0] < 0:
            raise SchemaError(f"kept index {kept[0]} out of range")
        object.__setattr__(self, "kept", kept)
        if self.scores_used is not None:
            scores = np.array(self.scores_used, dtype=np.float64)
            if kept and kept[-1] >= scores.size:
                raise SchemaError(f"kept index {kept[-1]} out of range [0, {scores.size})")
            scores.flags.writeable = False
            object.__setattr__(self, "scores_used", scores)

    @property
    def kept_set(self) -> frozenset[int]:
        return frozenset(self.kept)


def retained_count(n: int, ratio: float) -> int:
    """Tokens kept when pruning a fraction ``ratio`` of n, rounded half-up."""
    if n < 1:
        raise SchemaError(f"n must be >= 1, got {n}")
    if not 0.0 <= ratio < 1.0:
        raise SchemaError(f"ratio must be in [0, 1), got {ratio!r}")
    k = math.floor(n * (1.0 - ratio) + 0.5)
    return min(max(k, 1), n)


def reweight(trace: AttentionTrace, bias: BiasProfile) -> np.ndarray:
    """Divide each score by the positional bias at its index.

    The result is intentionally not renormalized: only the ranking feeds
    selection, and the raw ratios are useful diagnostics.
    """
    if bias.n != trace.n:
        raise SchemaError(
            f"trace {trace.sample_id!r}: bias profile n={bias.n} does not match trace n={trace.n}"
        )
    return trace.scores / bias.curve()


def top_k_indices(scores: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k highest scores; ties prefer the lower index."""
    order = np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable")
    return np.sort(order[:k])


def prune(trace: AttentionTrace, cfg: PruneConfig) -> PruneDecision:
    """Select the tokens to retain for one trace under the given config."""
    if cfg.method == METHOD_PORE:
        scores = reweight(trace, cfg.bias)
    else:
        scores = trace.scores
    k = retained_count(trace.n, cfg.ratio)
    kept = top_k_indices(scores, k)
    return PruneDecision(
        sample_id=trace.sample_id,
        method=cfg.method,
        ratio=cfg.ratio,
        retain_k=k,
        kept=tuple(int(i) for i in kept),
        scores_used=scores,
    )


def decision_overlap(a: PruneDecision, b: PruneDecision) -> float:
    """Fraction of retained indices the two decisions share."""
    if a.retain_k != b.retain_k:
        raise SchemaError(f"retain_k mismatch: {a.retain_k} != {b.retain_k}")
    return len(a.kept_set & b.kept_set) / a.retain_k


def prune_corpus(traces: Iterable[AttentionTrace], cfg: PruneConfig) -> list[PruneDecision]:
    """Prune every trace in a corpus; per-trace decisions are independent."""
    return [prune(trace, cfg) for trace in traces]
