"""Pruning-quality metrics against planted ground truth.

Recall and rank correlation measure how well a keep-set recovers the
planted content ordering; the positional slope measures how tilted a mean
profile is toward late indices, before and after bias correction.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .bias_model import MeanProfile
from .errors import SchemaError
from .pruner import METHOD_FASTV, METHOD_PORE, PruneDecision

REPORT_FIELDS = ("method", "ratio", "recall_at_k", "rank_corr", "positional_slope", "samples")
PER_SAMPLE_FIELDS = ("sample_id", "method", "ratio", "recall", "rank_corr")


@dataclass(frozen=True)
class EvalReport:
    """Corpus-level pruning quality for one method at one ratio.

    rank_corr and positional_slope are NaN when the decisions carry no
    scores to correlate (minimal decision records).
    """

    method: str
    ratio: float
    recall_at_k: float
    rank_corr: float
    positional_slope: float
    samples: int

    def __post_init__(self):
        if self.method not in (METHOD_FASTV, METHOD_PORE):
            raise SchemaError(f"unknown method {self.method!r}")
        if not 0.0 <= self.ratio < 1.0:
            raise SchemaError(f"ratio must be in [0, 1), got {self.ratio!r}")
        if not 0.0 <= self.recall_at_k <= 1.0:
            raise SchemaError(f"recall_at_k must be in [0, 1], got {self.recall_at_k!r}")
        if np.isfinite(self.rank_corr) and not -1.0 <= self.rank_corr <= 1.0:
            raise SchemaError(f"rank_corr must be in [-1, 1], got {self.rank_corr!r}")
        if self.samples < 1:
            raise SchemaError(f"samples must be >= 1, got {self.samples}")


@dataclass(frozen=True)
class SampleEval:
    """Per-sample metric row, the long-form CSV unit."""

    sample_id: str
    method: str
    ratio: float
    recall: float
    rank_corr: float


def recall_at_k(decision: PruneDecision, truth_topk) -> float:
    """Fraction of the ground-truth top-k that the decision kept."""
    truth = frozenset(int(i) for i in truth_topk)
    if len(truth) != decision.retain_k:
        raise SchemaError(
            f"decision {decision.sample_id!r}: truth_topk has {len(truth)} indices, "
            f"expected retain_k={decision.retain_k}"
        )
    return len(decision.kept_set & truth) / decision.retain_k


def _average_ranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks; ties get the mean of the rank span they occupy."""
    order = np.argsort(values, kind="stable")
    sorted_vals = values[order]
    ranks = np.empty(values.size, dtype=np.float64)
    i = 0
    while i < values.size:
        j = i
        while j + 1 < values.size and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def spearman(x, y) -> float:
    """Spearman rank correlation with average-rank tie handling.

    A constant input has no ordering to correlate; that case is defined
    as 0.0 and flagged with a warning rather than raising.
    """
    xa = np.asarray(x, dtype=np.float64)
    ya = np.asarray(y, dtype=np.float64)
    if xa.ndim != 1 or ya.ndim != 1 or xa.size != ya.size:
        raise SchemaError(f"spearman needs equal-length 1-D inputs, got {xa.shape} and {ya.shape}")
    if xa.size < 2:
        raise SchemaError("spearman needs at least 2 points")
    if not (np.all(np.isfinite(xa)) and np.all(np.isfinite(ya))):
        raise SchemaError("spearman inputs must be finite")
    rx = _average_ranks(xa)
    ry = _average_ranks(ya)
    dx = rx - rx.mean()
    dy = ry - ry.mean()
    vx = float(dx @ dx)
    vy = float(dy @ dy)
    if vx == 0.0 or vy == 0.0:
        warnings.warn("spearman: zero rank variance, correlation defined as 0", stacklevel=2)
        return 0.0
    return float((dx @ dy) / np.sqrt(vx * vy))


def _profile_values(profile) -> np.ndarray:
    if isinstance(profile, MeanProfile):
        return profile.mean_scores
    arr = np.asarray(profile, dtype=np.float64)
    if arr.ndim != 1 or arr.size < 1:
        raise SchemaError("profile must be a non-empty 1-D sequence")
    if not np.all(np.isfinite(arr)):
        raise SchemaError("profile must be finite")
    return arr


def positional_slope(profile) -> float:
    """Dimensionless tilt of a profile: OLS slope vs index, times n / mean.

    Positive means later tokens carry more weight. Relative scaling keeps
    thresholds meaningful whether the profile sums to 1 or not.
    """
    y = _profile_values(profile)
    if y.size < 2:
        raise SchemaError(f"positional_slope needs n >= 2, got {y.size}")
    if y.max() == y.min():
        return 0.0
    mean = float(y.mean())
    if mean <= 0.0:
        raise SchemaError("positional_slope needs a positive mean level")
    idx = np.arange(y.size, dtype=np.float64)
    di = idx - idx.mean()
    slope = float((di @ (y - mean)) / (di @ di))
    return slope * y.size / mean


def grid_heatmap_export(profile, grid: tuple[int, int], path) -> None:
    """Write the profile as a rows x cols CSV matrix (row-major reshape)."""
    y = _profile_values(profile)
    rows, cols = int(grid[0]), int(grid[1])
    if rows < 1 or cols < 1 or rows * cols != y.size:
        raise SchemaError(f"grid {rows}x{cols} does not tile a profile of length {y.size}")
    mat = y.reshape(rows, cols)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        for row in mat:
            writer.writerow([repr(float(v)) for v in row])


def _fmt(value) -> str:
    return repr(float(value)) if isinstance(value, float) else str(value)


def write_report_csv(reports: Sequence[EvalReport], path) -> None:
    """One row per method x ratio."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(REPORT_FIELDS)
        for r in reports:
            writer.writerow(
                [r.method, _fmt(r.ratio), _fmt(r.recall_at_k), _fmt(r.rank_corr),
                 _fmt(r.positional_slope), r.samples]
            )


def write_per_sample_csv(rows: Sequence[SampleEval], path) -> None:
    """Long-form per-sample rows for external plotting."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(PER_SAMPLE_FIELDS)
        for r in rows:
            writer.writerow(
                [r.sample_id, r.method, _fmt(r.ratio), _fmt(r.recall), _fmt(r.rank_corr)]
            )
