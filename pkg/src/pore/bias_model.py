"""Recency-bias estimation: dataset mean profile and exponential fit.

The content-agnostic positional factor is estimated by averaging the
attention each token index receives across a calibration corpus, then
fitting the averaged curve with a parametric exponential over the 1-D
sequence index:

    exp2:  P(i) = a * exp(b * i)           (log-space ordinary least squares)
    exp3:  P(i) = a * exp(b * i) + c       (damped Gauss-Newton, exp2 init)

Fitted profiles are normalized to mean 1 so reweighted scores stay on the
scale of the raw attention; pruning is rank-based, so the scaling is
decision-neutral.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, replace
from typing import Iterable

import numpy as np

from .attn_core import SUM_TOL, AttentionTrace
from .errors import FitDivergenceError, SchemaError

FORM_EXP2 = "exp2"
FORM_EXP3 = "exp3"
FORMS = (FORM_EXP2, FORM_EXP3)

FORMAT_VERSION = 1

# Corpora smaller than this give a noisy mean; fitting still proceeds.
MIN_RECOMMENDED_SAMPLES = 100

GN_MAX_ITER = 200
GN_PARAM_TOL = 1e-10


@dataclass(frozen=True)
class MeanProfile:
    """Elementwise mean of a corpus of attention traces."""

    mean_scores: np.ndarray
    m_samples: int

    def __post_init__(self):
        scores = np.array(self.mean_scores, dtype=np.float64)
        if scores.ndim != 1 or scores.size < 1:
            raise SchemaError("mean_scores must be a non-empty 1-D sequence")
        if self.m_samples < 1:
            raise SchemaError(f"m_samples must be >= 1, got {self.m_samples}")
        total = float(scores.sum())
        if abs(total - 1.0) > SUM_TOL:
            raise SchemaError(f"mean_scores sum to {total!r}, expected 1 within {SUM_TOL}")
        scores.flags.writeable = False
        object.__setattr__(self, "mean_scores", scores)

    @property
    def n(self) -> int:
        return self.mean_scores.size


@dataclass(frozen=True)
class BiasProfile:
    """Fitted positional bias curve P(i) = a * exp(b * i) + c, i in [0, n)."""

    form: str
    a: float
    b: float
    c: float
    n: int
    residual: float
    normalized: bool

    def __post_init__(self):
        if self.form not in FORMS:
            raise SchemaError(f"unknown form {self.form!r}, expected one of {FORMS}")
        if self.form == FORM_EXP2 and self.c != 0.0:
            raise SchemaError(f"form {FORM_EXP2!r} requires c == 0, got {self.c!r}")
        if not isinstance(self.n, int) or self.n < 1:
            raise SchemaError(f"n must be a positive integer, got {self.n!r}")
        for name in ("a", "b", "c", "residual"):
            if not math.isfinite(getattr(self, name)):
                raise SchemaError(f"parameter {name} is not finite")
        if self.residual < 0:
            raise SchemaError(f"residual must be >= 0, got {self.residual!r}")
        values = self.curve()
        if np.any(values <= 0):
            i = int(np.flatnonzero(values <= 0)[0])
            raise SchemaError(f"bias curve is not strictly positive at index {i}")
        if self.normalized and abs(float(values.mean()) - 1.0) > 1e-9:
            raise SchemaError("profile flagged normalized but mean(P) != 1 within 1e-9")

    def curve(self, n: int | None = None) -> np.ndarray:
        """Evaluate P on indices 0..n-1."""
        idx = np.arange(self.n if n is None else n, dtype=np.float64)
        return self.a * np.exp(self.b * idx) + self.c


def bias_at(profile: BiasProfile, i: int) -> float:
    """Evaluate the fitted curve at one token index."""
    if not 0 <= i < profile.n:
        raise IndexError(f"token index {i} out of range [0, {profile.n})")
    # index into the vectorized curve so both paths agree bit for bit
    return float(profile.curve()[i])


def mean_attention_profile(traces: Iterable[AttentionTrace]) -> MeanProfile:
    """Average a stream of traces elementwise in a single pass."""
    total = None
    count = 0
    for trace in traces:
        if total is None:
            total = np.zeros(trace.n, dtype=np.float64)
        elif trace.n != total.size:
            raise SchemaError(
                f"trace {trace.sample_id!r}: n={trace.n} does not match corpus n={total.size}"
            )
        total += trace.scores
        count += 1
    if total is None:
        raise SchemaError("cannot average an empty trace stream")
    if count < MIN_RECOMMENDED_SAMPLES:
        warnings.warn(
            f"mean profile averaged over only {count} samples "
            f"(< {MIN_RECOMMENDED_SAMPLES}); the bias estimate may be noisy",
            stacklevel=2,
        )
    return MeanProfile(total / count, count)


def merge_partial_profiles(parts: Iterable[tuple[np.ndarray, int]]) -> MeanProfile:
    """Combine per-worker (mean_scores, m_samples) pairs; partition-independent."""
    total = None
    count = 0
    for mean_scores, part_count in parts:
        arr = np.asarray(mean_scores, dtype=np.float64)
        if part_count < 1:
            raise SchemaError(f"partial profile has m_samples={part_count}")
        if total is None:
            total = arr * part_count
        elif arr.shape != total.shape:
            raise SchemaError(f"partial profile n={arr.size} does not match n={total.size}")
        else:
            total += arr * part_count
        count += part_count
    if total is None:
        raise SchemaError("cannot merge an empty set of partial profiles")
    return MeanProfile(total / count, count)


def _fit_exp2_params(y: np.ndarray) -> tuple[float, float]:
    """Log-space OLS for y ~ a * exp(b * i); returns (a, b)."""
    n = y.size
    if n == 1:
        return float(y[0]), 0.0
    idx = np.arange(n, dtype=np.float64)
    b, log_a = np.polyfit(idx, np.log(y), 1)
    return float(np.exp(log_a)), float(b)


def _fit_exp3_params(y: np.ndarray) -> tuple[float, float, float]:
    """Damped Gauss-Newton for y ~ a * exp(b * i) + c.

    Initialized from the exp2 solution (on positivity-clipped data) with
    c0 = 0. The damping factor grows until a step reduces the sum of
    squares, and shrinks after each accepted step.
    """
    n = y.size
    idx = np.arange(n, dtype=np.float64)
    floor = max(float(y.max()) * 1e-12, np.finfo(np.float64).tiny)
    a, b = _fit_exp2_params(np.clip(y, floor, None))
    c = 0.0
    if n <= 3:
        # With <= 3 points the model is (at most) exactly determined; keep
        # the exp2 solution rather than iterating on a rank-deficient system.
        return a, b, c

    def sse(params):
        pa, pb, pc = params
        r = pa * np.exp(pb * idx) + pc - y
        return float(r @ r), r

    params = np.array([a, b, c], dtype=np.float64)
    best_sse, r = sse(params)
    lam = 1e-3
    for _ in range(GN_MAX_ITER):
        e = np.exp(params[1] * idx)
        jac = np.column_stack([e, params[0] * idx * e, np.ones(n)])
        jtj = jac.T @ jac
        jtr = jac.T @ r
        step = None
        for _ in range(60):
            try:
                candidate = np.linalg.solve(jtj + lam * np.eye(3), -jtr)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            if not np.all(np.isfinite(candidate)):
                raise FitDivergenceError(
                    "non-finite Gauss-Newton step", last_params=tuple(params)
                )
            new_params = params + candidate
            new_sse, new_r = sse(new_params)
            if not math.isfinite(new_sse):
                raise FitDivergenceError(
                    "non-finite residual during Gauss-Newton", last_params=tuple(params)
                )
            if new_sse <= best_sse:
                step = candidate
                params, best_sse, r = new_params, new_sse, new_r
                lam = max(lam * 0.1, 1e-15)
                break
            lam *= 10.0
        if step is None or float(np.max(np.abs(step))) < GN_PARAM_TOL:
            break
    return float(params[0]), float(params[1]), float(params[2])


def fit_bias(profile: MeanProfile, form: str = FORM_EXP2) -> BiasProfile:
    """Fit the bias curve to a mean profile and normalize it to mean 1.

    The reported residual is the RMS gap between the normalized curve and
    the mean profile rescaled to mean 1.
    """
    if form not in FORMS:
        raise SchemaError(f"unknown form {form!r}, expected one of {FORMS}")
    y = profile.mean_scores
    if form == FORM_EXP2:
        if np.any(y <= 0):
            i = int(np.flatnonzero(y <= 0)[0])
            raise SchemaError(
                f"mean score at index {i} is not positive; "
                f"log-space fitting needs positive data (use form {FORM_EXP3!r})"
            )
        a, b = _fit_exp2_params(y)
        c = 0.0
    else:
        a, b, c = _fit_exp3_params(y)

    idx = np.arange(profile.n, dtype=np.float64)
    scale = float(np.mean(a * np.exp(b * idx) + c))
    if not math.isfinite(scale) or scale <= 0:
        raise FitDivergenceError(
            f"fitted curve has nonpositive mean {scale!r}", last_params=(a, b, c)
        )
    a /= scale
    c /= scale
    curve = a * np.exp(b * idx) + c
    target = y / float(y.mean())
    residual = float(np.sqrt(np.mean((curve - target) ** 2)))
    return BiasProfile(form=form, a=a, b=b, c=c, n=profile.n, residual=residual, normalized=True)


def normalize_bias(profile: BiasProfile) -> BiasProfile:
    """Rescale a profile so mean(P) = 1; pruning decisions are unchanged."""
    scale = float(profile.curve().mean())
    return replace(
        profile, a=profile.a / scale, c=profile.c / scale, normalized=True
    )


def save_bias(profile: BiasProfile, path) -> None:
    """Write a profile as a single JSON object (decimal floats, round-trip exact)."""
    record = {
        "format_version": FORMAT_VERSION,
        "form": profile.form,
        "a": profile.a,
        "b": profile.b,
        "c": profile.c,
        "n": profile.n,
        "residual": profile.residual,
        "normalized": profile.normalized,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(record, fh)
        fh.write("\n")


def load_bias(path) -> BiasProfile:
    """Read a profile written by :func:`save_bias`, revalidating all invariants."""
    try:
        fh = open(path, "r", encoding="utf-8")
    except OSError as exc:
        raise SchemaError(f"{path}: cannot read: {exc}") from exc
    with fh:
        try:
            record = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    if not isinstance(record, dict):
        raise SchemaError(f"{path}: expected a JSON object")
    version = record.get("format_version")
    if version != FORMAT_VERSION:
        raise SchemaError(f"{path}: unsupported format_version {version!r}")
    missing = [k for k in ("form", "a", "b", "c", "n", "residual", "normalized") if k not in record]
    if missing:
        raise SchemaError(f"{path}: missing field(s) {', '.join(missing)}")
    if not isinstance(record["n"], int) or isinstance(record["n"], bool):
        raise SchemaError(f"{path}: field 'n' must be an integer")
    if not isinstance(record["normalized"], bool):
        raise SchemaError(f"{path}: field 'normalized' must be a boolean")
    try:
        return BiasProfile(
            form=record["form"],
            a=float(record["a"]),
            b=float(record["b"]),
            c=float(record["c"]),
            n=record["n"],
            residual=float(record["residual"]),
            normalized=record["normalized"],
        )
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"{path}: {exc}") from exc
