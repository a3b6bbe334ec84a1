"""Synthetic attention corpora with planted content and planted positional bias.

Each sample is built multiplicatively: a content vector (what a pruner
should recover) times a positional bias curve (what it should ignore),
times optional noise, renormalized to a distribution. The planted pieces
are kept as ground truth so pruning quality is measurable exactly.

Random number pipeline
----------------------
All randomness comes from numpy's counter-based Philox4x64 bit generator;
no wall-clock or OS entropy is ever used. Draws for sample ``index`` of a
corpus with seed ``seed`` come from ``np.random.Generator(np.random.Philox
(key=(seed, index)))`` and are made in this exact order:

1. ``standard_normal(n)`` -> z; content = exp(z) (log-normal, unit log-scale)
2. if salient_k > 0: ``choice(n, size=salient_k, replace=False)`` -> planted
   indices; content[planted] *= salience_gain
3. ``uniform(-noise_rel, noise_rel, n)`` -> eps (drawn even when noise_rel
   is 0, so the stream layout does not depend on the noise setting)

raw = content * (exp(bias_b * i) + bias_c) * (1 + eps), then renormalized.
Keying by (seed, index) makes generation partition-independent: any subset
of samples can be produced on any worker with identical results.

The toy attention path draws, for head ``h`` of seed ``seed``, from
``Philox(key=(seed, h))``: ``standard_normal(d)`` for the query, then
``standard_normal((n, d))`` for the keys.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from . import attn_core
from .attn_core import AttentionTrace, QueryKeyBlock
from .errors import SchemaError


@dataclass(frozen=True)
class SynthSpec:
    """Knobs for one synthetic corpus."""

    n: int
    samples: int
    bias_b: float = 0.0
    bias_c: float = 0.0
    salient_k: int = 0
    salience_gain: float = 1.0
    noise_rel: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.n < 1:
            raise SchemaError(f"n must be >= 1, got {self.n}")
        if self.samples < 1:
            raise SchemaError(f"samples must be >= 1, got {self.samples}")
        if not 0 <= self.salient_k <= self.n:
            raise SchemaError(f"salient_k must be in [0, {self.n}], got {self.salient_k}")
        if self.salience_gain < 1.0:
            raise SchemaError(f"salience_gain must be >= 1, got {self.salience_gain!r}")
        if not 0.0 <= self.noise_rel < 1.0:
            # Multiplicative noise beyond +/-100% would break score positivity.
            raise SchemaError(f"noise_rel must be in [0, 1), got {self.noise_rel!r}")
        curve = planted_bias_curve(self.n, self.bias_b, self.bias_c)
        if not np.all(np.isfinite(curve)) or np.any(curve <= 0):
            raise SchemaError(
                f"planted bias curve exp({self.bias_b!r}*i) + {self.bias_c!r} "
                "must be finite and strictly positive on [0, n)"
            )


@dataclass(frozen=True)
class SynthSample:
    """One generated trace plus its ground truth."""

    trace: AttentionTrace
    planted_salient: frozenset[int]
    content_scores: np.ndarray

    def __post_init__(self):
        if not all(0 <= i < self.trace.n for i in self.planted_salient):
            raise SchemaError("planted_salient contains out-of-range indices")
        content = np.array(self.content_scores, dtype=np.float64)
        content.flags.writeable = False
        object.__setattr__(self, "content_scores", content)
        object.__setattr__(self, "planted_salient", frozenset(int(i) for i in self.planted_salient))


def planted_bias_curve(n: int, bias_b: float, bias_c: float) -> np.ndarray:
    """The positional factor baked into generated corpora: exp(b*i) + c."""
    return np.exp(bias_b * np.arange(n, dtype=np.float64)) + bias_c


def rate_for_span_ratio(n: int, ratio: float) -> float:
    """bias_b such that the last index gets ``ratio`` times the first one's factor."""
    if n < 2:
        return 0.0
    return float(np.log(ratio) / (n - 1))


def sample_id_for(index: int) -> str:
    return f"synth-{index:06d}"


def generate_sample(spec: SynthSpec, index: int) -> SynthSample:
    """Generate sample ``index`` of the corpus (see module docstring for draws)."""
    rng = np.random.Generator(np.random.Philox(key=(spec.seed, index)))
    content = np.exp(rng.standard_normal(spec.n))
    if spec.salient_k > 0:
        planted = rng.choice(spec.n, size=spec.salient_k, replace=False)
        content[planted] *= spec.salience_gain
    else:
        planted = np.empty(0, dtype=np.int64)
    eps = rng.uniform(-spec.noise_rel, spec.noise_rel, spec.n)
    raw = content * planted_bias_curve(spec.n, spec.bias_b, spec.bias_c) * (1.0 + eps)
    trace = attn_core.renormalize(raw, sample_id=sample_id_for(index))
    return SynthSample(
        trace=trace,
        planted_salient=frozenset(int(i) for i in planted),
        content_scores=content / content.sum(),
    )


def generate_corpus(spec: SynthSpec) -> Iterator[SynthSample]:
    """Stream the corpus in sample order; fully determined by its SynthSpec."""
    for index in range(spec.samples):
        yield generate_sample(spec, index)


def toy_block(n: int, d: int, seed: int, head: int = 0) -> QueryKeyBlock:
    """Seeded standard-normal query/key block for one head."""
    rng = np.random.Generator(np.random.Philox(key=(seed, head)))
    return QueryKeyBlock(q_last=rng.standard_normal(d), keys=rng.standard_normal((n, d)))


def toy_attention_trace(
    n: int,
    d: int,
    heads: int,
    pos_slope: float,
    seed: int,
    sample_id: str = "",
) -> AttentionTrace:
    """Genuine softmax trace from random weights plus a positional logit ramp.

    ``pos_slope`` adds slope*i to the logit of token i before the softmax,
    reproducing the mechanism that makes later tokens attract extra
    attention; slope 0 gives plain last-token attention on the drawn block.
    """
    if n < 1 or d < 1 or heads < 1:
        raise SchemaError(f"n, d, heads must all be >= 1, got {(n, d, heads)}")
    ramp = pos_slope * np.arange(n, dtype=np.float64)
    per_head = []
    for h in range(heads):
        block = toy_block(n, d, seed, head=h)
        probs = attn_core.softmax(attn_core.scaled_logits(block) + ramp)
        per_head.append(AttentionTrace(sample_id, probs))
    return attn_core.average_heads(per_head, heads=heads)
