"""Position-reweighted visual token pruning.

Attention from the last text token to visual tokens mixes content with a
positional bias that favors late tokens. This package estimates the bias
from a corpus, divides it out, and prunes on the corrected scores; it
also ships a synthetic-corpus generator with planted ground truth, a
pruning-quality evaluator, and a prefill FLOPs estimator, all wired into
the ``pore`` command-line tool.
"""

from .attn_core import (
    AttentionTrace,
    QueryKeyBlock,
    average_heads,
    last_token_attention,
    renormalize,
)
from .bias_model import (
    BiasProfile,
    MeanProfile,
    bias_at,
    fit_bias,
    load_bias,
    mean_attention_profile,
    save_bias,
)
from .cost_model import CostConfig, flops_estimate, ratio_table
from .errors import FitDivergenceError, SchemaError
from .eval_metrics import (
    EvalReport,
    grid_heatmap_export,
    positional_slope,
    recall_at_k,
    spearman,
)
from .pruner import (
    PruneConfig,
    PruneDecision,
    decision_overlap,
    prune,
    prune_corpus,
    retained_count,
    reweight,
)
from .synth_gen import SynthSample, SynthSpec, generate_corpus, toy_attention_trace

__version__ = "0.1.0"

__all__ = [
    "AttentionTrace",
    "BiasProfile",
    "CostConfig",
    "EvalReport",
    "FitDivergenceError",
    "MeanProfile",
    "PruneConfig",
    "PruneDecision",
    "QueryKeyBlock",
    "SchemaError",
    "SynthSample",
    "SynthSpec",
    "average_heads",
    "bias_at",
    "decision_overlap",
    "fit_bias",
    "flops_estimate",
    "generate_corpus",
    "grid_heatmap_export",
    "last_token_attention",
    "load_bias",
    "mean_attention_profile",
    "positional_slope",
    "prune",
    "prune_corpus",
    "ratio_table",
    "recall_at_k",
    "renormalize",
    "retained_count",
    "reweight",
    "save_bias",
    "spearman",
    "toy_attention_trace",
]
