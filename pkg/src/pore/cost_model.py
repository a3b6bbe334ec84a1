"""Prefill FLOPs estimator for prune-at-layer-K token schedules.

Per-layer cost with n tokens follows the usual decoder accounting:

    4*n*d_model^2  (QKV + output projections)
  + 2*n^2*d_model  (attention scores + weighted values)
  + 2*n*d_model*d_ffn  (feed-forward in + out)

Layers before ``prune_layer`` see all visual and text tokens; layers from
``prune_layer`` on see only the retained visual tokens plus text. This is
an estimate under those stated conventions, not a measurement: activation
functions, norms, and embedding lookups are ignored, as is any KV-cache
effect.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from typing import Sequence

from .errors import SchemaError
from .pruner import retained_count

CONFIG_FIELDS = ("layers", "d_model", "d_ffn", "n_visual", "n_text", "prune_layer", "ratio")
TABLE_FIELDS = ("ratio", "retained", "flops", "fraction_of_baseline")


@dataclass(frozen=True)
class CostConfig:
    """Shape parameters plus the pruning schedule (layer K, keep ratio)."""

    layers: int
    d_model: int
    d_ffn: int
    n_visual: int
    n_text: int
    prune_layer: int = 0
    ratio: float = 0.0

    def __post_init__(self):
        for name in ("layers", "d_model", "d_ffn", "n_visual", "n_text"):
            if getattr(self, name) < 1:
                raise SchemaError(f"{name} must be >= 1, got {getattr(self, name)}")
        if not 0 <= self.prune_layer <= self.layers:
            raise SchemaError(
                f"prune_layer must be in [0, {self.layers}], got {self.prune_layer}"
            )
        if not 0.0 <= self.ratio < 1.0:
            raise SchemaError(f"ratio must be in [0, 1), got {self.ratio!r}")


def layer_flops(n: int, d_model: int, d_ffn: int) -> float:
    """Cost of one decoder layer over n tokens (see module docstring)."""
    n = float(n)
    return 4.0 * n * d_model**2 + 2.0 * n**2 * d_model + 2.0 * n * d_model * d_ffn


def flops_estimate(cfg: CostConfig) -> float:
    """Total prefill FLOPs under the config's prune-at-layer-K schedule."""
    n_full = cfg.n_visual + cfg.n_text
    n_pruned = retained_count(cfg.n_visual, cfg.ratio) + cfg.n_text
    before = cfg.prune_layer * layer_flops(n_full, cfg.d_model, cfg.d_ffn)
    after = (cfg.layers - cfg.prune_layer) * layer_flops(n_pruned, cfg.d_model, cfg.d_ffn)
    return before + after


def ratio_table(cfg_base: CostConfig, ratios: Sequence[float]) -> list[tuple[float, int, float, float]]:
    """(ratio, retained visual tokens, FLOPs, fraction of unpruned baseline) per ratio.

    The baseline is the same config with ratio 0. FLOPs depend on the
    ratio only through the retained count, so distinct ratios that round
    to the same count cost the same.
    """
    if len(ratios) == 0:
        raise SchemaError("ratio_table needs at least one ratio")
    baseline = flops_estimate(replace(cfg_base, ratio=0.0))
    rows = []
    for r in ratios:
        cfg = replace(cfg_base, ratio=float(r))
        flops = flops_estimate(cfg)
        rows.append((float(r), retained_count(cfg.n_visual, cfg.ratio), flops, flops / baseline))
    return rows


def write_ratio_table_csv(rows: Sequence[tuple[float, int, float, float]], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TABLE_FIELDS)
        for ratio, retained, flops, fraction in rows:
            writer.writerow([repr(float(ratio)), retained, repr(float(flops)), repr(float(fraction))])


def read_config(path) -> CostConfig:
    """Parse a key-value config file: one ``name = value`` per line.

    ``#`` starts a comment; blank lines are skipped; ``:`` also separates.
    prune_layer and ratio are optional (default 0); shape fields required.
    """
    values: dict[str, str] = {}
    try:
        with open(path) as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise SchemaError(f"{path}: cannot read config: {exc}") from exc
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        sep = "=" if "=" in line else ":"
        if sep not in line:
            raise SchemaError(f"{path}:{lineno}: expected 'name = value', got {raw!r}")
        name, _, value = (part.strip() for part in line.partition(sep))
        if name not in CONFIG_FIELDS:
            raise SchemaError(f"{path}:{lineno}: unknown config field {name!r}")
        if name in values:
            raise SchemaError(f"{path}:{lineno}: duplicate config field {name!r}")
        values[name] = value
    kwargs = {}
    for name in CONFIG_FIELDS:
        if name not in values:
            continue
        try:
            kwargs[name] = float(values[name]) if name == "ratio" else int(values[name])
        except ValueError as exc:
            raise SchemaError(f"{path}: field {name!r}: {exc}") from exc
    missing = [n for n in ("layers", "d_model", "d_ffn", "n_visual", "n_text") if n not in kwargs]
    if missing:
        raise SchemaError(f"{path}: missing config fields: {', '.join(missing)}")
    try:
        return CostConfig(**kwargs)
    except SchemaError as exc:
        raise SchemaError(f"{path}: {exc}") from exc
