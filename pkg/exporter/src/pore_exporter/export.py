"""Export last-text-token attention traces from a causal LM.

A forward hook on one decoder layer's attention module captures the
(batch, heads, query, key) weight tensor during prefill.  The final
query row — the last text token attending over everything before it —
is averaged across heads, sliced to the visual token range, and
renormalized to sum 1 over that range.  Each sample becomes one JSON
line in the trace format the ``pore`` package reads.

The model's own softmax spans the whole sequence, text tokens included,
so the visual slice does not sum to 1 on its own; renormalizing puts the
scores on the footing the downstream tooling expects.

Dataset records (JSONL, one object per line) come in two forms:

    {"id": "...", "input_ids": [...]}
        A full, already-spliced input sequence.  The visual token range
        comes from the configured ``visual_range``.

    {"id": "...", "image_ids": [...], "prompt": "..."}
        The visual stand-in tokens plus a text prompt; the sequence is
        their concatenation and the visual range is exactly the
        ``image_ids`` span.  Needs a tokenizer next to the model.

A sample whose layout doesn't work out (range out of bounds, nothing
after the visual span to act as the query, a grid that doesn't tile)
becomes one line in a ``<out>.errors.jsonl`` sidecar and the export
moves on; the main output stays a valid trace file throughout.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import torch


class ExportError(Exception):
    """The export as a whole cannot proceed (model, layer, dataset file)."""


class SampleError(Exception):
    """One sample is unusable; recorded in the sidecar, export continues."""


@dataclass(frozen=True)
class ExportConfig:
    model: str
    layer: int
    dataset: str
    out: str
    visual_range: tuple[int, int] | None = None  # [start, end) for input_ids records
    grid: tuple[int, int] | None = None
    device: str = "cpu"

    def __post_init__(self):
        if self.layer < 0:
            raise ValueError(f"layer must be >= 0, got {self.layer}")
        if self.visual_range is not None:
            s, e = self.visual_range
            if s < 0 or e <= s:
                raise ValueError(f"visual range [{s}, {e}) is empty or negative")
        if self.grid is not None and min(self.grid) < 1:
            raise ValueError(f"grid dimensions must be >= 1, got {self.grid}")


@dataclass
class ExportResult:
    exported: int
    errors: int
    out: Path
    errors_path: Path | None  # None when every sample exported cleanly


def _load_model(cfg: ExportConfig):
    """Load the model and return (model, attention module of cfg.layer)."""
    from transformers import AutoModelForCausalLM

    try:
        model = AutoModelForCausalLM.from_pretrained(
            cfg.model, attn_implementation="eager", dtype=torch.float32
        )
    except (OSError, ValueError) as exc:
        raise ExportError(f"cannot load model {cfg.model!r}: {exc}") from exc
    model.to(cfg.device)
    model.eval()

    decoder = model.get_decoder() if hasattr(model, "get_decoder") else model
    layers = getattr(decoder, "layers", None)
    if layers is None:
        raise ExportError(f"cannot locate decoder layers on {type(model).__name__}")
    if cfg.layer >= len(layers):
        raise ExportError(f"--layer {cfg.layer} out of range for {len(layers)}-layer model")
    attn = getattr(layers[cfg.layer], "self_attn", None)
    if attn is None:
        raise ExportError(f"decoder layer {cfg.layer} has no self_attn module")
    return model, attn


def _int_ids(field: str, value) -> list[int]:
    if not isinstance(value, list) or not value:
        raise SampleError(f"{field} must be a nonempty list of token ids")
    for t in value:
        if isinstance(t, bool) or not isinstance(t, int) or t < 0:
            raise SampleError(f"{field} contains a non-token entry: {t!r}")
    return value


def _sequence_for(record: dict, cfg: ExportConfig, tokenize) -> tuple[list[int], int, int]:
    """Resolve a dataset record to (input_ids, visual_start, visual_end)."""
    has_ids = "input_ids" in record
    has_pair = "image_ids" in record or "prompt" in record
    if has_ids == has_pair:
        raise SampleError("record needs either input_ids or image_ids+prompt")
    if has_ids:
        ids = _int_ids("input_ids", record["input_ids"])
        if cfg.visual_range is None:
            raise SampleError("record has input_ids but no visual range was configured")
        start, end = cfg.visual_range
    else:
        image_ids = _int_ids("image_ids", record.get("image_ids"))
        prompt = record.get("prompt")
        if not isinstance(prompt, str):
            raise SampleError("prompt must be a string")
        prompt_ids = tokenize(prompt)
        if not prompt_ids:
            raise SampleError("prompt tokenized to zero tokens")
        ids = image_ids + prompt_ids
        start, end = 0, len(image_ids)
    if end > len(ids):
        raise SampleError(
            f"visual range [{start}, {end}) exceeds sequence length {len(ids)}"
        )
    if end == len(ids):
        # the query must be a text token after the visual span
        raise SampleError("visual range covers the last position; no text token to query")
    return ids, start, end


def _infer_grid(config, n: int) -> tuple[int, int] | None:
    """Patch grid from a vision config, when the model carries one and it tiles n."""
    vision = getattr(config, "vision_config", None)
    size = getattr(vision, "image_size", None)
    patch = getattr(vision, "patch_size", None)
    if not size or not patch:
        return None
    g = size // patch
    return (g, g) if g * g == n else None


def export_traces(cfg: ExportConfig) -> ExportResult:
    model, attn_module = _load_model(cfg)
    dataset = Path(cfg.dataset)
    if not dataset.is_file():
        raise ExportError(f"dataset not readable: {dataset}")

    tokenizer_box: list = []  # lazy; loaded at most once, failure cached

    def tokenize(text: str) -> list[int]:
        if not tokenizer_box:
            from transformers import AutoTokenizer

            try:
                tokenizer_box.append(AutoTokenizer.from_pretrained(cfg.model))
            except Exception as exc:
                tokenizer_box.append(SampleError(f"tokenizer unavailable: {exc}"))
        loaded = tokenizer_box[0]
        if isinstance(loaded, SampleError):
            raise loaded
        return loaded(text, add_special_tokens=False)["input_ids"]

    captured: dict = {}
    hook = attn_module.register_forward_hook(
        lambda module, args, output: captured.__setitem__("weights", output[1])
    )

    out_path = Path(cfg.out)
    errors_path = out_path.with_name(out_path.name + ".errors.jsonl")
    exported = errors = 0
    error_fh = None
    try:
        with open(dataset) as src, open(out_path, "w") as dst:
            for lineno, line in enumerate(src, start=1):
                if not line.strip():
                    continue
                sample_id = None
                try:
                    try:
                        record = json.loads(line)
                    except json.JSONDecodeError as exc:
                        raise SampleError(f"invalid JSON: {exc}") from None
                    if not isinstance(record, dict):
                        raise SampleError("record is not an object")
                    sample_id = record.get("id")
                    if not isinstance(sample_id, str) or not sample_id:
                        sample_id = None
                        raise SampleError("record needs a nonempty string id")
                    trace = _export_one(model, cfg, record, tokenize, captured)
                except SampleError as exc:
                    errors += 1
                    if error_fh is None:
                        error_fh = open(errors_path, "w")
                    error_fh.write(json.dumps(
                        {"id": sample_id, "line": lineno, "error": str(exc)},
                        separators=(",", ":"),
                    ) + "\n")
                    continue
                dst.write(json.dumps(trace, separators=(",", ":"), allow_nan=False) + "\n")
                exported += 1
    finally:
        hook.remove()
        if error_fh is not None:
            error_fh.close()
    return ExportResult(exported, errors, out_path, errors_path if errors else None)


def _export_one(model, cfg: ExportConfig, record: dict, tokenize, captured: dict) -> dict:
    ids, start, end = _sequence_for(record, cfg, tokenize)
    n = end - start

    captured.clear()
    with torch.no_grad():
        model(
            input_ids=torch.tensor([ids], dtype=torch.long, device=cfg.device),
            use_cache=False,
        )
    weights = captured.get("weights")
    if weights is None:
        raise ExportError("attention weights were not captured; is the eager path active?")

    row = weights[0, :, -1, :].mean(dim=0).double()  # head-averaged last-query row
    visual = row[start:end]
    total = float(visual.sum())
    if not total > 0:
        raise SampleError("attention mass over the visual range is zero")
    scores = (visual / total).tolist()
    if not all(s >= 0 and s == s for s in scores):
        raise SampleError("attention over the visual range is not finite and nonnegative")

    trace: dict = {"id": record["id"], "n": n}
    grid = cfg.grid or _infer_grid(model.config, n)
    if grid is not None:
        rows, cols = grid
        if rows * cols != n:
            raise SampleError(f"grid {rows}x{cols} does not tile {n} tokens")
        trace["grid"] = [rows, cols]
    trace["layer"] = cfg.layer
    trace["attn"] = scores
    return trace
