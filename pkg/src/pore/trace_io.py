"""Line-delimited JSON file formats tying the pipeline stages together.

Three record kinds, one JSON object per line:

* trace:    {"id", "n", "grid": [rows, cols]?, "layer", "attn": [n floats]}
            or the per-head variant {"id", "n", "grid"?, "layer",
            "heads": [[n floats], ...]} which the reader head-averages
* truth:    {"id", "salient": [ints], "content": [n floats]}
* decision: {"sample_id", "method", "ratio", "retain_k", "kept": [ints],
             "scores": [n floats]?}

Writers emit compact JSON with a fixed key order, so identical inputs
produce byte-identical files. Readers validate every record and report
the file path, line number, and offending id on failure.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Iterator

import numpy as np

from . import attn_core
from .attn_core import AttentionTrace
from .errors import SchemaError
from .pruner import PruneDecision
from .synth_gen import SynthSample


@dataclass(frozen=True)
class TruthRecord:
    """Ground truth for one synthetic sample."""

    sample_id: str
    salient: frozenset[int]
    content: np.ndarray


def record_line(obj: dict) -> str:
    """One record as compact JSON; callers append the newline."""
    return json.dumps(obj, separators=(",", ":"), allow_nan=False)


def _records(path) -> Iterator[tuple[int, dict]]:
    """Yield (line number, parsed object); blank lines are skipped."""
    try:
        fh = open(path)
    except OSError as exc:
        raise SchemaError(f"{path}: cannot read: {exc}") from exc
    with fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"{path}:{lineno}: invalid JSON: {exc.msg}") from exc
            if not isinstance(obj, dict):
                raise SchemaError(f"{path}:{lineno}: expected a JSON object")
            yield lineno, obj


def _field(obj: dict, name: str, where: str):
    if name not in obj:
        raise SchemaError(f"{where}: missing field {name!r}")
    return obj[name]


def _int_field(obj: dict, name: str, where: str) -> int:
    value = _field(obj, name, where)
    if isinstance(value, bool) or not isinstance(value, int):
        raise SchemaError(f"{where}: field {name!r} must be an integer, got {value!r}")
    return value


# ---------------------------------------------------------------- traces

def trace_record(trace: AttentionTrace) -> dict:
    rec: dict = {"id": trace.sample_id, "n": trace.n}
    if trace.grid is not None:
        rec["grid"] = [trace.grid[0], trace.grid[1]]
    rec["layer"] = trace.layer
    rec["attn"] = [float(v) for v in trace.scores]
    return rec


def write_traces(traces: Iterable[AttentionTrace], path) -> None:
    with open(path, "w") as fh:
        for trace in traces:
            fh.write(record_line(trace_record(trace)) + "\n")


def _parse_grid(obj: dict, where: str) -> tuple[int, int] | None:
    if "grid" not in obj or obj["grid"] is None:
        return None
    grid = obj["grid"]
    if (
        not isinstance(grid, list)
        or len(grid) != 2
        or any(isinstance(g, bool) or not isinstance(g, int) for g in grid)
    ):
        raise SchemaError(f"{where}: grid must be [rows, cols] integers, got {grid!r}")
    return (grid[0], grid[1])


def read_traces(path) -> Iterator[AttentionTrace]:
    """Stream validated traces; head-variant records are averaged here."""
    for lineno, obj in _records(path):
        where = f"{path}:{lineno}"
        sample_id = _field(obj, "id", where)
        if not isinstance(sample_id, str):
            raise SchemaError(f"{where}: id must be a string, got {sample_id!r}")
        where = f"{path}:{lineno} (id {sample_id!r})"
        n = _int_field(obj, "n", where)
        grid = _parse_grid(obj, where)
        layer = _int_field(obj, "layer", where) if "layer" in obj else 0
        if ("attn" in obj) == ("heads" in obj):
            raise SchemaError(f"{where}: record needs exactly one of 'attn' or 'heads'")
        try:
            if "attn" in obj:
                trace = AttentionTrace(sample_id, np.asarray(obj["attn"], dtype=np.float64),
                                       grid=grid, layer=layer)
            else:
                heads = obj["heads"]
                if not isinstance(heads, list) or len(heads) == 0:
                    raise SchemaError("'heads' must be a non-empty list of score lists")
                per_head = [
                    AttentionTrace(sample_id, np.asarray(h, dtype=np.float64),
                                   grid=grid, layer=layer)
                    for h in heads
                ]
                trace = attn_core.average_heads(per_head)
        except SchemaError as exc:
            raise SchemaError(f"{where}: {exc}") from exc
        except (TypeError, ValueError) as exc:
            raise SchemaError(f"{where}: malformed scores: {exc}") from exc
        if trace.n != n:
            raise SchemaError(f"{where}: n={n} but {trace.n} scores")
        yield trace


# ----------------------------------------------------------------- truth

def truth_record(sample: SynthSample) -> dict:
    return {
        "id": sample.trace.sample_id,
        "salient": sorted(sample.planted_salient),
        "content": [float(v) for v in sample.content_scores],
    }


def write_truth(samples: Iterable[SynthSample], path) -> None:
    with open(path, "w") as fh:
        for sample in samples:
            fh.write(record_line(truth_record(sample)) + "\n")


def read_truth(path) -> Iterator[TruthRecord]:
    for lineno, obj in _records(path):
        where = f"{path}:{lineno}"
        sample_id = _field(obj, "id", where)
        if not isinstance(sample_id, str):
            raise SchemaError(f"{where}: id must be a string, got {sample_id!r}")
        where = f"{path}:{lineno} (id {sample_id!r})"
        salient = _field(obj, "salient", where)
        if not isinstance(salient, list) or any(
            isinstance(i, bool) or not isinstance(i, int) for i in salient
        ):
            raise SchemaError(f"{where}: salient must be a list of integers")
        try:
            content = np.asarray(_field(obj, "content", where), dtype=np.float64)
        except (TypeError, ValueError) as exc:
            raise SchemaError(f"{where}: malformed content: {exc}") from exc
        if content.ndim != 1 or content.size < 1 or not np.all(np.isfinite(content)):
            raise SchemaError(f"{where}: content must be a non-empty finite vector")
        if any(not 0 <= i < content.size for i in salient):
            raise SchemaError(f"{where}: salient index out of range")
        content.flags.writeable = False
        yield TruthRecord(sample_id, frozenset(salient), content)


# ------------------------------------------------------------- decisions

def decision_record(decision: PruneDecision) -> dict:
    rec: dict = {
        "sample_id": decision.sample_id,
        "method": decision.method,
        "ratio": float(decision.ratio),
        "retain_k": decision.retain_k,
        "kept": [int(i) for i in decision.kept],
    }
    if decision.scores_used is not None:
        rec["scores"] = [float(v) for v in decision.scores_used]
    return rec


def write_decisions(decisions: Iterable[PruneDecision], path) -> None:
    with open(path, "w") as fh:
        for decision in decisions:
            fh.write(record_line(decision_record(decision)) + "\n")


def read_decisions(path) -> Iterator[PruneDecision]:
    for lineno, obj in _records(path):
        where = f"{path}:{lineno}"
        sample_id = _field(obj, "sample_id", where)
        if not isinstance(sample_id, str):
            raise SchemaError(f"{where}: sample_id must be a string, got {sample_id!r}")
        where = f"{path}:{lineno} (id {sample_id!r})"
        method = _field(obj, "method", where)
        ratio = _field(obj, "ratio", where)
        if not isinstance(ratio, (int, float)) or isinstance(ratio, bool):
            raise SchemaError(f"{where}: ratio must be a number, got {ratio!r}")
        retain_k = _int_field(obj, "retain_k", where)
        kept = _field(obj, "kept", where)
        if not isinstance(kept, list) or any(
            isinstance(i, bool) or not isinstance(i, int) for i in kept
        ):
            raise SchemaError(f"{where}: kept must be a list of integers")
        scores = None
        if "scores" in obj and obj["scores"] is not None:
            try:
                scores = np.asarray(obj["scores"], dtype=np.float64)
            except (TypeError, ValueError) as exc:
                raise SchemaError(f"{where}: malformed scores: {exc}") from exc
        try:
            yield PruneDecision(
                sample_id=sample_id,
                method=method,
                ratio=float(ratio),
                retain_k=retain_k,
                kept=tuple(kept),
                scores_used=scores,
            )
        except SchemaError as exc:
            raise SchemaError(f"{where}: {exc}") from exc
