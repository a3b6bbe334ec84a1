"""Command-line pipeline: generate, fit, prune, evaluate, cost, export.

Subcommands compose through files only (traces, truth, bias profiles,
decisions), so any stage can be swapped for another producer of the same
format. Exit codes: 0 success, 1 usage error, 2 data/schema error,
3 numerical failure. All randomness enters through explicit --seed flags;
identical invocations produce byte-identical outputs.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace

import numpy as np

from . import bias_model, cost_model, eval_metrics, pruner, synth_gen, trace_io
from .errors import FitDivergenceError, SchemaError


class UsageError(Exception):
    """Bad flags or flag combinations; maps to exit code 1."""


class _Parser(argparse.ArgumentParser):
    # argparse exits with code 2 on its own; route through UsageError so
    # usage problems get exit code 1 and data problems keep exit code 2.
    def error(self, message):
        raise UsageError(message)


def _say(args, message: str) -> None:
    if not args.quiet:
        print(message)


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise UsageError(message)


def _parse_grid_flag(text: str) -> tuple[int, int]:
    parts = text.lower().split("x")
    try:
        rows, cols = (int(p) for p in parts)
    except ValueError:
        raise UsageError(f"--grid expects ROWSxCOLS, got {text!r}") from None
    _require(rows >= 1 and cols >= 1, f"--grid dimensions must be >= 1, got {text!r}")
    return rows, cols


# ------------------------------------------------------------- commands

def cmd_synth(args) -> None:
    try:
        spec = synth_gen.SynthSpec(
            n=args.n,
            samples=args.samples,
            bias_b=args.bias_b,
            bias_c=args.bias_c,
            salient_k=args.salient_k,
            salience_gain=args.salience_gain,
            noise_rel=args.noise_rel,
            seed=args.seed,
        )
    except SchemaError as exc:
        raise UsageError(str(exc)) from exc
    with open(args.out, "w") as traces_fh, open(args.truth, "w") as truth_fh:
        for sample in synth_gen.generate_corpus(spec):
            traces_fh.write(trace_io.record_line(trace_io.trace_record(sample.trace)) + "\n")
            truth_fh.write(trace_io.record_line(trace_io.truth_record(sample)) + "\n")
    _say(args, f"wrote {spec.samples} traces to {args.out}, truth to {args.truth}")


def cmd_fit_bias(args) -> None:
    profile = bias_model.mean_attention_profile(trace_io.read_traces(args.traces))
    fitted = bias_model.fit_bias(profile, form=args.form)
    bias_model.save_bias(fitted, args.out)
    _say(
        args,
        f"fit {fitted.form} over {profile.m_samples} samples: "
        f"a={fitted.a!r} b={fitted.b!r} c={fitted.c!r} residual={fitted.residual!r}"
        f" -> {args.out}",
    )


def cmd_prune(args) -> None:
    _require(0.0 <= args.ratio < 1.0, f"--ratio must be in [0, 1), got {args.ratio!r}")
    bias = None
    if args.method == pruner.METHOD_PORE:
        _require(args.bias is not None, "--method pore requires --bias")
        bias = bias_model.load_bias(args.bias)
    cfg = pruner.PruneConfig(ratio=args.ratio, method=args.method, bias=bias)
    count = 0
    with open(args.out, "w") as fh:
        for trace in trace_io.read_traces(args.traces):
            decision = pruner.prune(trace, cfg)
            fh.write(trace_io.record_line(trace_io.decision_record(decision)) + "\n")
            count += 1
    _say(args, f"pruned {count} traces ({args.method}, ratio {args.ratio!r}) -> {args.out}")


def _eval_group_slope(scores_rows: list[np.ndarray | None]):
    if any(s is None for s in scores_rows):
        return float("nan")
    lengths = {s.size for s in scores_rows}
    if len(lengths) != 1:
        raise SchemaError(f"decisions mix score lengths {sorted(lengths)}")
    return eval_metrics.positional_slope(np.mean(scores_rows, axis=0))


def cmd_eval(args) -> None:
    truth = {rec.sample_id: rec for rec in trace_io.read_truth(args.truth)}
    per_sample: list[eval_metrics.SampleEval] = []
    groups: dict[tuple[str, float], list[int]] = {}
    group_scores: dict[tuple[str, float], list[np.ndarray | None]] = {}
    for decision in trace_io.read_decisions(args.decisions):
        rec = truth.get(decision.sample_id)
        if rec is None:
            raise SchemaError(f"{args.truth}: no truth record for id {decision.sample_id!r}")
        truth_topk = pruner.top_k_indices(rec.content, decision.retain_k)
        recall = eval_metrics.recall_at_k(decision, truth_topk)
        if decision.scores_used is not None:
            corr = eval_metrics.spearman(decision.scores_used, rec.content)
        else:
            corr = float("nan")
        row = eval_metrics.SampleEval(
            sample_id=decision.sample_id,
            method=decision.method,
            ratio=decision.ratio,
            recall=recall,
            rank_corr=corr,
        )
        key = (decision.method, decision.ratio)
        groups.setdefault(key, []).append(len(per_sample))
        group_scores.setdefault(key, []).append(decision.scores_used)
        per_sample.append(row)
    if not per_sample:
        raise SchemaError(f"{args.decisions}: no decision records")
    reports = []
    for key, indices in groups.items():
        rows = [per_sample[i] for i in indices]
        corrs = [r.rank_corr for r in rows if np.isfinite(r.rank_corr)]
        reports.append(
            eval_metrics.EvalReport(
                method=key[0],
                ratio=key[1],
                recall_at_k=float(np.mean([r.recall for r in rows])),
                rank_corr=float(np.mean(corrs)) if corrs else float("nan"),
                positional_slope=_eval_group_slope(group_scores[key]),
                samples=len(rows),
            )
        )
    eval_metrics.write_report_csv(reports, args.out)
    if args.per_sample is not None:
        eval_metrics.write_per_sample_csv(per_sample, args.per_sample)
    _say(args, f"evaluated {len(per_sample)} decisions in {len(reports)} groups -> {args.out}")


def cmd_flops(args) -> None:
    for r in args.ratio or []:
        _require(0.0 <= r < 1.0, f"--ratio must be in [0, 1), got {r!r}")
    if args.layer is not None:
        _require(args.layer >= 0, f"--layer must be >= 0, got {args.layer}")
    cfg = cost_model.read_config(args.config)
    if args.layer is not None:
        try:
            cfg = replace(cfg, prune_layer=args.layer)
        except SchemaError as exc:
            raise UsageError(str(exc)) from exc
    ratios = args.ratio if args.ratio else [cfg.ratio]
    rows = cost_model.ratio_table(cfg, ratios)
    cost_model.write_ratio_table_csv(rows, args.out)
    _say(args, f"estimated {len(rows)} ratios (prune layer {cfg.prune_layer}) -> {args.out}")


def cmd_profile(args) -> None:
    # validate the flag before touching the filesystem
    grid = _parse_grid_flag(args.grid) if args.grid is not None else None
    profile = bias_model.mean_attention_profile(trace_io.read_traces(args.traces))
    if grid is not None:
        try:
            eval_metrics.grid_heatmap_export(profile, grid, args.out)
        except SchemaError as exc:
            raise UsageError(str(exc)) from exc
        _say(args, f"mean profile of {profile.m_samples} samples as {grid[0]}x{grid[1]} grid -> {args.out}")
        return
    import csv

    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("index", "mean_attention"))
        for i, v in enumerate(profile.mean_scores):
            writer.writerow((i, repr(float(v))))
    _say(args, f"mean profile of {profile.m_samples} samples -> {args.out}")


def cmd_report(args) -> None:
    from . import report

    paths = report.render_report(
        traces_path=args.traces,
        out_dir=args.out_dir,
        form=args.form,
        grid=_parse_grid_flag(args.grid) if args.grid is not None else None,
    )
    _say(args, "report files: " + " ".join(str(p) for p in paths))


# -------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pore", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    quiet = _Parser(add_help=False)
    quiet.add_argument("--quiet", action="store_true", help="suppress the success summary line")

    p = sub.add_parser("synth", parents=[quiet], help="generate a synthetic trace corpus + truth sidecar")
    p.add_argument("--n", type=int, required=True, help="visual tokens per sample")
    p.add_argument("--samples", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--bias-b", type=float, default=0.0, help="planted bias rate: exp(b*i) + c")
    p.add_argument("--bias-c", type=float, default=0.0, help="planted bias offset")
    p.add_argument("--salient-k", type=int, default=0, help="planted salient tokens per sample")
    p.add_argument("--salience-gain", type=float, default=1.0)
    p.add_argument("--noise-rel", type=float, default=0.0, help="relative multiplicative noise bound")
    p.add_argument("--out", required=True, help="trace file to write")
    p.add_argument("--truth", required=True, help="ground-truth sidecar to write")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("fit-bias", parents=[quiet], help="fit a positional bias profile to a corpus")
    p.add_argument("--traces", required=True)
    p.add_argument("--form", choices=(bias_model.FORM_EXP2, bias_model.FORM_EXP3),
                   default=bias_model.FORM_EXP2)
    p.add_argument("--out", required=True, help="bias profile JSON to write")
    p.set_defaults(func=cmd_fit_bias)

    p = sub.add_parser("prune", parents=[quiet], help="select tokens to keep per trace")
    p.add_argument("--traces", required=True)
    p.add_argument("--method", choices=(pruner.METHOD_FASTV, pruner.METHOD_PORE), required=True)
    p.add_argument("--bias", help="bias profile JSON (required for --method pore)")
    p.add_argument("--ratio", type=float, required=True, help="fraction of visual tokens to drop")
    p.add_argument("--out", required=True, help="decisions file to write")
    p.set_defaults(func=cmd_prune)

    p = sub.add_parser("eval", parents=[quiet], help="score decisions against planted truth")
    p.add_argument("--decisions", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--out", required=True, help="report CSV (one row per method x ratio)")
    p.add_argument("--per-sample", help="optional long-form per-sample CSV")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("flops", parents=[quiet], help="estimate prefill FLOPs per prune ratio")
    p.add_argument("--config", required=True, help="key-value shape config file")
    p.add_argument("--ratio", type=float, action="append", help="repeatable; defaults to config ratio")
    p.add_argument("--layer", type=int, help="override the prune layer")
    p.add_argument("--out", required=True, help="CSV table to write")
    p.set_defaults(func=cmd_flops)

    p = sub.add_parser("profile", parents=[quiet], help="mean attention profile, flat or as a grid")
    p.add_argument("--traces", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--grid", help="ROWSxCOLS: write a heatmap matrix instead of index rows")
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("report", parents=[quiet],
                       help="render bias-profile figures plus their CSVs into a directory")
    p.add_argument("--traces", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--form", choices=(bias_model.FORM_EXP2, bias_model.FORM_EXP3),
                   default=bias_model.FORM_EXP2)
    p.add_argument("--grid", help="ROWSxCOLS for the heatmap (default: grid stored in traces)")
    p.set_defaults(func=cmd_report)

    return parser


def entrypoint(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        args.func(args)
        return 0
    except UsageError as exc:
        print(f"pore: usage error: {exc}", file=sys.stderr)
        return 1
    except SchemaError as exc:
        print(f"pore: data error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"pore: data error: {exc}", file=sys.stderr)
        return 2
    except (FitDivergenceError, FloatingPointError) as exc:
        print(f"pore: numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(entrypoint())
