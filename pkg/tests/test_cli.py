import csv
import json

import numpy as np
import pytest

from pore import bias_model, cli, pruner, synth_gen, trace_io
from pore.errors import FitDivergenceError


def run(*argv):
    return cli.entrypoint([str(a) for a in argv])


@pytest.fixture
def corpus(tmp_path):
    """A small planted-bias corpus on disk, plus its paths."""
    traces = tmp_path / "traces.jsonl"
    truth = tmp_path / "truth.jsonl"
    assert run("synth", "--n", 64, "--samples", 120, "--seed", 7,
               "--bias-b", 0.02, "--salient-k", 8, "--salience-gain", 4,
               "--noise-rel", 0.02, "--out", traces, "--truth", truth, "--quiet") == 0
    return tmp_path, traces, truth


def test_synth_writes_valid_corpus(corpus):
    _, traces, truth = corpus
    read = list(trace_io.read_traces(traces))
    assert len(read) == 120
    assert {r.sample_id for r in trace_io.read_truth(truth)} == {t.sample_id for t in read}


def test_fit_bias_recovers_planted_rate(corpus):
    tmp, traces, _ = corpus
    out = tmp / "bias.json"
    assert run("fit-bias", "--traces", traces, "--form", "exp2", "--out", out, "--quiet") == 0
    fit = bias_model.load_bias(out)
    assert abs(fit.b - 0.02) / 0.02 < 0.10


def test_fit_bias_flat_corpus_gives_near_zero_rate(tmp_path):
    traces = tmp_path / "flat.jsonl"
    trace_io.write_traces(
        (synth_gen.generate_sample(synth_gen.SynthSpec(n=32, samples=150, seed=3), i).trace
         for i in range(150)),
        traces,
    )
    # noiseless flat corpus: per-sample content still varies, so fit on the mean
    out = tmp_path / "bias.json"
    assert run("fit-bias", "--traces", traces, "--out", out, "--quiet") == 0
    assert abs(bias_model.load_bias(out).b) < 0.005


def test_prune_flagship_operating_point(tmp_path):
    traces = tmp_path / "t.jsonl"
    truth = tmp_path / "tr.jsonl"
    assert run("synth", "--n", 576, "--samples", 3, "--seed", 1,
               "--out", traces, "--truth", truth, "--quiet") == 0
    dec = tmp_path / "d.jsonl"
    assert run("prune", "--traces", traces, "--method", "fastv", "--ratio", 0.778,
               "--out", dec, "--quiet") == 0
    decisions = list(trace_io.read_decisions(dec))
    assert all(d.retain_k == 128 for d in decisions)


def test_flat_bias_pore_matches_fastv(corpus):
    tmp, traces, _ = corpus
    flat = bias_model.BiasProfile(form="exp2", a=1.0, b=0.0, c=0.0, n=64,
                                  residual=0.0, normalized=True)
    bias_path = tmp / "flat_bias.json"
    bias_model.save_bias(flat, bias_path)
    d_fastv, d_pore = tmp / "df.jsonl", tmp / "dp.jsonl"
    assert run("prune", "--traces", traces, "--method", "fastv", "--ratio", 0.6,
               "--out", d_fastv, "--quiet") == 0
    assert run("prune", "--traces", traces, "--method", "pore", "--bias", bias_path,
               "--ratio", 0.6, "--out", d_pore, "--quiet") == 0
    for rf, rp in zip(d_fastv.read_text().splitlines(), d_pore.read_text().splitlines()):
        a, b = json.loads(rf), json.loads(rp)
        assert (a.pop("method"), b.pop("method")) == ("fastv", "pore")
        assert a == b  # identical apart from the method label


def test_eval_pipeline_margin(corpus):
    tmp, traces, truth = corpus
    bias_path = tmp / "bias.json"
    assert run("fit-bias", "--traces", traces, "--out", bias_path, "--quiet") == 0
    rows = {}
    for method, extra in (("fastv", []), ("pore", ["--bias", bias_path])):
        dec = tmp / f"d_{method}.jsonl"
        rep = tmp / f"r_{method}.csv"
        assert run("prune", "--traces", traces, "--method", method, "--ratio", 0.75,
                   "--out", dec, *extra, "--quiet") == 0
        assert run("eval", "--decisions", dec, "--truth", truth, "--out", rep, "--quiet") == 0
        header, row = list(csv.reader(rep.read_text().splitlines()))
        rows[method] = dict(zip(header, row))
    assert float(rows["pore"]["recall_at_k"]) > float(rows["fastv"]["recall_at_k"])
    assert float(rows["pore"]["rank_corr"]) > float(rows["fastv"]["rank_corr"])
    assert abs(float(rows["pore"]["positional_slope"])) < abs(float(rows["fastv"]["positional_slope"]))
    assert rows["pore"]["samples"] == "120"


def test_eval_trivial_recalls(tmp_path):
    # hand-built truth where content's top-1 is token 0
    truth = tmp_path / "truth.jsonl"
    truth.write_text('{"id":"s","salient":[0],"content":[0.7,0.2,0.1]}\n')
    perfect = tmp_path / "perfect.jsonl"
    perfect.write_text('{"sample_id":"s","method":"fastv","ratio":0.5,"retain_k":1,"kept":[0]}\n')
    miss = tmp_path / "miss.jsonl"
    miss.write_text('{"sample_id":"s","method":"fastv","ratio":0.5,"retain_k":1,"kept":[2]}\n')
    for path, want in ((perfect, 1.0), (miss, 0.0)):
        out = tmp_path / "out.csv"
        assert run("eval", "--decisions", path, "--truth", truth, "--out", out, "--quiet") == 0
        _, row = list(csv.reader(out.read_text().splitlines()))
        assert float(row[2]) == want
        assert row[3] == "nan"  # no scores in the minimal records


def test_cli_composition_equals_in_process(corpus):
    tmp, traces, _ = corpus
    bias_path = tmp / "bias.json"
    dec_path = tmp / "dec.jsonl"
    assert run("fit-bias", "--traces", traces, "--out", bias_path, "--quiet") == 0
    assert run("prune", "--traces", traces, "--method", "pore", "--bias", bias_path,
               "--ratio", 0.75, "--out", dec_path, "--quiet") == 0

    in_memory = bias_model.fit_bias(
        bias_model.mean_attention_profile(trace_io.read_traces(traces))
    )
    cfg = pruner.PruneConfig(ratio=0.75, method="pore", bias=in_memory)
    for got, want_trace in zip(trace_io.read_decisions(dec_path), trace_io.read_traces(traces)):
        want = pruner.prune(want_trace, cfg)
        assert got.kept == want.kept
        assert np.allclose(got.scores_used, want.scores_used, rtol=1e-12, atol=0)


def test_profile_single_sample_is_identity(tmp_path):
    traces = tmp_path / "t.jsonl"
    sample = synth_gen.generate_sample(synth_gen.SynthSpec(n=8, samples=1, seed=2), 0)
    trace_io.write_traces([sample.trace], traces)
    out = tmp_path / "prof.csv"
    assert run("profile", "--traces", traces, "--out", out, "--quiet") == 0
    rows = list(csv.reader(out.read_text().splitlines()))[1:]
    assert np.allclose([float(r[1]) for r in rows], sample.trace.scores, rtol=0, atol=0)


def test_profile_grid_output(corpus):
    tmp, traces, _ = corpus
    out = tmp / "heat.csv"
    assert run("profile", "--traces", traces, "--grid", "8x8", "--out", out, "--quiet") == 0
    rows = [[float(v) for v in row] for row in csv.reader(out.read_text().splitlines())]
    assert len(rows) == 8 and all(len(r) == 8 for r in rows)
    assert run("profile", "--traces", traces, "--grid", "3x3", "--out", out, "--quiet") == 1


def test_flops_layer_override(tmp_path):
    cfg = tmp_path / "shape.cfg"
    cfg.write_text("layers = 4\nd_model = 8\nd_ffn = 16\nn_visual = 8\nn_text = 2\n")
    out = tmp_path / "t.csv"
    assert run("flops", "--config", cfg, "--ratio", 0.5, "--layer", 4, "--out", out, "--quiet") == 0
    rows = list(csv.reader(out.read_text().splitlines()))
    assert float(rows[1][3]) == 1.0  # pruning after the last layer changes nothing


def test_report_renders_figures(corpus):
    tmp, traces, _ = corpus
    out_dir = tmp / "rpt"
    assert run("report", "--traces", traces, "--grid", "8x8", "--out-dir", out_dir, "--quiet") == 0
    for name in ("profile.csv", "summary.csv", "profile.png", "heatmap.csv", "heatmap.png"):
        assert (out_dir / name).stat().st_size > 0
    assert (out_dir / "profile.png").read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
    summary = dict(list(csv.reader((out_dir / "summary.csv").read_text().splitlines()))[1:])
    assert abs(float(summary["relative_slope_reweighted"])) < 0.05
    assert float(summary["relative_slope_raw"]) > 0.5


def test_usage_errors_exit_1(tmp_path):
    assert run("synth", "--n", 8, "--samples", 0, "--out", tmp_path / "x",
               "--truth", tmp_path / "y") == 1
    assert run("prune", "--traces", tmp_path / "t", "--method", "pore",
               "--ratio", 0.5, "--out", tmp_path / "x") == 1
    assert run("prune", "--traces", tmp_path / "t", "--method", "fastv",
               "--ratio", 1.5, "--out", tmp_path / "x") == 1
    assert run("profile", "--traces", tmp_path / "t", "--grid", "wide",
               "--out", tmp_path / "x") == 1
    assert run("no-such-command") == 1
    assert run() == 1


def test_data_errors_exit_2(tmp_path):
    assert run("fit-bias", "--traces", tmp_path / "missing.jsonl",
               "--out", tmp_path / "b.json") == 2
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"id":"x","n":2,"layer":0,"attn":[0.9,0.3]}\n')
    assert run("fit-bias", "--traces", bad, "--out", tmp_path / "b.json") == 2
    # decisions referencing an id the truth file lacks
    truth = tmp_path / "truth.jsonl"
    truth.write_text('{"id":"other","salient":[],"content":[1.0]}\n')
    dec = tmp_path / "dec.jsonl"
    dec.write_text('{"sample_id":"x","method":"fastv","ratio":0.0,"retain_k":1,"kept":[0]}\n')
    assert run("eval", "--decisions", dec, "--truth", truth, "--out", tmp_path / "o.csv") == 2


def test_numerical_failure_exit_3(tmp_path, monkeypatch, capsys):
    traces = tmp_path / "t.jsonl"
    assert run("synth", "--n", 8, "--samples", 1, "--seed", 0,
               "--out", traces, "--truth", tmp_path / "tr.jsonl", "--quiet") == 0

    def blow_up(profile, form="exp2"):
        raise FitDivergenceError("fit diverged")

    monkeypatch.setattr(bias_model, "fit_bias", blow_up)
    assert run("fit-bias", "--traces", traces, "--out", tmp_path / "b.json") == 3
    assert "numerical failure" in capsys.readouterr().err


def test_error_diagnostics_are_one_line(tmp_path, capsys):
    run("fit-bias", "--traces", tmp_path / "missing.jsonl", "--out", tmp_path / "b.json")
    err = capsys.readouterr().err
    assert err.count("\n") == 1
    assert "missing.jsonl" in err
