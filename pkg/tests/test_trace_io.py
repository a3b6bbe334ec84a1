import json

import numpy as np
import pytest

from pore import attn_core, synth_gen, trace_io
from pore.attn_core import AttentionTrace
from pore.errors import SchemaError
from pore.pruner import PruneDecision


def _traces():
    return [
        AttentionTrace("a", np.array([0.25, 0.75]), layer=2),
        AttentionTrace("b", np.array([0.5, 0.5]), grid=(1, 2)),
    ]


def test_trace_round_trip(tmp_path):
    path = tmp_path / "t.jsonl"
    trace_io.write_traces(_traces(), path)
    back = list(trace_io.read_traces(path))
    assert [t.sample_id for t in back] == ["a", "b"]
    assert back[0].layer == 2 and back[0].grid is None
    assert back[1].grid == (1, 2)
    for orig, got in zip(_traces(), back):
        assert np.array_equal(orig.scores, got.scores)


def test_write_is_deterministic(tmp_path):
    p1, p2 = tmp_path / "1.jsonl", tmp_path / "2.jsonl"
    trace_io.write_traces(_traces(), p1)
    trace_io.write_traces(_traces(), p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_head_variant_is_averaged_on_read(tmp_path):
    path = tmp_path / "heads.jsonl"
    rec = {"id": "h", "n": 2, "layer": 0, "heads": [[0.2, 0.8], [0.6, 0.4]]}
    path.write_text(json.dumps(rec) + "\n")
    (trace,) = trace_io.read_traces(path)
    assert np.allclose(trace.scores, [0.4, 0.6], rtol=0, atol=1e-15)


def test_reader_reports_line_and_id(tmp_path):
    path = tmp_path / "bad.jsonl"
    good = trace_io.record_line(trace_io.trace_record(AttentionTrace("ok", np.array([1.0]))))
    path.write_text(good + "\n" + '{"id":"oops","n":2,"layer":0,"attn":[0.9,0.2]}\n')
    with pytest.raises(SchemaError, match=r"bad\.jsonl:2.*oops"):
        list(trace_io.read_traces(path))


def test_reader_rejects_structural_problems(tmp_path):
    path = tmp_path / "t.jsonl"

    path.write_text("{broken\n")
    with pytest.raises(SchemaError, match=":1: invalid JSON"):
        list(trace_io.read_traces(path))

    path.write_text("[1, 2]\n")
    with pytest.raises(SchemaError, match="expected a JSON object"):
        list(trace_io.read_traces(path))

    path.write_text('{"id":"x","n":1,"layer":0}\n')
    with pytest.raises(SchemaError, match="exactly one of"):
        list(trace_io.read_traces(path))

    path.write_text('{"id":"x","n":1,"layer":0,"attn":[1.0],"heads":[[1.0]]}\n')
    with pytest.raises(SchemaError, match="exactly one of"):
        list(trace_io.read_traces(path))

    path.write_text('{"id":"x","n":3,"layer":0,"attn":[1.0]}\n')
    with pytest.raises(SchemaError, match="n=3 but 1 scores"):
        list(trace_io.read_traces(path))

    path.write_text('{"id":"x","n":1,"grid":[1,true],"layer":0,"attn":[1.0]}\n')
    with pytest.raises(SchemaError, match="grid"):
        list(trace_io.read_traces(path))

    path.write_text('{"id":7,"n":1,"layer":0,"attn":[1.0]}\n')
    with pytest.raises(SchemaError, match="id must be a string"):
        list(trace_io.read_traces(path))

    with pytest.raises(SchemaError, match="missing.jsonl"):
        list(trace_io.read_traces(tmp_path / "missing.jsonl"))


def test_blank_lines_are_skipped(tmp_path):
    path = tmp_path / "t.jsonl"
    rec = trace_io.record_line(trace_io.trace_record(AttentionTrace("a", np.array([1.0]))))
    path.write_text("\n" + rec + "\n\n")
    assert len(list(trace_io.read_traces(path))) == 1


def test_truth_round_trip(tmp_path):
    spec = synth_gen.SynthSpec(n=16, samples=4, bias_b=0.01, salient_k=3,
                               salience_gain=2.0, seed=8)
    samples = list(synth_gen.generate_corpus(spec))
    path = tmp_path / "truth.jsonl"
    trace_io.write_truth(samples, path)
    back = list(trace_io.read_truth(path))
    assert [r.sample_id for r in back] == [s.trace.sample_id for s in samples]
    for s, r in zip(samples, back):
        assert r.salient == s.planted_salient
        assert np.array_equal(r.content, s.content_scores)


def test_truth_reader_validation(tmp_path):
    path = tmp_path / "truth.jsonl"
    path.write_text('{"id":"x","salient":[5],"content":[0.5,0.5]}\n')
    with pytest.raises(SchemaError, match="out of range"):
        list(trace_io.read_truth(path))
    path.write_text('{"id":"x","salient":[true],"content":[0.5,0.5]}\n')
    with pytest.raises(SchemaError, match="salient"):
        list(trace_io.read_truth(path))
    path.write_text('{"id":"x","salient":[]}\n')
    with pytest.raises(SchemaError, match="content"):
        list(trace_io.read_truth(path))


def test_decision_round_trip(tmp_path):
    decisions = [
        PruneDecision("a", "fastv", 0.5, 2, (0, 3), scores_used=np.array([0.4, 0.1, 0.2, 0.3])),
        PruneDecision("b", "pore", 0.5, 1, (2,)),
    ]
    path = tmp_path / "dec.jsonl"
    trace_io.write_decisions(decisions, path)
    back = list(trace_io.read_decisions(path))
    assert back[0].kept == (0, 3)
    assert np.array_equal(back[0].scores_used, decisions[0].scores_used)
    assert back[1].scores_used is None
    assert back[0] == decisions[0]  # scores excluded from equality


def test_decision_reader_validation(tmp_path):
    path = tmp_path / "dec.jsonl"
    path.write_text('{"sample_id":"a","method":"fastv","ratio":0.5,"retain_k":2,"kept":[3,0]}\n')
    with pytest.raises(SchemaError, match="strictly increasing"):
        list(trace_io.read_decisions(path))
    path.write_text('{"sample_id":"a","method":"fastv","ratio":"half","retain_k":1,"kept":[0]}\n')
    with pytest.raises(SchemaError, match="ratio"):
        list(trace_io.read_decisions(path))
    path.write_text('{"sample_id":"a","method":"fastv","ratio":0.5,"kept":[0]}\n')
    with pytest.raises(SchemaError, match="retain_k"):
        list(trace_io.read_decisions(path))
