import json

import pytest
import torch

CRITERION_LINES: dict[int, str] = {}


@pytest.fixture
def criterion():
    def record(num: int, desc: str, ok: bool, detail: str = "") -> bool:
        line = f"criterion {num:>2}: {'PASS' if ok else 'FAIL'} - {desc}"
        if detail:
            line += f" [{detail}]"
        CRITERION_LINES[num] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if CRITERION_LINES:
        terminalreporter.section("acceptance criteria")
        for num in sorted(CRITERION_LINES):
            terminalreporter.write_line(CRITERION_LINES[num])


@pytest.fixture(scope="session")
def tiny_model(tmp_path_factory):
    """A 2-layer causal LM plus word-level tokenizer, saved locally."""
    from tokenizers import Tokenizer, models, pre_tokenizers
    from transformers import (
        LlamaConfig,
        LlamaForCausalLM,
        PreTrainedTokenizerFast,
    )

    path = tmp_path_factory.mktemp("model")
    torch.manual_seed(1234)
    config = LlamaConfig(
        vocab_size=64,
        hidden_size=32,
        intermediate_size=64,
        num_hidden_layers=2,
        num_attention_heads=4,
        num_key_value_heads=4,
        max_position_embeddings=256,
    )
    LlamaForCausalLM(config).save_pretrained(path)

    vocab = {f"tok{i}": i for i in range(62)}
    vocab["[UNK]"] = 62
    vocab["hello"] = 63
    raw = Tokenizer(models.WordLevel(vocab, unk_token="[UNK]"))
    raw.pre_tokenizer = pre_tokenizers.Whitespace()
    PreTrainedTokenizerFast(tokenizer_object=raw, unk_token="[UNK]").save_pretrained(path)
    return str(path)


@pytest.fixture
def write_dataset(tmp_path):
    def write(records, name="data.jsonl"):
        path = tmp_path / name
        with open(path, "w") as fh:
            for rec in records:
                fh.write((rec if isinstance(rec, str) else json.dumps(rec)) + "\n")
        return str(path)

    return write
