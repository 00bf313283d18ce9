import math

import numpy as np
import pytest

import headlamp


@pytest.fixture(scope="module")
def toy():
    return headlamp.toy_setup()


def test_forward_rows_are_distributions(toy):
    tok, model = toy
    sample = headlamp.toy_niah(tok, 48, 0.5, 3)
    out = model.forward(sample["prompt"])
    attn = out["attention"]
    assert attn.shape == (model.shape.total_heads, len(sample["prompt"]))
    np.testing.assert_allclose(attn.sum(axis=1), 1.0, atol=1e-9)
    assert out["predicted"] == int(np.argmax(out["logits"]))


def test_toy_retrieval_and_ablation(toy):
    tok, model = toy
    sample = headlamp.toy_niah(tok, 64, 0.25, 11)
    text, metric = headlamp.ablation_sample(model, tok, sample, "none")
    assert metric == 1.0 and sample["answer_text"] in text
    _, ablated = headlamp.ablation_sample(model, tok, sample, "dynamic")
    assert ablated == 0.0


def test_masking_and_visibility(toy):
    tok, model = toy
    prompt = headlamp.toy_niah(tok, 32, 0.5, 1)["prompt"]
    hidden = model.forward(prompt, visible_positions=[0, len(prompt) - 1])
    assert np.all(hidden["attention"][:, 1:-1] == 0.0)
    masked = model.forward(prompt, masked_heads=[(1, 0)])
    assert masked["attention"].shape == hidden["attention"].shape


def test_scores_match_definitions():
    row = [0.1, 0.4, 0.2, 0.1, 0.2]
    value, degenerate = headlamp.reasoning_score(row, [1, 2], sink_count=1, local_window=1)
    assert not degenerate
    assert value == pytest.approx(0.6 / 0.8)
    assert headlamp.copy_paste_score(row, [1], [0, 5, 6, 7, 8], 5) == 1
    assert headlamp.copy_paste_score(row, [1], [0, 5, 6, 7, 8], 6) == 0
    assert headlamp.activation_entropy([1.0] * 20) == pytest.approx(math.log(20))


def test_cca_recovers_linear_map():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((400, 8))
    y = x @ rng.standard_normal((8, 4)) + 0.01 * rng.standard_normal((400, 4))
    r = headlamp.cca(x, y)
    assert r.top1 > 0.99
    assert not r.degenerate


def test_niah_and_errors():
    hay = " ".join(f"Sentence number {i} is here." for i in range(300))
    s = headlamp.niah(hay, 600, 0.5, 9)
    assert s["n_tokens"] == 600
    begin, end = s["needle_chars"]
    assert s["prompt"][begin:end] == f"The magic word is {s['uuid']}."
    with pytest.raises(headlamp.ConfigError):
        headlamp.config_hash('{"sed": 1}')
    assert len(headlamp.config_hash("{}")) == 16
    with pytest.raises(headlamp.Error):
        headlamp.parse_head("nonsense")
