import json

import numpy as np
import pytest

from grndsum import diffkernel as dk
from grndsum.model import ModelConfig, Vocab
from grndsum.training import (
    GroundedModel,
    importance_scores,
    pretrain_importance,
    pretrain_importance_joint,
    train,
)

SMALL = ModelConfig(d_model=16, attention_heads=2, ffn_dim=16, lowrank_r=4, seed=1, learning_rate=3e-3)


def test_loss_decreases_on_one_episode(tiny):
    model = GroundedModel.create(tiny.model.vocab, SMALL)
    history = train(model, tiny.tensors[:1], steps=50)
    assert history[-1].total < 0.5 * history[0].total
    assert model.finite()


def test_training_is_deterministic(tiny):
    runs = []
    for _ in range(2):
        model = GroundedModel.create(tiny.model.vocab, SMALL)
        train(model, tiny.tensors, steps=5, batch_size=2, seed=4)
        runs.append(model.params["ffn2.o.W"].data.copy())
    assert np.array_equal(*runs)


def test_train_requires_data(tiny):
    with pytest.raises(ValueError, match="no training episodes"):
        train(tiny.model, [], steps=1)


def _model(d=4):
    return GroundedModel.create(Vocab.build([["a"]]), ModelConfig(d_model=d, attention_heads=1, ffn_dim=8, lowrank_r=2))


def test_pretrain_separable_vectors():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(200, 4))
    labels = x[:, 0] + 0.5 * x[:, 1] > 0
    model = _model()
    pretrain_importance(model, x, labels, steps=500)
    acc = np.mean((importance_scores(model, x) > 0) == labels)
    assert acc >= 0.99


def test_pretrain_all_negative_labels_warns():
    x = np.random.default_rng(1).normal(size=(20, 4))
    model = _model()
    with pytest.warns(UserWarning, match="one class"):
        pretrain_importance(model, x, [False] * 20, steps=200)
    probs = 1 / (1 + np.exp(-importance_scores(model, x)))
    assert np.all(probs < 0.5)


def test_pretrain_identical_inputs_hover_at_half():
    x = np.ones((40, 4))
    labels = [i % 2 == 0 for i in range(40)]
    model = _model()
    pretrain_importance(model, x, labels, steps=300)
    probs = 1 / (1 + np.exp(-importance_scores(model, x)))
    assert np.allclose(probs, 0.5, atol=0.02)


def test_pretrain_touches_only_importance_scorer():
    x = np.random.default_rng(2).normal(size=(10, 4))
    model = _model()
    before = {k: p.data.copy() for k, p in model.params.items()}
    pretrain_importance(model, x, [i < 3 for i in range(10)], steps=5)
    changed = {k for k, p in model.params.items() if not np.array_equal(p.data, before[k])}
    assert changed and all(k.startswith("ffn1") for k in changed)


def test_joint_pretraining_reduces_loss(tiny):
    model = GroundedModel.create(tiny.model.vocab, SMALL)
    history = pretrain_importance_joint(model, tiny.tensors, steps=150, lr=3e-3)
    assert np.mean(history[-20:]) < np.mean(history[:20])


def test_checkpoint_round_trip(tmp_path, tiny):
    path = tmp_path / "m.json"
    tiny.model.meta = {"note": "x"}
    tiny.model.save(path)
    loaded = GroundedModel.load(path)
    assert loaded.cfg == tiny.model.cfg and loaded.vocab.itos == tiny.model.vocab.itos
    assert loaded.meta == {"note": "x"}
    for k, p in tiny.model.params.items():
        assert np.array_equal(loaded.params[k].data, p.data)
    with dk.no_grad():
        assert loaded.finite()


def test_checkpoint_errors(tmp_path, tiny):
    with pytest.raises(FileNotFoundError):
        GroundedModel.load(tmp_path / "missing.json")
    path = tmp_path / "m.json"
    tiny.model.save(path)
    doc = json.loads(path.read_text())
    doc["version"] = 99
    path.write_text(json.dumps(doc))
    with pytest.raises(ValueError, match="version 99"):
        GroundedModel.load(path)
    path.write_text(json.dumps({"format": "other"}))
    with pytest.raises(ValueError, match="not a"):
        GroundedModel.load(path)


def test_switch_predictor_fires_at_sentence_ends(overfit):
    from grndsum.decode import predict_selection

    end, inside = [], []
    for ep in overfit.tensors[:10]:
        pred = predict_selection(overfit.model, ep)
        for p, g in zip(pred.switch, ep.switch_labels):
            (end if g else inside).append(p)
    assert np.mean(end) > 0.9 and np.mean(inside) < 0.1
