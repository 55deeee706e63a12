import numpy as np
import pytest

from gatekeeper.cells import KEY_GATE
from gatekeeper.data import generate_synthetic_text
from gatekeeper.model import SequenceModel
from gatekeeper.numeric import Adam, Rng, softmax_cross_entropy
from gatekeeper.signature import encode_signature, generate_key, sign_loss
from gatekeeper.training import (ConfigurationError, TrainConfig, build_trigger_set, evaluate, fit,
                                 protected_objective, train_baseline_step, train_private_step,
                                 train_public_step)


def _toy(cell="gru", seed=0, n=120):
    ds = generate_synthetic_text(Rng(seed), n, V=12, C=3, length_range=(5, 7))
    m = SequenceModel(cell, hidden_size=8, num_classes=3, vocab_size=12, embed_dim=4, seed=seed)
    key = generate_key("random", Rng(9), 1, 2, 4)
    sig = encode_signature("a", 8)
    return ds, m, key, sig


def test_trigger_labels_are_wrong_and_uniform():
    ds = generate_synthetic_text(Rng(0), 6000, V=12, C=4)
    trig, pool = build_trigger_set(ds, 3000, Rng(1))
    assert len(trig) == 3000 and len(pool) == 3000
    assert np.all(trig.assigned_labels != trig.original_labels)
    assert np.array_equal(trig.original_labels, ds.labels[trig.source_index])
    shift = (trig.assigned_labels - trig.original_labels) % 4
    frac = np.bincount(shift, minlength=4)[1:] / 3000
    assert np.all(np.abs(frac - 1 / 3) < 0.03)
    assert not set(trig.source_index.tolist()) & set(pool.index.tolist())


def test_trigger_set_errors_and_determinism():
    ds = generate_synthetic_text(Rng(0), 10, V=12, C=3)
    with pytest.raises(ValueError):
        build_trigger_set(ds, 11, Rng(0))
    a, _ = build_trigger_set(ds, 5, Rng(7))
    b, _ = build_trigger_set(ds, 5, Rng(7))
    assert np.array_equal(a.inputs, b.inputs) and np.array_equal(a.assigned_labels, b.assigned_labels)
    empty, pool = build_trigger_set(ds, 0, Rng(0))
    assert len(empty) == 0 and len(pool) == 10


def _saturate(model, value=60.0):
    n = model.hidden_size
    block = slice(KEY_GATE[model.cell_kind] * n, (KEY_GATE[model.cell_kind] + 1) * n)
    model.params["rnn.layer0.b_ih"].value[block] = value


@pytest.mark.parametrize("cell", ["lstm", "gru"])
def test_private_step_with_open_gate_equals_baseline_step(cell):
    ds, m, key, sig = _toy(cell)
    _saturate(m)
    other = m.clone()
    batch = (ds.inputs[:16], ds.labels[:16])
    train_private_step(m, key, sig, batch, None, Adam(m.parameters(), lr=1e-2), sign_weight=0.0)
    train_baseline_step(other, batch, Adam(other.parameters(), lr=1e-2))
    assert np.allclose(m.get_flat(), other.get_flat(), rtol=0, atol=1e-12)


def test_public_objective_is_sum_of_branches():
    ds, m, key, sig = _toy()
    x, y = ds.inputs[:8], ds.labels[:8]
    m.zero_grad()
    lb = protected_objective(m, key, sig, x, y)
    g_all = m.get_flat_grad()
    m.zero_grad()
    lk = protected_objective(m, key, sig, x, y, sign_weight=0.0, with_plain_branch=False)
    g_k = m.get_flat_grad()
    m.zero_grad()
    m.gatekeeper_enabled = False
    logits, cache = m.forward(x)
    m.gatekeeper_enabled = True
    lx, gx = softmax_cross_entropy(logits, y)
    m.backward(cache, gx)
    g_x = m.get_flat_grad()
    m.zero_grad()
    h0, c = m.key_first_hidden(key)
    lr_, gr = sign_loss(h0, sig)
    m.key_first_hidden_backward(c, gr)
    g_r = m.get_flat_grad()
    assert lb.L_k == pytest.approx(lk.L_k) and lb.L_x == pytest.approx(lx) and lb.L_r == pytest.approx(lr_)
    assert lb.L_total == pytest.approx(lk.L_k + lx + lr_)
    assert np.allclose(g_all, g_k + g_x + g_r, atol=1e-14)
    assert m.gatekeeper_enabled


def test_public_step_restores_toggle_and_needs_key():
    ds, m, key, sig = _toy()
    opt = Adam(m.parameters())
    lb = train_public_step(m, key, sig, (ds.inputs[:4], ds.labels[:4]), (ds.inputs[4:6], ds.labels[4:6]), opt)
    assert lb.L_x > 0 and lb.L_k > 0 and m.gatekeeper_enabled
    with pytest.raises(ConfigurationError):
        train_public_step(m, None, sig, (ds.inputs[:4], ds.labels[:4]), None, opt)


def test_train_config_validation():
    with pytest.raises(ConfigurationError):
        TrainConfig(scheme="secret")
    with pytest.raises(ConfigurationError):
        TrainConfig(batch_size=4, trigger_batch=5)
    with pytest.raises(ConfigurationError):
        TrainConfig(batch_size=0)


def _fit(scheme):
    ds, m, key, sig = _toy()
    trig, pool = build_trigger_set(ds, 6, Rng(2))
    cfg = TrainConfig(scheme=scheme, epochs=2, batch_size=16, trigger_batch=2, lr=1e-2, seed=4)
    res = fit(m, pool.take(90), cfg, key, sig, trig, val=pool.subset(np.arange(90, len(pool))))
    return m, res


@pytest.mark.parametrize("scheme", ["public", "private", "baseline"])
def test_fit_is_deterministic(scheme):
    (a, ra), (b, rb) = _fit(scheme), _fit(scheme)
    assert np.array_equal(a.get_flat(), b.get_flat())
    assert ra.history == rb.history and ra.steps == 12


def test_fit_records_protected_metrics():
    _, res = _fit("public")
    rec = res.history[-1]
    assert {"L_k", "L_x", "L_r", "val_acc", "sign_acc", "trigger_acc"} <= set(rec)
    _, res = _fit("private")
    assert res.history[-1]["L_x"] == 0.0


def test_fit_requires_key_for_protected():
    ds, m, _, sig = _toy()
    with pytest.raises(ConfigurationError):
        fit(m, ds, TrainConfig(scheme="public"), None, sig)


def test_max_steps_and_learning():
    ds, m, key, sig = _toy(n=400)
    before = evaluate(m, ds, key)
    res = fit(m, ds, TrainConfig(scheme="public", epochs=50, batch_size=16, trigger_batch=0, lr=1e-2,
                                 max_steps=150), key, sig)
    assert res.steps == 150
    assert evaluate(m, ds, key) > max(before, 0.6)


def test_evaluate_empty():
    ds, m, _, _ = _toy()
    assert evaluate(m, ds.take(0)) == 0.0
