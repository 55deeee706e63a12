import itertools

import numpy as np
import pytest
from scipy.stats import binom, ks_2samp

from gatekeeper.data import Dataset, generate_synthetic_text
from gatekeeper.model import SequenceModel
from gatekeeper.numeric import Rng
from gatekeeper.signature import encode_signature, generate_key
from gatekeeper.training import TriggerSet, evaluate
from gatekeeper.verification import (ArchitectureMismatchError, KeyStudy, MissingKeyError, binomial_tail,
                                     counterfeit_study, gate_comparison_rows, gate_histogram, high_gate_mass,
                                     ks_statistic, make_counterfeit, predictions_oracle, secrecy_check,
                                     verify_blackbox_pvalue, verify_whitebox)


def _brute_tail(matches, n, C):
    hits = 0
    for labels in itertools.product(range(C), repeat=n):
        hits += sum(1 for v in labels if v == 0) >= matches
    return hits / C ** n


@pytest.mark.parametrize("C", [2, 3])
@pytest.mark.parametrize("n", [1, 4, 7])
def test_tail_matches_enumeration(n, C):
    for m in range(n + 2):
        assert binomial_tail(m, n, C) == pytest.approx(_brute_tail(m, n, C), rel=1e-12, abs=0)


@pytest.mark.parametrize("n,C", [(50, 6), (200, 10), (25, 2)])
def test_tail_matches_scipy(n, C):
    for m in range(1, n + 1, 3):
        assert binomial_tail(m, n, C) == pytest.approx(binom.sf(m - 1, n, 1 / C), rel=1e-9)


def test_tail_edge_values():
    assert binomial_tail(10, 10, 6) == pytest.approx(1.654e-8, rel=1e-3)
    assert binomial_tail(0, 10, 6) == 1.0
    assert binomial_tail(11, 10, 6) == 0.0
    assert 0.0 <= binomial_tail(500, 500, 10) < 1e-300
    with pytest.raises(ValueError):
        binomial_tail(1, 2, 1)


def _trigger(n=10, C=6):
    return TriggerSet(np.zeros((n, 3), dtype=np.int64), np.arange(n) % C, (np.arange(n) + 1) % C, np.arange(n), C)


def test_blackbox_counts_matches():
    trig = _trigger()
    m, p = verify_blackbox_pvalue(lambda x: trig.assigned_labels.copy(), trig, 6)
    assert m == 10 and p == pytest.approx(6.0 ** -10)
    logits = np.eye(6)[trig.original_labels]
    m, p = verify_blackbox_pvalue(lambda x: logits, trig, 6)
    assert m == 0 and p == 1.0


def test_blackbox_empty_trigger():
    empty = TriggerSet(np.zeros((0, 3)), np.zeros(0, dtype=int), np.zeros(0, dtype=int), np.zeros(0, dtype=int), 6)
    with pytest.raises(ValueError, match="non-empty"):
        verify_blackbox_pvalue(lambda x: x, empty, 6)


@pytest.fixture
def model():
    return SequenceModel("lstm", input_size=4, hidden_size=64, num_classes=3, seed=5)


def test_whitebox_needs_key(model):
    with pytest.raises(MissingKeyError, match="key"):
        verify_whitebox(model, encode_signature("a", 64), None)


def test_whitebox_on_untrained_models_is_chance():
    sig = encode_signature("abcdefgh", 64)
    accs = []
    for seed in range(8):
        m = SequenceModel("lstm", input_size=4, hidden_size=64, num_classes=3, seed=seed)
        acc, text = verify_whitebox(m, sig, generate_key("random", Rng(100 + seed), 1, 2, 4))
        accs.append(acc)
        assert len(text) == 8
    assert abs(np.mean(accs) - 0.5) < 0.08  # 512 bits, sd ~ 0.022


def test_predictions_oracle(model):
    x = Rng(0).uniform(-1, 1, (5, 3, 4))
    key = generate_key("random", Rng(1), 1, 2, 4)
    assert np.array_equal(predictions_oracle(model, key)(x), model.predict(x, key))


def test_counterfeit_study_shapes_and_identity():
    ds = generate_synthetic_text(Rng(0), 40, V=12, C=3, length_range=(4, 5))
    m = SequenceModel("gru", hidden_size=8, num_classes=3, vocab_size=12, embed_dim=4)
    key = generate_key("random", Rng(3), 1, 2, 4)
    empty = counterfeit_study(m, key, 0, Rng(0), ds)
    assert empty.counterfeit_accs == [] and empty.summary()["counterfeit"]["count"] == 0
    trig = TriggerSet(ds.inputs[:5], ds.labels[:5], ds.labels[:5], np.arange(5), 3)
    st = counterfeit_study(m, key, 4, Rng(1), ds, trig)
    s = st.summary()
    assert s["counterfeit"]["count"] == 4 and len(st.counterfeit_trigger_accs) == 4
    assert s["counterfeit"]["min"] <= s["counterfeit"]["mean"] <= s["counterfeit"]["max"]
    again = counterfeit_study(m, key, 4, Rng(1), ds, trig)
    assert again.counterfeit_accs == st.counterfeit_accs


def test_counterfeit_equal_to_genuine_scores_the_same(model):
    ds_x = Rng(0).uniform(-1, 1, (30, 3, 4))
    ds = Dataset(ds_x, Rng(1).integers(3, 30), 3)
    key = generate_key("random", Rng(3), 1, 2, 4)
    # a counterfeit drawn from the same seed is the genuine key
    fake = make_counterfeit(key, Rng(3))
    assert fake == key
    assert evaluate(model, ds, fake) == evaluate(model, ds, key)
    assert KeyStudy(0.5, [0.5]).summary()["counterfeit"] == {"count": 1, "mean": 0.5, "min": 0.5, "max": 0.5}


def test_gate_histogram_conserves_mass(model):
    key = generate_key("random", Rng(2), 1, 2, 4)
    counts, edges, density = gate_histogram(model, key, 7)
    assert counts.sum() == 7 * 64 and len(edges) == 51
    assert np.sum(density * np.diff(edges)) == pytest.approx(1.0)


def test_untrained_gates_sit_near_half(model):
    vals = model.gate_trace(generate_key("random", Rng(2), 1, 2, 4), 10).ravel()
    assert abs(vals.mean() - 0.5) < 0.05
    assert high_gate_mass(model, generate_key("random", Rng(2), 1, 2, 4), 10) < 0.05


def test_gate_comparison_rows(model):
    key = generate_key("random", Rng(2), 1, 2, 4)
    fakes = [generate_key("random", Rng(s), 1, 2, 4) for s in range(3)]
    rows = gate_comparison_rows(model, key, fakes, 5, bins=10)
    assert len(rows) == 10 and rows[0]["bin_left"] == 0.0 and rows[-1]["bin_right"] == 1.0
    assert sum(r["density_counterfeit"] for r in rows) * 0.1 == pytest.approx(1.0)


@pytest.mark.parametrize("seed", range(4))
def test_ks_matches_scipy(seed):
    rng = Rng(seed)
    a, b = rng.uniform(0, 1, 300), rng.uniform(0.1, 1.2, 257)
    assert ks_statistic(a, b) == pytest.approx(ks_2samp(a, b).statistic, abs=1e-12)
    ties_a, ties_b = rng.integers(5, 100), rng.integers(6, 80)
    assert ks_statistic(ties_a, ties_b) == pytest.approx(ks_2samp(ties_a, ties_b).statistic, abs=1e-12)


def test_ks_extremes():
    a = Rng(0).uniform(0, 1, 100)
    assert ks_statistic(a, a) == 0.0
    assert ks_statistic(a, a + 2.0) == 1.0


def test_secrecy_check():
    a = SequenceModel("gru", input_size=4, hidden_size=16, num_classes=3, seed=1)
    b = SequenceModel("gru", input_size=4, hidden_size=16, num_classes=3, seed=2)
    rep = secrecy_check(a, b)
    assert set(rep.layers) == {"rnn.layer0.W_ih", "rnn.layer0.W_hh"}
    assert rep.passed and all(v["ks"] < 0.1 for v in rep.layers.values())
    assert sum(rep.layers["rnn.layer0.W_hh"]["hist_protected"]) == 48 * 16
    b.params["rnn.layer0.W_hh"].value *= 3.0
    assert not secrecy_check(a, b).passed
    with pytest.raises(ArchitectureMismatchError):
        secrecy_check(a, SequenceModel("gru", input_size=4, hidden_size=8, num_classes=3))
