import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gatekeeper.numeric import Rng, finite_diff_grad
from gatekeeper.signature import (CapacityError, Key, Signature, decode_signature, decode_signs,
                                  encode_signature, generate_key, key_space_size, sign_accuracy, sign_loss)


@given(st.text(alphabet=st.characters(min_codepoint=32, max_codepoint=126), max_size=8))
@settings(max_examples=100)
def test_encode_decode_identity(text):
    sig = encode_signature(text, 64)
    assert sig.n_bits == 8 * len(text)
    assert decode_signs(sig.signs) == text
    assert decode_signature(sig.signs * 0.3, len(text), sig) == (text, 1.0)


def test_bit_order_msb_first():
    sig = encode_signature("A", 8)  # 0x41 = 01000001
    assert sig.signs.tolist() == [-1, 1, -1, -1, -1, -1, -1, 1]


def test_capacity_and_ascii_errors():
    with pytest.raises(CapacityError):
        encode_signature("priv!", 32)
    encode_signature("priv", 32)
    with pytest.raises(ValueError):
        encode_signature("café", 64)
    with pytest.raises(CapacityError):
        sign_loss(np.zeros(8), encode_signature("ab", 16))


def test_zero_decodes_as_zero_bit():
    assert decode_signs(np.zeros(8)) == "\x00"


def test_sign_loss_values_and_gradient():
    sig = encode_signature("p", 16, gamma=0.1)
    h0 = Rng(0).uniform(-0.3, 0.3, 16)
    loss, grad = sign_loss(h0, sig)
    ref = sum(max(0.1 - h0[i] * sig.signs[i], 0.0) for i in range(8))
    assert loss == pytest.approx(ref)
    assert not grad[8:].any()
    num = finite_diff_grad(lambda v: sign_loss(v, sig)[0], h0.copy())
    assert np.allclose(grad, num, atol=1e-6)


def test_sign_loss_zero_beyond_margin():
    sig = encode_signature("ok", 16)
    loss, grad = sign_loss(sig.signs * 0.2, sig)
    assert loss == 0.0 and not grad.any()


def test_sign_accuracy_counts_bits():
    sig = encode_signature("ab", 16)
    h0 = sig.signs.copy()
    h0[[0, 5]] *= -1
    assert sign_accuracy(h0, sig) == pytest.approx(14 / 16)


def test_flipped_changes_exact_count():
    sig = encode_signature("priv", 32)
    bad, idx = sig.flipped(0.4, Rng(1))
    assert len(idx) == 13 and len(set(idx.tolist())) == 13
    changed = np.flatnonzero(bad.signs != sig.signs)
    assert np.array_equal(changed, idx)
    same, none = sig.flipped(0.0, Rng(1))
    assert none.size == 0 and np.array_equal(same.signs, sig.signs)
    with pytest.raises(ValueError):
        sig.flipped(1.5, Rng(0))


def test_signature_dict_round_trip():
    sig = encode_signature("key", 32, gamma=0.2)
    back = Signature.from_dict(sig.to_dict())
    assert back.text == "key" and np.array_equal(back.signs, sig.signs) and back.gamma == 0.2
    with pytest.raises(ValueError):
        Signature("x", np.ones(8), gamma=0.0)


def test_random_key_shape_and_range():
    k = generate_key("random", Rng(4), 3, 2, 5)
    assert k.shape == (3, 2, 5) and k.method == "random"
    assert np.abs(k.sequences).max() <= 1.0
    assert np.array_equal(k.sequences, k.sequences.astype(np.float32))
    assert k == generate_key("random", Rng(4), 3, 2, 5)


def test_token_keys_skip_padding():
    emb = np.arange(12, dtype=float).reshape(6, 2)
    corpus = np.array([[0, 0, 0, 3, 4], [0, 5, 1, 2, 3]])
    k = generate_key("batch", Rng(0), 2, 3, 2, embedding=emb, corpus=corpus)
    assert not (k.token_ids == 0).any()
    assert np.array_equal(k.sequences, emb[k.token_ids])
    rows = {tuple(r) for r in k.token_ids.tolist()}
    assert rows == {(3, 4, 3), (5, 1, 2)}


def test_fixed_key_is_single_sequence():
    corpus = Rng(0).uniform(-1, 1, (4, 6, 3))
    k = generate_key("fixed", Rng(2), 5, 4, 3, corpus=corpus)
    assert k.shape == (1, 4, 3)
    assert any(np.array_equal(k.sequences[0], np.asarray(c[:4], dtype=np.float32)) for c in corpus)


def test_key_method_errors():
    with pytest.raises(ValueError):
        generate_key("magic", Rng(0), 1, 1, 1)
    with pytest.raises(ValueError):
        generate_key("batch", Rng(0), 1, 1, 1, corpus=[])
    with pytest.raises(ValueError):
        generate_key("batch", Rng(0), 1, 2, 2, corpus=np.array([[1, 2]]))
    with pytest.raises(ValueError):
        generate_key("batch", Rng(0), 3, 1, 2, corpus=np.zeros((2, 3, 2)))
    with pytest.raises(ValueError):
        Key(np.zeros((1, 2, 3)), method="other")


def test_key_metadata_round_trip():
    k = generate_key("batch", Rng(0), 2, 2, 2, embedding=np.ones((4, 2)), corpus=np.array([[1, 2], [3, 1]]))
    assert Key.from_metadata(k.metadata(), k.sequences) == k


def test_key_space_size():
    assert key_space_size(1, 2, 10) == 1024
    assert key_space_size(10, 10, 3) == 10 ** 6
