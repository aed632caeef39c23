"""Tests for tokenization, vocabulary, and sequence encoding."""

import numpy as np
import pytest

from emgnn import autodiff as ad
from emgnn import encoder as E
from emgnn.autodiff import GruParams, Tensor


def test_tokenize_lowercases_and_splits_punctuation():
    assert E.tokenize("Is it sunny?") == ["is", "it", "sunny", "?"]


def test_tokenize_empty():
    assert E.tokenize("") == []


def test_tokenize_truncates():
    text = " ".join(f"w{i}" for i in range(25))
    # each "w<i>" splits into "w" + digit word = 2+ tokens; use plain words
    text = " ".join(["word"] * 25)
    assert len(E.tokenize(text, max_len=20)) == 20


def test_tokenize_digits_and_contractions():
    assert E.tokenize("I've 2 cats") == ["i", "have", "two", "cats"]
    assert E.tokenize("won't") == ["will", "not"]
    assert E.tokenize("it's") == ["it", "is"]


def test_tokenize_idempotent():
    for text in ("Is it sunny?", "I've 2 cats, don't I?", "the ent3 is attr7"):
        once = E.tokenize(text)
        again = E.tokenize(" ".join(once))
        assert once == again


def test_tokenize_rejects_nonpositive_max_len():
    with pytest.raises(ValueError):
        E.tokenize("hi", max_len=0)


def test_build_vocab_min_count():
    v = E.build_vocab([["a", "a", "b"]], min_count=2)
    assert "a" in v
    assert "b" not in v
    assert v.encode(["b"]) == [E.UNK_ID]


def test_build_vocab_empty_corpus():
    v = E.build_vocab([])
    assert len(v) == 2
    assert v.id_to_token == [E.PAD_TOKEN, E.UNK_TOKEN]


def test_build_vocab_deterministic():
    corpus = [["x", "y"], ["z", "x"]]
    v1 = E.build_vocab(corpus)
    v2 = E.build_vocab(corpus)
    assert v1.id_to_token == v2.id_to_token


def test_vocab_first_occurrence_order():
    v = E.build_vocab([["b", "a"], ["a", "c"]])
    assert v.id_to_token[2:] == ["b", "a", "c"]


def make_params(seed=0, vocab=6, e=3, d=4):
    return E.EncoderParams.init(vocab, e, d, np.random.default_rng(seed))


def test_encode_empty_sequence_is_zero():
    p = make_params()
    out = E.encode_sequence([], p)
    assert np.array_equal(out.values, np.zeros(4))


def test_pad_only_equals_empty():
    p = make_params()
    assert np.array_equal(E.encode_sequence([E.PAD_ID, E.PAD_ID], p).values,
                          E.encode_sequence([], p).values)


def test_encode_rejects_out_of_range_id():
    p = make_params()
    with pytest.raises(IndexError):
        E.encode_sequence([99], p)


def test_encode_scalar_oracle():
    """Length-2 sequence at d=1 against a hand-stepped 2-layer recurrence."""
    rng = np.random.default_rng(3)
    p = E.EncoderParams.init(4, 1, 1, rng)

    def gru(params, h, x):
        wz, uz, bz = (params.wz.values[0, 0], params.uz.values[0, 0],
                      params.bz.values[0])
        wr, ur, br = (params.wr.values[0, 0], params.ur.values[0, 0],
                      params.br.values[0])
        wh, uh, bh = (params.wh.values[0, 0], params.uh.values[0, 0],
                      params.bh.values[0])
        z = 1 / (1 + np.exp(-(wz * x + uz * h + bz)))
        r = 1 / (1 + np.exp(-(wr * x + ur * h + br)))
        cand = np.tanh(wh * x + uh * (r * h) + bh)
        return (1 - z) * h + z * cand

    ids = [2, 3]
    h1 = h2 = 0.0
    for i in ids:
        x = p.embedding.values[i, 0]
        h1 = gru(p.layer1, h1, x)
        h2 = gru(p.layer2, h2, h1)
    out = E.encode_sequence(ids, p)
    assert abs(out.values[0] - h2) < 1e-12


def test_encode_batch_matches_sequential():
    p = make_params(seed=4)
    seqs = [[2, 3, 4], [5], [], [3, E.PAD_ID, 2]]
    batch = E.encode_batch(seqs, p)
    for b, s in enumerate(seqs):
        single = E.encode_sequence(s, p)
        assert np.allclose(batch.values[b], single.values, atol=1e-15)


def test_pad_embedding_row_zero():
    p = make_params()
    assert np.array_equal(p.embedding.values[E.PAD_ID], np.zeros(3))


def test_output_shape_for_all_lengths():
    p = make_params()
    for n in range(5):
        out = E.encode_sequence([2] * n, p)
        assert out.values.shape == (4,)


def test_fuse_identity_without_context():
    p = make_params()
    h = Tensor.const(np.ones(4))
    assert E.fuse(h, None, p) is h


def test_fuse_with_context():
    rng = np.random.default_rng(5)
    p = E.EncoderParams.init(6, 3, 4, rng, ctx_dim=2)
    h = Tensor.const(rng.normal(size=4))
    ctx = rng.normal(size=2)
    out = E.fuse(h, ctx, p)
    expected = np.maximum(
        0.0, p.fuse_w.values @ np.concatenate([h.values, ctx]) + p.fuse_b.values)
    assert np.allclose(out.values, expected, atol=1e-15)


def test_fuse_without_params_rejects_context():
    p = make_params()
    with pytest.raises(ValueError):
        E.fuse(Tensor.const(np.zeros(4)), np.zeros(2), p)


def test_named_tensors_cover_all_parameters():
    p = make_params()
    names = p.named_tensors()
    assert "encoder.embedding" in names
    assert len([n for n in names if n.startswith("encoder.l1.")]) == 9
    assert len([n for n in names if n.startswith("encoder.l2.")]) == 9
