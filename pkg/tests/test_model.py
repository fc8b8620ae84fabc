"""Unit tests for the encoder / classifier / decoder stack."""

from __future__ import annotations

import numpy as np
import pytest

from boundaryaug import model as md
from boundaryaug.model import (
    BOS_ID,
    EOS_ID,
    PAD_ID,
    UNK_ID,
    ModelConfig,
    TrainedModel,
    Vocabulary,
)
from boundaryaug.numerics import ShapeMismatchError, Tensor


@pytest.fixture
def small_stack():
    cfg = ModelConfig(n_classes=2, embed_dim=6, latent_dim=4, encoder_hidden=5, decoder_hidden=7, position_dim=4, max_len=8)
    rng = np.random.default_rng(42)
    vocab = Vocabulary([f"w{i}" for i in range(12)])
    enc = md.init_encoder(len(vocab), cfg, rng)
    clf = md.init_classifier(cfg, rng)
    dec = md.init_decoder(len(vocab), cfg, rng)
    return vocab, cfg, enc, clf, dec


def test_vocabulary_reserved_ids_and_roundtrip():
    vocab = Vocabulary.from_texts(["The movie was Great", "great plot"])
    assert vocab.id_of("<pad>") == PAD_ID
    assert vocab.id_of("<bos>") == BOS_ID
    assert vocab.id_of("<eos>") == EOS_ID
    assert vocab.id_of("<unk>") == UNK_ID
    ids = vocab.encode_text("the movie was great")
    assert vocab.decode_ids(ids) == "the movie was great"
    # lowercased at build time, so case differences collapse
    assert vocab.encode_text("GREAT") == vocab.encode_text("great")
    # unseen words map to UNK
    assert vocab.encode_text("zebra") == [UNK_ID]


def test_vocabulary_is_bijective_over_non_reserved():
    vocab = Vocabulary(["a", "b", "c", "a"])
    ids = vocab.non_reserved_ids()
    tokens = [vocab.token(i) for i in ids]
    assert len(set(tokens)) == len(tokens)
    for tok, i in zip(tokens, ids):
        assert vocab.id_of(tok) == i


def test_encode_single_token_is_mlp_of_its_embedding(small_stack):
    vocab, cfg, enc, _, _ = small_stack
    z = md.encode([5], enc)
    row = enc.embed.values[5]
    hidden = np.tanh(enc.w1.values @ row + enc.b1.values)
    expected = enc.w2.values @ hidden + enc.b2.values
    np.testing.assert_allclose(z.values, expected, atol=1e-15)


def test_encode_is_deterministic_and_ignores_pad(small_stack):
    _, _, enc, _, _ = small_stack
    a = md.encode([4, 7, 9], enc)
    b = md.encode([4, 7, 9], enc)
    assert np.array_equal(a.values, b.values)
    padded = md.encode([4, PAD_ID, 7, PAD_ID, 9], enc)
    np.testing.assert_allclose(padded.values, a.values, atol=1e-12)


def test_encode_is_permutation_invariant_up_to_roundoff(small_stack):
    # mean pooling is order-free mathematically; float summation order can
    # wiggle the last bits, hence the tolerance
    _, _, enc, _, _ = small_stack
    rng = np.random.default_rng(0)
    ids = [4, 5, 6, 7, 8, 9]
    base = md.encode(ids, enc).values
    for _ in range(10):
        shuffled = list(rng.permutation(ids))
        np.testing.assert_allclose(md.encode(shuffled, enc).values, base, atol=1e-12)


def test_encode_rejects_empty_and_out_of_range(small_stack):
    _, _, enc, _, _ = small_stack
    with pytest.raises(ValueError, match="empty"):
        md.encode([], enc)
    with pytest.raises(ValueError, match="empty"):
        md.encode([PAD_ID, PAD_ID], enc)
    with pytest.raises(ValueError, match="out of range"):
        md.encode([4, 999], enc)


def test_classify_zero_params_is_uniform():
    cfg = ModelConfig(n_classes=4, latent_dim=3)
    clf = md.ClassifierParams(w=Tensor(np.zeros((4, 3))), b=Tensor(np.zeros(4)))
    out = md.classify(Tensor([1.0, -2.0, 0.5]), clf)
    np.testing.assert_allclose(out.values, np.full(4, 0.25), atol=1e-15)
    assert cfg.n_classes == 4


def test_classify_symmetric_logits(small_stack):
    clf = md.ClassifierParams(w=Tensor(np.zeros((2, 4))), b=Tensor([2.0, 2.0]))
    out = md.classify(Tensor([0.0, 0.0, 0.0, 0.0]), clf)
    np.testing.assert_allclose(out.values, [0.5, 0.5], atol=1e-15)


def test_classify_outputs_sum_to_one(small_stack):
    _, _, _, clf, _ = small_stack
    rng = np.random.default_rng(7)
    z = Tensor(rng.normal(size=4))
    out = md.classify(z, clf)
    assert abs(out.values.sum() - 1.0) <= 1e-12
    assert np.all(out.values >= 0)


def test_classify_rejects_dimension_mismatch(small_stack):
    _, _, _, clf, _ = small_stack
    with pytest.raises(ShapeMismatchError):
        md.classify(Tensor([1.0, 2.0]), clf)


def test_decode_step_zero_params_is_uniform(small_stack):
    vocab, cfg, _, _, _ = small_stack
    v = len(vocab)
    step_in = cfg.latent_dim + cfg.embed_dim + cfg.position_dim
    dec = md.DecoderParams(
        embed=Tensor(np.zeros((v, cfg.embed_dim))),
        w1=Tensor(np.zeros((cfg.decoder_hidden, step_in))),
        b1=Tensor(np.zeros(cfg.decoder_hidden)),
        w2=Tensor(np.zeros((v, cfg.decoder_hidden))),
        b2=Tensor(np.zeros(v)),
        max_len=cfg.max_len,
    )
    dist = md.decode_step(Tensor(np.ones(cfg.latent_dim)), [BOS_ID], 0, dec)
    np.testing.assert_allclose(dist.values, np.full(v, 1.0 / v), atol=1e-15)


def test_decode_step_simplex_and_determinism(small_stack):
    _, cfg, _, _, dec = small_stack
    z = Tensor(np.linspace(-1, 1, cfg.latent_dim))
    a = md.decode_step(z, [BOS_ID, 5], 1, dec)
    b = md.decode_step(z, [BOS_ID, 5], 1, dec)
    assert np.array_equal(a.values, b.values)
    assert abs(a.values.sum() - 1.0) <= 1e-12


def test_decode_step_rejects_position_past_max_len(small_stack):
    _, cfg, _, _, dec = small_stack
    z = Tensor(np.zeros(cfg.latent_dim))
    with pytest.raises(ValueError, match="max_len"):
        md.decode_step(z, [BOS_ID], cfg.max_len, dec)


def test_checkpoint_roundtrip_is_bit_exact(tmp_path, small_stack):
    vocab, cfg, enc, clf, dec = small_stack
    model = TrainedModel(vocab=vocab, config=cfg, encoder=enc, classifier=clf, decoder=dec)
    path = tmp_path / "model.json"
    md.save_checkpoint(path, model)
    loaded = md.load_checkpoint(path)

    assert loaded.vocab.tokens == vocab.tokens
    for original, restored in zip(enc.tensors() + clf.tensors() + dec.tensors(),
                                  loaded.encoder.tensors() + loaded.classifier.tensors() + loaded.decoder.tensors()):
        assert np.array_equal(original.values, restored.values)

    ids = [4, 7, 9]
    z0 = md.encode(ids, enc)
    z1 = md.encode(ids, loaded.encoder)
    assert np.array_equal(z0.values, z1.values)
    assert np.array_equal(md.classify(z0, clf).values, md.classify(z1, loaded.classifier).values)
    assert np.array_equal(
        md.decode_step(z0, [BOS_ID], 0, dec).values,
        md.decode_step(z1, [BOS_ID], 0, loaded.decoder).values,
    )


def test_checkpoint_rejects_bad_version(tmp_path, small_stack):
    vocab, cfg, enc, clf, dec = small_stack
    path = tmp_path / "model.json"
    md.save_checkpoint(path, TrainedModel(vocab, cfg, enc, clf, dec))
    doc = path.read_text().replace('"format_version": 1', '"format_version": 99')
    path.write_text(doc)
    with pytest.raises(ValueError, match="version"):
        md.load_checkpoint(path)


def test_positional_encoding_is_bounded_and_distinct():
    a = md.positional_encoding(0, 8, 16)
    b = md.positional_encoding(5, 8, 16)
    assert a.shape == (8,)
    assert np.max(np.abs(a)) <= 1.0
    assert not np.allclose(a, b)
