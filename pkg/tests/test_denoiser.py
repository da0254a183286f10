import numpy as np
import pytest

from glosskit.denoiser import (DenoiseMode, denoise_predictions, input_size, labels_to_inputs,
                               train_denoiser)
from glosskit.encoder import EncoderConfig, init_params
from glosskit.errors import VocabMismatch
from glosskit.igt_data import MASK, SEP, ToySpec, build_vocab, encode_corpus, generate_toy_corpus
from glosskit.trainer import Prediction, TrainConfig


def one_hot_prediction(labels, oov, n_labels, inputs=None):
    probs = np.eye(n_labels)[list(labels)]
    inputs = inputs or tuple(SEP if k == 0 else 10 for k in labels)
    return Prediction(probs, tuple(labels), inputs, tuple(oov))


def echo_denoiser(n_labels):
    """No layers; the MLM head reads the token identity straight back out."""
    v = input_size(n_labels)
    m = init_params(EncoderConfig(v, n_layers=0, hidden=v, n_heads=1, max_positions=16, dropout=0.0),
                    dtype=np.float64)
    m.params["tok_emb"].data[:] = np.eye(v)
    m.params["pos_emb"].data[:] = 0
    m.params["mlm.w"].data[:] = np.eye(v)
    m.params["mlm.b"].data[:] = 0
    m.meta["label_vocab_size"] = n_labels
    return m


class TestMapping:
    def test_input_size(self):
        assert input_size(25) == 28

    def test_labels_to_inputs(self):
        assert labels_to_inputs([0, 1, 5, 0, 2]) == (SEP, 4, 8, SEP, 5)

    def test_unseen_label_rejected(self):
        with pytest.raises(ValueError):
            labels_to_inputs([1, -1])
        with pytest.raises(ValueError):
            train_denoiser([(1, -1)], 4, TrainConfig(epochs=1))


class TestEcho:
    def test_unmasked_echo_keeps_labels(self):
        den = echo_denoiser(6)
        p = one_hot_prediction([1, 2, 0, 3, 5], [False, True, False, True, False], 6)
        (out,) = denoise_predictions([p], DenoiseMode.UNMASKED, den)
        assert out.pred_ids == p.pred_ids
        assert out.replaced == (False, True, False, True, False)
        np.testing.assert_allclose(out.probs.sum(-1), 1.0)
        assert np.all(out.probs[[1, 3], 0] == 0)  # separator excluded at OOV positions

    def test_known_positions_untouched(self):
        den = echo_denoiser(6)
        p = one_hot_prediction([1, 2, 0, 3, 5], [False, True, False, True, False], 6)
        p = Prediction(p.probs * 0.5 + 0.5 / 6, p.pred_ids, p.input_ids, p.oov_mask)
        (out,) = denoise_predictions([p], "unmasked", den)
        for j in (0, 2, 4):
            assert out.probs[j].tobytes() == p.probs[j].tobytes()

    def test_masked_mode_ignores_original_guess(self):
        den = echo_denoiser(6)
        a = one_hot_prediction([1, 2, 0, 3], [False, True, False, False], 6)
        b = one_hot_prediction([1, 5, 0, 3], [False, True, False, False], 6)
        (oa,), (ob,) = denoise_predictions([a], "masked", den), denoise_predictions([b], "masked", den)
        assert oa.pred_ids == ob.pred_ids
        # <mask> echoes to no gloss: the restricted distribution is flat, argmax is the first gloss
        np.testing.assert_allclose(oa.probs[1, 1:], 1 / 5)
        assert oa.pred_ids[1] == 1

    def test_no_oov_is_identity(self):
        den = echo_denoiser(6)
        preds = [one_hot_prediction([1, 0, 2], [False] * 3, 6)]
        out = denoise_predictions(preds, "unmasked", den)
        assert out[0] is preds[0]

    def test_vocab_mismatch(self):
        den = echo_denoiser(6)
        with pytest.raises(VocabMismatch):
            denoise_predictions([one_hot_prediction([1, 2], [False, True], 7)], "unmasked", den)

    def test_unknown_mode(self):
        with pytest.raises(ValueError):
            denoise_predictions([], "sideways", echo_denoiser(6))


@pytest.fixture(scope="module")
def trained():
    corpus = generate_toy_corpus(ToySpec(n_sentences=1300), seed=0)
    vocab = build_vocab(corpus)
    enc = encode_corpus(corpus, vocab)
    n_labels = vocab.label_size + 1  # one extra gloss id ("NOM") never seen in training
    den = train_denoiser(enc[:1000], n_labels,
                         TrainConfig(learning_rate=3e-3, epochs=40, weight_decay=0.01, batch_size=32,
                                     grad_accum_steps=1),
                         EncoderConfig(1, n_layers=2, hidden=64, n_heads=4, ffn_dim=128, max_positions=64))
    return vocab, enc[1000:], den, n_labels


def test_trained_vocabulary(trained):
    vocab, _, den, n_labels = trained
    assert den.config.input_vocab_size == n_labels + 3
    assert den.meta["kind"] == "denoiser" and den.meta["label_vocab_size"] == n_labels


@pytest.mark.parametrize("mode", ["unmasked", "masked"])
def test_status_suffix_recovered_from_aspect(trained, mode):
    vocab, test, den, n = trained
    sc, prf = vocab.gloss_to_id["SC"], vocab.gloss_to_id["PRF"]
    preds = []
    for e in test:
        lab, oov = list(e.label_ids), [False] * len(e.label_ids)
        for i, k in enumerate(lab):
            if k in (sc, prf):
                oov[i], lab[i] = True, prf if k == sc else sc
        preds.append(one_hot_prediction(lab, oov, n, e.input_ids))
    out = denoise_predictions(preds, mode, den)
    hits = [p.pred_ids[i] == e.label_ids[i] for p, e in zip(out, test) for i, o in enumerate(p.oov_mask) if o]
    assert len(hits) > 100
    assert np.mean(hits) > 0.95


@pytest.mark.parametrize("mode", ["unmasked", "masked"])
def test_possessed_noun_context(trained, mode):
    # EXS [SEP] E1P <NOM> [SEP] E1P S : a possessor prefix starting a word is followed by a noun stem
    vocab, _, den, n = trained
    g = vocab.gloss_to_id
    nom = n - 1
    labels = [g["EXS"], 0, g["E1P"], nom, 0, g["E1P"], g["S"]]
    oov = [False, False, False, True, False, False, False]
    (out,) = denoise_predictions([one_hot_prediction(labels, oov, n)], mode, den)
    assert out.pred_ids[3] == g["S"]
    assert out.pred_ids[:3] == tuple(labels[:3]) and out.pred_ids[4:] == tuple(labels[4:])


def test_masked_inputs_use_mask_token(trained, monkeypatch):
    vocab, _, den, n = trained
    seen = []
    import glosskit.denoiser as dn

    real = dn.forward

    def spy(model, ids, mask=None, **kw):
        seen.append(np.array(ids))
        return real(model, ids, mask, **kw)

    monkeypatch.setattr(dn, "forward", spy)
    p = one_hot_prediction([1, 2, 0, 3], [False, True, False, False], n)
    denoise_predictions([p], "masked", den)
    assert seen[0].tolist() == [[4, MASK, SEP, 6]]
