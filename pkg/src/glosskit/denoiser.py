"""A masked LM over gloss sequences that repairs predictions at OOV morphemes.

The classifier's argmax glosses are re-encoded as denoiser input ids: the
label separator becomes the input SEP token and every other label ``k``
becomes ``k + 3``, just past the four special ids. The denoiser vocabulary is
therefore the label vocabulary plus ``<pad>``, ``<unk>`` and ``<mask>``.
Only OOV positions are rewritten, all in one forward pass per sentence.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import replace

import numpy as np

from . import autodiff as ad
from .encoder import EncoderConfig, forward, mlm_logits, pad_batch
from .errors import EmptyCorpus, VocabMismatch
from .igt_data import LABEL_SEP, MASK, N_SPECIALS, SEP, UNSEEN_LABEL
from .trainer import MaskingPolicy, TrainConfig, pretrain_mlm

log = logging.getLogger(__name__)

_OFFSET = N_SPECIALS - 1  # label 1 -> id 4; label 0 (SEP) shares the SEP id

DENOISER_TRAIN = TrainConfig(weight_decay=0.01, epochs=100)


class DenoiseMode(str, enum.Enum):
    UNMASKED = "unmasked"  # feed the classifier's glosses as they are
    MASKED = "masked"      # hide the OOV positions behind <mask> first


def input_size(label_vocab_size):
    return label_vocab_size + _OFFSET


def labels_to_inputs(label_ids):
    out = []
    for k in label_ids:
        k = int(k)
        if k == LABEL_SEP:
            out.append(SEP)
        elif k < 0:
            raise ValueError(f"label id {k} cannot be fed to the denoiser")
        else:
            out.append(k + _OFFSET)
    return tuple(out)


def _label_sequences(gloss_corpus):
    for x in gloss_corpus:
        ids = x.label_ids if hasattr(x, "label_ids") else x
        # a gloss unseen in training has no id; it cannot occur in training labels
        if any(int(k) == UNSEEN_LABEL for k in ids):
            raise ValueError("training gloss sequences must not contain unseen labels")
        yield labels_to_inputs(ids)


def train_denoiser(gloss_corpus, label_vocab_size, cfg=DENOISER_TRAIN, enc_cfg=None,
                   policy=MaskingPolicy(), on_epoch=None):
    """Masked-LM training on label sequences (EncodedSentences or id tuples).

    ``enc_cfg`` defaults to the pretraining architecture with the input
    vocabulary resized; any given config has its vocabulary sizes overridden.
    """
    seqs = list(_label_sequences(gloss_corpus))
    if not seqs:
        raise EmptyCorpus("denoiser training corpus is empty")
    n_in = input_size(label_vocab_size)
    enc_cfg = replace(enc_cfg or EncoderConfig(n_in), input_vocab_size=n_in, label_vocab_size=0)
    model = pretrain_mlm(seqs, cfg, policy, enc_cfg, on_epoch=on_epoch, kind="denoiser")
    model.meta["label_vocab_size"] = int(label_vocab_size)
    return model


def _check(den, n_labels):
    want = den.meta.get("label_vocab_size")
    if want is None:
        want = den.config.input_vocab_size - _OFFSET
    if want != n_labels or den.config.input_vocab_size != input_size(n_labels):
        raise VocabMismatch(f"denoiser was trained for {want} glosses, predictions have {n_labels}")


def denoise_predictions(preds, mode, den, batch_size=128):
    """Replace the prediction at every OOV position with the denoiser's choice.

    Sentences without OOV positions are passed through untouched. At OOV
    positions the denoiser's distribution is restricted to non-separator
    glosses; the returned Prediction holds that distribution, its argmax and
    a ``replaced`` flag per position.
    """
    mode = DenoiseMode(mode)
    preds = list(preds)
    todo = [i for i, p in enumerate(preds) if any(p.oov_mask)]
    if not todo:
        return preds
    n_labels = preds[todo[0]].probs.shape[1]
    _check(den, n_labels)
    out = list(preds)
    with ad.no_grad():
        for start in range(0, len(todo), batch_size):
            idx = todo[start:start + batch_size]
            seqs = []
            for i in idx:
                p = preds[i]
                if p.probs.shape[1] != n_labels:
                    raise VocabMismatch("predictions disagree on the gloss vocabulary size")
                s = list(labels_to_inputs(p.pred_ids))
                if mode is DenoiseMode.MASKED:
                    s = [MASK if o else t for t, o in zip(s, p.oov_mask)]
                seqs.append(s)
            ids, mask = pad_batch(seqs)
            logits = mlm_logits(den, forward(den, ids, mask)).data.astype(np.float64)
            gl = logits[..., N_SPECIALS:]  # label ids 1 .. n_labels-1
            gl = gl - gl.max(axis=-1, keepdims=True)
            q = np.exp(gl)
            q /= q.sum(axis=-1, keepdims=True)
            for row, i in enumerate(idx):
                out[i] = _rewrite(preds[i], q[row])
    log.info("denoised %d of %d sentences (%s)", len(todo), len(preds), mode.value)
    return out


def _rewrite(p, q):
    probs = p.probs.copy()
    pred = list(p.pred_ids)
    replaced = list(p.replaced)
    for j, oov in enumerate(p.oov_mask):
        if not oov:
            continue
        probs[j] = 0.0
        probs[j, 1:] = q[j]
        pred[j] = int(q[j].argmax()) + 1
        replaced[j] = True
    return replace(p, probs=probs, pred_ids=tuple(pred), replaced=tuple(replaced))
