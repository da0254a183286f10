"""Optimization: AdamW, dynamic MLM masking, pretraining, fine-tuning, prediction.

Defaults follow the published training table (AdamW, betas 0.9/0.999,
eps 1e-8, batch 64, 3 gradient-accumulation steps, 50 epochs). The learning
rate is not published; 3e-4 with 10% linear warmup and linear decay to zero
is used unless configured otherwise.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .encoder import (
    Checkpoint,
    EncoderConfig,
    classify_logits,
    forward,
    init_params,
    is_decayed,
    mlm_logits,
    pad_batch,
    param_shapes,
    _trunc_normal,
    INIT_STD,
)
from .errors import ConfigError, EmptyCorpus, ShapeMismatch, VocabMismatch
from .igt_data import MASK, N_SPECIALS, PAD, SEP, UNSEEN_LABEL

log = logging.getLogger(__name__)

IGNORE_INDEX = -100


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 3e-4
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    batch_size: int = 64
    grad_accum_steps: int = 3
    epochs: int = 50
    seed: int = 0
    warmup_fraction: float = 0.1
    schedule: str = "linear"

    def __post_init__(self):
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be > 0")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ConfigError("betas must lie in (0, 1)")
        if self.epsilon <= 0 or self.batch_size < 1 or self.grad_accum_steps < 1 or self.epochs < 0:
            raise ConfigError("epsilon, batch_size, grad_accum_steps and epochs must be positive")
        if not 0 <= self.warmup_fraction < 1:
            raise ConfigError("warmup_fraction must lie in [0, 1)")
        if self.schedule not in ("linear", "constant"):
            raise ConfigError(f"unknown schedule {self.schedule!r}")

    def replace(self, **kw):
        return replace(self, **kw)

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class MaskingPolicy:
    mask_prob: float = 0.15
    replace_mask: float = 0.80
    replace_random: float = 0.10
    keep_original: float = 0.10

    def __post_init__(self):
        for v in (self.mask_prob, self.replace_mask, self.replace_random, self.keep_original):
            if not 0.0 <= v <= 1.0:
                raise ConfigError("masking probabilities must lie in [0, 1]")
        if abs(self.replace_mask + self.replace_random + self.keep_original - 1.0) > 1e-9:
            raise ConfigError("replacement fractions must sum to 1")

    def to_dict(self):
        return asdict(self)


@dataclass
class OptimizerState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0


# ---------------------------------------------------------------------------
# AdamW


def adamw_step(params, grads, state, cfg, lr=None, decay=None):
    """One decoupled-weight-decay Adam update, in place.

    ``params`` maps names to Tensors and ``grads`` maps names to arrays;
    parameters without a gradient entry are left untouched. The update is
    ``theta <- theta * (1 - lr * wd) - lr * m_hat / (sqrt(v_hat) + eps)``
    where the decay factor only applies to names for which ``decay(name,
    shape)`` holds (weight matrices by default).
    """
    lr = cfg.learning_rate if lr is None else lr
    decay = decay or is_decayed
    state.step += 1
    t = state.step
    b1, b2 = cfg.beta1, cfg.beta2
    bc1, bc2 = 1.0 - b1 ** t, 1.0 - b2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != p.shape:
            raise ShapeMismatch(f"adamw_step[{name}]", p.shape, g.shape)
        dt = p.data.dtype
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= dt.type(b1)
        m += dt.type(1.0 - b1) * g
        v *= dt.type(b2)
        v += dt.type(1.0 - b2) * (g * g)
        update = (m / dt.type(bc1)) / (np.sqrt(v / dt.type(bc2)) + dt.type(cfg.epsilon))
        if cfg.weight_decay and decay(name, p.shape):
            p.data *= dt.type(1.0 - lr * cfg.weight_decay)
        p.data -= dt.type(lr) * update
    return params, state


def lr_at(step, total_steps, cfg):
    """Learning rate for 0-based optimizer ``step``: linear warmup then linear decay to 0."""
    if cfg.schedule == "constant" or total_steps <= 0:
        return cfg.learning_rate
    warm = int(math.ceil(cfg.warmup_fraction * total_steps))
    if step < warm:
        return cfg.learning_rate * (step + 1) / warm
    return cfg.learning_rate * max(0.0, (total_steps - step) / max(1, total_steps - warm))


# ---------------------------------------------------------------------------
# masking


def apply_dynamic_masking(input_ids, policy, rng, vocab_size, protected=(PAD, SEP)):
    """Corrupt a padded id batch for masked-LM training.

    Every position not in ``protected`` is selected independently with
    probability ``mask_prob``; a selected position becomes MASK, a uniformly
    drawn non-special id, or stays unchanged in the policy's proportions.
    Returns ``(corrupted_ids, targets)`` with ``IGNORE_INDEX`` targets at
    unselected positions. Each call draws fresh masks.
    """
    ids = np.asarray(input_ids)
    cand = ~np.isin(ids, protected)
    sel = (rng.random(ids.shape) < policy.mask_prob) & cand
    r = rng.random(ids.shape)
    to_mask = sel & (r < policy.replace_mask)
    to_rand = sel & (r >= policy.replace_mask) & (r < policy.replace_mask + policy.replace_random)
    out = ids.copy()
    out[to_mask] = MASK
    n_rand = int(to_rand.sum())
    if n_rand:
        if vocab_size > N_SPECIALS:
            out[to_rand] = rng.integers(N_SPECIALS, vocab_size, size=n_rand)
        else:
            out[to_rand] = MASK
    targets = np.where(sel, ids, IGNORE_INDEX)
    return out, targets


# ---------------------------------------------------------------------------
# training loop


def _ids_of(x):
    return x.input_ids if hasattr(x, "input_ids") else x


def _group_batches(n, cfg, rng, lengths=None):
    """Shuffle, cut into optimizer-step groups, then micro-batches.

    Inside a group the items are ordered by length before being split, which
    cuts padding without changing the group's summed gradient.
    """
    order = rng.permutation(n)
    size = cfg.batch_size * cfg.grad_accum_steps
    out = []
    for i in range(0, n, size):
        g = order[i:i + size]
        if lengths is not None:
            g = g[np.argsort(lengths[g], kind="stable")]
        out.append([g[j:j + cfg.batch_size] for j in range(0, len(g), cfg.batch_size)])
    return out


def _run_training(model, lengths, make_batch, head, cfg, trainable, on_epoch=None, tag="train"):
    """Shared loop: shuffle, micro-batch, accumulate, AdamW step, log per epoch.

    ``lengths`` gives each item's sequence length; ``make_batch(indices, rng)``
    returns ``(ids, pad_mask, targets)``.
    Losses are normalized by the token count of the whole accumulation group,
    so accumulated micro-batches give the same gradient as one large batch.
    """
    rng = np.random.default_rng(cfg.seed)
    lengths = np.asarray(lengths)
    n_items = len(lengths)
    n_batches = math.ceil(n_items / cfg.batch_size)
    steps_per_epoch = math.ceil(n_batches / cfg.grad_accum_steps)
    total = steps_per_epoch * cfg.epochs
    state = OptimizerState()
    params = {k: model.params[k] for k in trainable}
    history = []
    for p in model.params.values():
        p.requires_grad = False
        p.grad = None
    for p in params.values():
        p.requires_grad = True
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        loss_sum, tok_sum, correct = 0.0, 0, 0
        for group in _group_batches(n_items, cfg, rng, lengths):
            prepared = [make_batch(b, rng) for b in group]
            n_tok = sum(int((tg != IGNORE_INDEX).sum()) for _, _, tg in prepared)
            for ids, mask, tg in prepared:
                hidden = forward(model, ids, mask, training=True, rng=rng)
                logits = head(model, hidden)
                loss = ad.cross_entropy(logits, tg, IGNORE_INDEX, normalizer=max(n_tok, 1))
                ad.backward(loss)
                loss_sum += float(loss.data) * n_tok
                valid = tg != IGNORE_INDEX
                correct += int(((logits.data.argmax(-1) == tg) & valid).sum())
            tok_sum += n_tok
            lr = lr_at(step, total, cfg)
            grads = {k: p.grad for k, p in params.items() if p.grad is not None}
            adamw_step(params, grads, state, cfg, lr)
            for p in params.values():
                p.grad = None
            step += 1
        rec = {"epoch": epoch, "split": tag, "loss": loss_sum / max(tok_sum, 1),
               "accuracy": correct / max(tok_sum, 1), "lr": lr,
               "seconds": round(time.perf_counter() - t0, 3)}
        history.append(rec)
        log.debug("%s epoch %d loss %.4f", tag, epoch, rec["loss"])
        if on_epoch is not None:
            on_epoch(rec)
    for p in model.params.values():
        p.requires_grad = False
        p.grad = None
    return history


def pretrain_mlm(corpus, cfg, policy, enc_cfg, init=None, on_epoch=None, kind="mlm"):
    """Masked-LM pretraining with fresh masks every epoch.

    ``corpus`` holds EncodedSentences (or raw id sequences). Starts from
    ``init`` if given, otherwise from ``init_params(enc_cfg, cfg.seed)``.
    Returns the trained Checkpoint; its ``history`` attribute holds per-epoch
    records.
    """
    seqs = [tuple(_ids_of(x)) for x in corpus]
    if not seqs:
        raise EmptyCorpus("pretraining corpus is empty")
    model = init.copy() if init is not None else init_params(enc_cfg, cfg.seed)
    v = model.config.input_vocab_size

    def make_batch(idx, rng):
        ids, mask = pad_batch([seqs[i] for i in idx])
        corrupted, tg = apply_dynamic_masking(ids, policy, rng, v)
        return corrupted, mask, tg

    trainable = [k for k in model.params if not k.startswith("cls.")]
    hist = _run_training(model, [len(x) for x in seqs], make_batch, mlm_logits, cfg, trainable, on_epoch, tag=kind)
    model.meta["kind"] = kind
    model.history = hist
    return model


def _label_targets(labels):
    tg = np.asarray(labels)
    return np.where(tg == UNSEEN_LABEL, IGNORE_INDEX, tg)


def train_classifier(model, train, cfg, on_epoch=None, tag="finetune"):
    """Continue token-classification training of ``model`` (a copy is returned)."""
    if not train:
        raise EmptyCorpus("classifier training set is empty")
    model = model.copy()
    inputs = [tuple(e.input_ids) for e in train]
    labels = [tuple(e.label_ids) for e in train]

    def make_batch(idx, rng):
        ids, mask = pad_batch([inputs[i] for i in idx])
        lab, _ = pad_batch([labels[i] for i in idx], pad_value=IGNORE_INDEX)
        return ids, mask, _label_targets(lab)

    trainable = [k for k in model.params if not k.startswith("mlm.")]
    hist = _run_training(model, [len(x) for x in inputs], make_batch, classify_logits, cfg, trainable, on_epoch, tag=tag)
    model.meta["kind"] = "classifier"
    model.history = hist
    model.meta["weight_decay"] = cfg.weight_decay
    return model


def attach_classifier(base, label_vocab_size, seed=0):
    """Copy of ``base`` with a freshly initialized classification head."""
    cfg = EncoderConfig(**{**base.config.to_dict(), "label_vocab_size": label_vocab_size})
    rng = np.random.default_rng(seed)
    params = {k: ad.Tensor(v.data.copy(), name=k) for k, v in base.params.items() if not k.startswith("cls.")}
    shapes = param_shapes(cfg)
    dt = base.params["tok_emb"].dtype
    params["cls.w"] = ad.Tensor(_trunc_normal(rng, shapes["cls.w"], INIT_STD).astype(dt), name="cls.w")
    params["cls.b"] = ad.Tensor(np.zeros(shapes["cls.b"], dtype=dt), name="cls.b")
    meta = {k: v for k, v in base.meta.items() if k in ("vocab", "label_vocab")}
    return Checkpoint(cfg, {k: params[k] for k in shapes}, meta)


def finetune_classifier(base, train, cfg, label_vocab_size, vocab=None, on_epoch=None):
    """Fine-tune a pretrained MLM checkpoint for per-morpheme gloss classification.

    SEP positions carry the SEP label and are trained; PAD is ignored.
    Raises ``VocabMismatch`` when ``vocab`` (or the encoded data) disagrees
    with the checkpoint's input vocabulary.
    """
    check_vocab(base, vocab)
    hi = max((max(e.input_ids) for e in train), default=0)
    if hi >= base.config.input_vocab_size:
        raise VocabMismatch(f"token id {hi} outside checkpoint vocabulary of {base.config.input_vocab_size}")
    model = attach_classifier(base, label_vocab_size, cfg.seed)
    if vocab is not None:
        model.meta["vocab"] = vocab.fingerprint()
    return train_classifier(model, train, cfg, on_epoch)


def check_vocab(model, vocab):
    if vocab is None:
        return
    if model.config.input_vocab_size != vocab.input_size:
        raise VocabMismatch(f"checkpoint input vocabulary has {model.config.input_vocab_size} entries, "
                            f"vocabulary has {vocab.input_size}")
    fp = model.meta.get("vocab")
    if fp is not None and fp != vocab.fingerprint():
        raise VocabMismatch("checkpoint was trained with a different vocabulary")
    if model.config.label_vocab_size and model.config.label_vocab_size != vocab.label_size:
        raise VocabMismatch(f"checkpoint label vocabulary has {model.config.label_vocab_size} entries, "
                            f"vocabulary has {vocab.label_size}")


# ---------------------------------------------------------------------------
# inference


@dataclass(frozen=True)
class Prediction:
    """Per-position gloss distributions and choices for one sentence."""

    probs: np.ndarray
    pred_ids: tuple
    input_ids: tuple
    oov_mask: tuple
    replaced: tuple = ()
    source: object = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if not self.replaced:
            object.__setattr__(self, "replaced", (False,) * len(self.pred_ids))

    def __len__(self):
        return len(self.pred_ids)


def _length_batches(lengths, batch_size):
    order = sorted(range(len(lengths)), key=lambda i: (lengths[i], i))
    return [order[i:i + batch_size] for i in range(0, len(order), batch_size)]


def predict(model, sentences, batch_size=128):
    """Argmax gloss and full softmax distribution at every position (dropout off)."""
    out = [None] * len(sentences)
    seqs = [tuple(e.input_ids) for e in sentences]
    with ad.no_grad():
        for idx in _length_batches([len(s) for s in seqs], batch_size):
            ids, mask = pad_batch([seqs[i] for i in idx])
            logits = classify_logits(model, forward(model, ids, mask)).data.astype(np.float64)
            z = logits - logits.max(axis=-1, keepdims=True)
            p = np.exp(z)
            p /= p.sum(axis=-1, keepdims=True)
            for row, i in enumerate(idx):
                n = len(seqs[i])
                probs = p[row, :n].copy()
                e = sentences[i]
                out[i] = Prediction(probs, tuple(int(x) for x in probs.argmax(-1)), seqs[i],
                                    tuple(e.oov_mask), (), e)
    return out


def perplexity(model, corpus, policy=MaskingPolicy(), seed=0, batch_size=128):
    """exp(mean cross entropy over masked positions); masks are drawn from ``seed``."""
    seqs = [tuple(_ids_of(x)) for x in corpus]
    if not seqs:
        raise EmptyCorpus("perplexity needs a non-empty corpus")
    rng = np.random.default_rng(seed)
    v = model.config.input_vocab_size
    nll, count = 0.0, 0
    with ad.no_grad():
        for i in range(0, len(seqs), batch_size):
            ids, mask = pad_batch(seqs[i:i + batch_size])
            corrupted, tg = apply_dynamic_masking(ids, policy, rng, v)
            n = int((tg != IGNORE_INDEX).sum())
            if not n:
                continue
            logits = mlm_logits(model, forward(model, corrupted, mask))
            loss = ad.cross_entropy(ad.Tensor(logits.data.astype(np.float64)), tg, IGNORE_INDEX, reduction="sum")
            nll += float(loss.data)
            count += n
    if not count:
        raise EmptyCorpus("no maskable positions in corpus")
    return math.exp(nll / count)


# ---------------------------------------------------------------------------
# weight-decay sweep

TABLE_WEIGHT_DECAYS = (0.0, 0.01, 0.1, 0.5, 0.75, 1.0)


def sweep_weight_decay(base, train, eval_sets, cfg, label_vocab_size, values=TABLE_WEIGHT_DECAYS,
                       vocab=None, on_epoch=None):
    """Fine-tune once per weight decay from the same checkpoint and seed.

    ``eval_sets`` maps names to encoded sentences. Returns one dict per value
    with the model and the accuracy on each eval set.
    """
    from .metrics import morpheme_accuracy

    if not values:
        raise ConfigError("weight-decay sweep needs at least one value")
    runs = []
    for wd in values:
        model = finetune_classifier(base, train, cfg.replace(weight_decay=float(wd)), label_vocab_size,
                                    vocab, on_epoch)
        accs = {name: morpheme_accuracy(predict(model, data), data).accuracy for name, data in eval_sets.items()}
        log.info("weight decay %g: %s", wd, accs)
        runs.append({"weight_decay": float(wd), "model": model, "accuracy": accs})
    return runs
