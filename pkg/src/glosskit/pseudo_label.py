"""Self-training on the OOD pool with the model's most confident predictions.

Each round predicts the pool, scores every sentence by its mean max-softmax
probability, keeps the top fraction with the predicted glosses as labels and
retrains on the training set plus that selection. ``run_iterations`` repeats
this and keeps the last model before OOD accuracy first drops.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError, EmptyCorpus
from .igt_data import SEP, EncodedSentence
from .trainer import TrainConfig, finetune_classifier, predict, train_classifier

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PseudoLabelConfig:
    fraction: float = 0.25
    max_iterations: int = 3
    retrain: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=10))
    continue_training: bool = True   # False: fine-tune the pretrained base from scratch each round
    exclude_sep: bool = False        # leave separator positions out of the confidence mean
    reselect_full_pool: bool = True  # False: later rounds only draw from still-unselected sentences

    def __post_init__(self):
        if not 0 < self.fraction <= 1:
            raise ConfigError(f"pseudo-label fraction must lie in (0, 1], got {self.fraction}")
        if self.max_iterations < 1:
            raise ConfigError("max_iterations must be >= 1")

    def to_dict(self):
        d = asdict(self)
        d["retrain"] = self.retrain.to_dict()
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if isinstance(d.get("retrain"), dict):
            d["retrain"] = TrainConfig(**d["retrain"])
        return cls(**d)


@dataclass(frozen=True)
class RankedPrediction:
    index: int          # position in the pool
    confidence: float
    pred_ids: tuple
    prediction: object = field(compare=False, repr=False)


def sentence_confidence(pred, exclude_sep=False):
    """Mean over positions of the highest gloss probability."""
    top = np.asarray(pred.probs, dtype=np.float64).max(axis=-1)
    if exclude_sep:
        keep = np.asarray(pred.input_ids) != SEP
        if keep.any():
            top = top[keep]
    return float(top.mean())


def rank(preds, exclude_sep=False):
    return [RankedPrediction(i, sentence_confidence(p, exclude_sep), tuple(p.pred_ids), p)
            for i, p in enumerate(preds)]


def n_selected(n, fraction):
    # tolerance keeps 1/3 * 9 at 3 rather than 4 after float rounding
    return min(n, math.ceil(fraction * n - 1e-9))


def select_top_fraction(ranked, fraction):
    """The ``ceil(fraction * N)`` most confident entries, returned in pool order.

    Equal confidences keep their original order.
    """
    if not ranked:
        raise EmptyCorpus("nothing to select from")
    k = n_selected(len(ranked), fraction)
    order = sorted(range(len(ranked)), key=lambda i: -ranked[i].confidence)
    return [ranked[i] for i in sorted(order[:k])]


def as_training_examples(selected):
    """Turn selected predictions into labelled sentences (argmax glosses as gold)."""
    out = []
    for r in selected:
        p = r.prediction
        out.append(EncodedSentence(tuple(p.input_ids), tuple(r.pred_ids), tuple(p.oov_mask),
                                   getattr(p, "source", None)))
    return out


def _retrain(model, data, cfg, base):
    if cfg.continue_training:
        return train_classifier(model, data, cfg.retrain, tag="pseudo-label")
    if base is None:
        raise ConfigError("retraining from scratch needs the pretrained base checkpoint")
    return finetune_classifier(base, data, cfg.retrain, model.config.label_vocab_size)


@dataclass
class IterationResult:
    model: object
    selected: list
    mean_confidence: float


def pseudo_label_iteration(model, train, pool, cfg, predictor=None, base=None, exclude=(), carried=()):
    """One round: predict ``pool``, select, retrain on ``train`` plus the selection.

    ``predictor(model, sentences)`` defaults to plain classifier prediction; a
    denoising predictor can be passed instead. Pool indices in ``exclude`` are
    not eligible and ``carried`` examples from earlier rounds are added to the
    training data as they are.
    """
    if not pool:
        raise EmptyCorpus("pseudo-label pool is empty")
    predictor = predictor or predict
    exclude = set(exclude)
    eligible = [i for i in range(len(pool)) if i not in exclude]
    if not eligible:
        raise EmptyCorpus("every pool sentence has already been selected")
    preds = predictor(model, [pool[i] for i in eligible])
    ranked = [RankedPrediction(i, r.confidence, r.pred_ids, r.prediction)
              for i, r in zip(eligible, rank(preds, cfg.exclude_sep))]
    chosen = select_top_fraction(ranked, cfg.fraction)
    data = list(train) + list(carried) + as_training_examples(chosen)
    new = _retrain(model, data, cfg, base)
    mean_conf = float(np.mean([r.confidence for r in chosen]))
    log.info("pseudo-label round: %d of %d selected, mean confidence %.4f", len(chosen), len(ranked), mean_conf)
    return IterationResult(new, chosen, mean_conf)


@dataclass
class PseudoLabelRun:
    model: object
    best_iteration: int
    records: list   # one dict per evaluated model, iteration 0 is the starting model


def run_iterations(model, train, pool, cfg, evaluate, predictor=None, base=None, step=None):
    """Iterate pseudo-labeling, stopping once OOD accuracy falls.

    ``evaluate(model)`` returns ``{"eval_id": acc, "eval_ood": acc}`` measured
    against true gold. ``step(model, iteration)`` replaces the default round
    (used to script runs) and returns ``(model, selected_count, mean_confidence)``.
    The returned model is the one before the first drop, or the last one.
    """
    def default_step(m, it):
        r = pseudo_label_iteration(m, train, pool, cfg, predictor, base,
                                   exclude=used if not cfg.reselect_full_pool else (),
                                   carried=carried if not cfg.reselect_full_pool else ())
        if not cfg.reselect_full_pool:
            used.update(s.index for s in r.selected)
            carried.extend(as_training_examples(r.selected))
        return r.model, len(r.selected), r.mean_confidence

    used, carried = set(), []
    step = step or default_step
    acc = evaluate(model)
    records = [_record(0, 0, None, acc)]
    best, best_it, prev = model, 0, acc["eval_ood"]
    for it in range(1, cfg.max_iterations + 1):
        if not cfg.reselect_full_pool and len(used) >= len(pool):
            break
        model, count, conf = step(best, it)
        acc = evaluate(model)
        records.append(_record(it, count, conf, acc))
        if acc["eval_ood"] < prev:
            log.info("OOD accuracy fell at iteration %d; keeping iteration %d", it, best_it)
            break
        best, best_it, prev = model, it, acc["eval_ood"]
    return PseudoLabelRun(best, best_it, records)


def _record(it, count, conf, acc):
    return {"iteration": it, "selected_count": count, "mean_confidence": conf,
            "acc_eval_id": acc.get("eval_id"), "acc_eval_ood": acc["eval_ood"]}
