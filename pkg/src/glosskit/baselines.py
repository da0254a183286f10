"""Lexicon baselines: most-frequent gloss and random observed gloss per morpheme."""

from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .errors import EmptyCorpus
from .igt_data import LABEL_SEP, SEP, UNSEEN_LABEL

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class GlossLexicon:
    counts: dict  # morpheme -> Counter(gloss -> count)

    def __contains__(self, morpheme):
        return morpheme in self.counts

    def glosses(self):
        """Every gloss observed in training, sorted."""
        return sorted({g for c in self.counts.values() for g in c})

    def global_mode(self):
        total = Counter()
        for c in self.counts.values():
            total.update(c)
        return _mode(total)

    def to_json(self):
        return {m: dict(sorted(c.items())) for m, c in sorted(self.counts.items())}

    @classmethod
    def from_json(cls, obj):
        return cls({m: Counter(c) for m, c in obj.items()})

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, ensure_ascii=False, indent=1)


def _mode(counter):
    # highest count, ties to the lexicographically smallest gloss
    return min(counter.items(), key=lambda kv: (-kv[1], kv[0]))[0]


def fit_lexicon(train):
    if not train:
        raise EmptyCorpus("cannot fit a lexicon on an empty training set")
    counts = {}
    for s in train:
        for m, g in zip(s.morphemes, s.flat_glosses):
            counts.setdefault(m, Counter())[g] += 1
    return GlossLexicon(counts)


def predict_most_frequent(lex, s):
    """Most common training gloss per morpheme; unseen morphemes get the global mode."""
    fallback = None
    out = []
    for m in s.morphemes:
        c = lex.counts.get(m)
        if c is None:
            if fallback is None:
                fallback = lex.global_mode()
            out.append(fallback)
        else:
            out.append(_mode(c))
    return out


def predict_random(lex, s, seed=0, proportional=True):
    """Sample an observed gloss per morpheme.

    Samples proportionally to training counts (or uniformly over observed
    gloss types with ``proportional=False``). Unseen morphemes draw uniformly
    from every gloss in the lexicon. ``seed`` may be an int or a Generator.
    """
    rng = np.random.default_rng(seed)
    all_glosses = None
    out = []
    for m in s.morphemes:
        c = lex.counts.get(m)
        if c is None:
            if all_glosses is None:
                all_glosses = lex.glosses()
            out.append(all_glosses[rng.integers(len(all_glosses))])
            continue
        keys = sorted(c)
        if proportional:
            w = np.array([c[k] for k in keys], dtype=float)
            out.append(keys[rng.choice(len(keys), p=w / w.sum())])
        else:
            out.append(keys[rng.integers(len(keys))])
    return out


def to_label_ids(glosses, encoded, vocab):
    """Lay a per-morpheme gloss list over an encoded sentence (SEP label at separators)."""
    it = iter(glosses)
    ids = []
    for tok in encoded.input_ids:
        if tok == SEP:
            ids.append(LABEL_SEP)
        else:
            ids.append(vocab.gloss_to_id.get(next(it), UNSEEN_LABEL))
    return tuple(ids)


def predict_corpus(lex, encoded, vocab, method="most_frequent", seed=0, proportional=True):
    """Baseline predictions for a whole encoded split, as label-id sequences."""
    rng = np.random.default_rng(seed)
    out, n_fallback = [], 0
    for e in encoded:
        s = e.source
        n_fallback += sum(m not in lex.counts for m in s.morphemes)
        if method == "most_frequent":
            gl = predict_most_frequent(lex, s)
        elif method == "random":
            gl = predict_random(lex, s, rng, proportional)
        else:
            raise ValueError(f"unknown baseline {method!r}")
        out.append(to_label_ids(gl, e, vocab))
    log.info("%s baseline: %d OOV fallback positions", method, n_fallback)
    return out
