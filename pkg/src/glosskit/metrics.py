"""Morpheme accuracy (word separators excluded) and the OOV error breakdown."""

from __future__ import annotations

from dataclasses import asdict, dataclass

from .errors import EmptyCorpus, LengthMismatch
from .igt_data import SEP


@dataclass(frozen=True)
class EvalReport:
    accuracy: float
    total_morphemes: int
    correct: int

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class OovReport:
    oov_tokens: int
    oov_incorrect: int
    total_incorrect: int
    total_tokens: int
    ratio_oov_of_incorrect: float
    ratio_oov_of_total: float

    @classmethod
    def from_counts(cls, oov_tokens, oov_incorrect, total_incorrect, total_tokens):
        if not 0 <= oov_incorrect <= min(oov_tokens, total_incorrect):
            raise ValueError("oov_incorrect must not exceed the OOV or incorrect token counts")
        return cls(oov_tokens, oov_incorrect, total_incorrect, total_tokens,
                   oov_incorrect / total_incorrect if total_incorrect else 0.0,
                   oov_incorrect / total_tokens if total_tokens else 0.0)

    def to_dict(self):
        return asdict(self)


def _pred_ids(p):
    return p.pred_ids if hasattr(p, "pred_ids") else tuple(p)


def _aligned(preds, gold):
    if len(preds) != len(gold):
        raise LengthMismatch(f"{len(preds)} predictions for {len(gold)} gold sentences")
    for k, (p, g) in enumerate(zip(preds, gold)):
        ids = _pred_ids(p)
        if len(ids) != len(g.label_ids):
            raise LengthMismatch(f"sentence {k}: {len(ids)} predicted positions, {len(g.label_ids)} gold")
        for i, (pi, gi, tok, oov) in enumerate(zip(ids, g.label_ids, g.input_ids, g.oov_mask)):
            if tok != SEP:
                yield pi == gi, oov


def morpheme_accuracy(preds, gold):
    """Exact-match accuracy over every morpheme position, separators excluded.

    ``preds`` are Predictions or plain label-id sequences aligned with the
    EncodedSentences in ``gold``. Gold labels unseen in training never match.
    """
    total = correct = 0
    for ok, _ in _aligned(preds, gold):
        total += 1
        correct += ok
    if not total:
        raise EmptyCorpus("no morphemes to evaluate")
    return EvalReport(correct / total, total, correct)


def oov_report(preds, gold, vocab=None):
    """Counts of OOV tokens and errors, and the two ratios of the OOV error table.

    OOV status comes from each gold sentence's ``oov_mask``, which was fixed
    against the training vocabulary at encoding time; ``vocab`` is accepted
    for interface symmetry and not consulted.
    """
    n = n_oov = n_wrong = n_oov_wrong = 0
    for ok, oov in _aligned(preds, gold):
        n += 1
        n_oov += oov
        n_wrong += not ok
        n_oov_wrong += oov and not ok
    return OovReport.from_counts(n_oov, n_oov_wrong, n_wrong, n)


def accuracy_by_oov(preds, gold):
    """Accuracy split by OOV status: ``{"oov": EvalReport|None, "known": EvalReport|None}``."""
    counts = {True: [0, 0], False: [0, 0]}
    for ok, oov in _aligned(preds, gold):
        counts[bool(oov)][0] += 1
        counts[bool(oov)][1] += ok
    out = {}
    for key, flag in (("oov", True), ("known", False)):
        tot, cor = counts[flag]
        out[key] = EvalReport(cor / tot, tot, cor) if tot else None
    return out


def oov_rate(corpus, vocab):
    """Fraction of morpheme tokens missing from the training vocabulary."""
    n = unk = 0
    for s in corpus:
        if hasattr(s, "morphemes"):
            for m in s.morphemes:
                n += 1
                unk += m not in vocab.morpheme_to_id
        else:
            for tok, oov in zip(s.input_ids, s.oov_mask):
                if tok != SEP:
                    n += 1
                    unk += oov
    if not n:
        raise EmptyCorpus("oov_rate of an empty corpus")
    return unk / n


# ---------------------------------------------------------------------------
# plain-text tables


def format_table(headers, rows, title=None):
    cells = [[str(h) for h in headers]] + [[_fmt(c) for c in r] for r in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(headers))]
    line = "+" + "+".join("-" * (w + 2) for w in widths) + "+"
    out = []
    if title:
        out.append(title)
    out.append(line)
    for k, r in enumerate(cells):
        out.append("| " + " | ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths)))
                   + " |")
        if k == 0:
            out.append(line)
    out.append(line)
    return "\n".join(out) + "\n"


def _fmt(c):
    if isinstance(c, float):
        return f"{c:.1f}"
    return str(c)


def pct(x):
    return None if x is None else round(100.0 * x, 1)


def oov_table(reports):
    """OOV error table; ``reports`` maps column names (e.g. "Eval (ID)") to OovReports."""
    names = list(reports)
    rows = [
        ["# OOV Tokens"] + [reports[n].oov_tokens for n in names],
        ["# OOV Tokens Incor."] + [reports[n].oov_incorrect for n in names],
        ["Total Incor."] + [reports[n].total_incorrect for n in names],
        ["Total Tokens"] + [reports[n].total_tokens for n in names],
        ["# OOV Incor. / Total Incor."] + [f"{100 * reports[n].ratio_oov_of_incorrect:.1f}%" for n in names],
        ["# OOV Incor. / Total Tokens"] + [f"{100 * reports[n].ratio_oov_of_total:.1f}%" for n in names],
    ]
    return format_table([""] + names, rows)
