import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from glosskit.errors import EmptyCorpus, LengthMismatch
from glosskit.igt_data import SEP, UNK, EncodedSentence, build_vocab, encode_corpus
from glosskit.metrics import (OovReport, accuracy_by_oov, format_table, morpheme_accuracy, oov_report,
                              oov_table)


def fixture_10():
    """10 morphemes over two sentences: 2 OOV (one wrong), 3 wrong in total."""
    gold = [
        EncodedSentence((5, 6, SEP, UNK, 7), (1, 2, 0, 3, 4), (False, False, False, True, False)),
        EncodedSentence((8, UNK, SEP, 9, 10, 11, 12), (5, 6, 0, 1, 2, 3, 4),
                        (False, True, False, False, False, False, False)),
    ]
    preds = [
        (1, 2, 0, 5, 4),          # OOV position wrong
        (5, 6, 2, 2, 2, 3, 1),    # two known positions wrong; the SEP miss is not counted
    ]
    return preds, gold


def test_fixture_accuracy():
    preds, gold = fixture_10()
    r = morpheme_accuracy(preds, gold)
    assert (r.total_morphemes, r.correct, r.accuracy) == (10, 7, 0.7)


def test_fixture_oov_report():
    preds, gold = fixture_10()
    r = oov_report(preds, gold)
    assert (r.oov_tokens, r.oov_incorrect, r.total_incorrect, r.total_tokens) == (2, 1, 3, 10)
    assert r.ratio_oov_of_incorrect == 1 / 3
    assert r.ratio_oov_of_total == 0.1
    assert f"{100 * r.ratio_oov_of_incorrect:.1f}%" == "33.3%"


def test_fixture_by_oov():
    preds, gold = fixture_10()
    r = accuracy_by_oov(preds, gold)
    assert (r["oov"].correct, r["oov"].total_morphemes) == (1, 2)
    assert (r["known"].correct, r["known"].total_morphemes) == (6, 8)


def test_published_counts():
    r = OovReport.from_counts(oov_tokens=527, oov_incorrect=376, total_incorrect=1910, total_tokens=12388)
    text = oov_table({"Eval (ID)": r})
    assert "19.7%" in text and "3.0%" in text
    assert round(100 * r.ratio_oov_of_incorrect, 1) == 19.7
    assert round(100 * r.ratio_oov_of_total, 1) == 3.0


def test_example_sentence(example_one):
    vocab = build_vocab([example_one])
    (e,) = encode_corpus([example_one], vocab)
    assert morpheme_accuracy([e.label_ids], [e]).accuracy == 1.0
    wrong = list(e.label_ids)
    wrong[0] = wrong[1]
    r = morpheme_accuracy([tuple(wrong)], [e])
    assert (r.correct, r.total_morphemes) == (5, 6)


def test_errors():
    preds, gold = fixture_10()
    with pytest.raises(LengthMismatch):
        morpheme_accuracy(preds[:1], gold)
    with pytest.raises(LengthMismatch):
        morpheme_accuracy([preds[0], preds[1][:-1]], gold)
    with pytest.raises(EmptyCorpus):
        morpheme_accuracy([], [])
    with pytest.raises(EmptyCorpus):
        morpheme_accuracy([(0,)], [EncodedSentence((SEP,), (0,), (False,))])


def test_unseen_gold_never_matches():
    g = [EncodedSentence((5, 6), (-1, 2), (False, False))]
    assert morpheme_accuracy([(-1, 2)], g).accuracy == 1.0  # literal equality
    assert morpheme_accuracy([(0, 2)], g).accuracy == 0.5


@given(st.randoms(use_true_random=False))
@settings(max_examples=30, deadline=None)
def test_sentence_order_does_not_matter(r: random.Random):
    preds, gold = fixture_10()
    pairs = list(zip(preds, gold)) * 3
    r.shuffle(pairs)
    p, g = zip(*pairs)
    assert morpheme_accuracy(list(p), list(g)).accuracy == 0.7
    assert oov_report(list(p), list(g)).ratio_oov_of_incorrect == 1 / 3


def test_from_counts_validation():
    with pytest.raises(ValueError):
        OovReport.from_counts(1, 2, 3, 10)


def test_format_table():
    t = format_table(["a", "b"], [["x", 1.25], ["yy", 3]])
    lines = t.splitlines()
    assert lines[0] == "+----+-----+"
    assert lines[1] == "| a  |   b |"
    assert lines[3] == "| x  | 1.2 |"
