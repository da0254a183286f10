import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from glosskit.encoder import EncoderConfig, init_params
from glosskit.errors import ConfigError, EmptyCorpus
from glosskit.igt_data import SEP, EncodedSentence
from glosskit.pseudo_label import (PseudoLabelConfig, RankedPrediction, as_training_examples,
                                   n_selected, pseudo_label_iteration, rank, run_iterations,
                                   select_top_fraction, sentence_confidence)
from glosskit.trainer import Prediction, TrainConfig


def pred(probs, inputs=None):
    probs = np.asarray(probs, dtype=float)
    n = len(probs)
    return Prediction(probs, tuple(int(i) for i in probs.argmax(-1)), inputs or (5,) * n, (False,) * n)


def ranked(confs):
    return [RankedPrediction(i, c, (1,), None) for i, c in enumerate(confs)]


class TestConfidence:
    def test_uniform(self):
        v = 7
        assert abs(sentence_confidence(pred(np.full((4, v), 1 / v))) - 1 / v) < 1e-15

    def test_one_hot(self):
        assert sentence_confidence(pred(np.eye(3))) == 1.0

    def test_mixed(self):
        p = pred([[0.9, 0.1], [0.5, 0.5], [0.3, 0.7]])
        assert abs(sentence_confidence(p) - 0.7) < 1e-15

    def test_exclude_sep(self):
        p = pred([[0.9, 0.1], [1.0, 0.0], [0.3, 0.7]], inputs=(5, SEP, 6))
        assert abs(sentence_confidence(p, exclude_sep=True) - 0.8) < 1e-15
        assert abs(sentence_confidence(p) - (0.9 + 1.0 + 0.7) / 3) < 1e-15


class TestSelection:
    def test_quarter_of_eight(self):
        assert n_selected(8, 0.25) == 2
        sel = select_top_fraction(ranked([0.1, 0.9, 0.3, 0.8, 0.2, 0.5, 0.4, 0.6]), 0.25)
        assert [r.index for r in sel] == [1, 3]

    def test_ceiling(self):
        assert [n_selected(n, 0.25) for n in (1, 3, 4, 5, 9)] == [1, 1, 1, 2, 3]
        assert n_selected(9, 1 / 3) == 3

    def test_stable_ties(self):
        sel = select_top_fraction(ranked([0.5, 0.9, 0.5, 0.5, 0.5, 0.1, 0.5, 0.5]), 0.5)
        assert [r.index for r in sel] == [0, 1, 2, 3]

    def test_empty(self):
        with pytest.raises(EmptyCorpus):
            select_top_fraction([], 0.25)

    def test_pseudo_labels_are_predictions(self):
        p = pred([[0.2, 0.8], [0.6, 0.4]], inputs=(7, 8))
        (ex,) = as_training_examples(rank([p]))
        assert ex.input_ids == (7, 8) and ex.label_ids == (1, 0)


@given(st.lists(st.floats(0, 1), min_size=1, max_size=60), st.floats(0.01, 1))
@settings(max_examples=60, deadline=None)
def test_selection_properties(confs, f):
    sel = select_top_fraction(ranked(confs), f)
    assert len(sel) == n_selected(len(confs), f)
    chosen = {r.index for r in sel}
    worst_in = min(confs[i] for i in chosen)
    assert all(confs[i] <= worst_in for i in range(len(confs)) if i not in chosen)
    assert [r.index for r in sel] == sorted(chosen)


class TestConfig:
    @pytest.mark.parametrize("kw", [{"fraction": 0}, {"fraction": 1.5}, {"max_iterations": 0}])
    def test_invalid(self, kw):
        with pytest.raises(ConfigError):
            PseudoLabelConfig(**kw)

    def test_round_trip(self):
        c = PseudoLabelConfig(fraction=0.5, retrain=TrainConfig(epochs=3))
        assert PseudoLabelConfig.from_dict(c.to_dict()) == c


class TestEarlyStop:
    def _scripted(self, seq, cfg=PseudoLabelConfig()):
        accs = iter(seq)
        calls = []

        def evaluate(model):
            return {"eval_id": 0.0, "eval_ood": next(accs)}

        def step(model, it):
            calls.append(it)
            return f"model-{it}", 10 * it, 0.9

        return run_iterations("model-0", None, None, cfg, evaluate, step=step), calls

    def test_stops_after_first_drop(self):
        run, calls = self._scripted([75.3, 76.3, 76.9, 76.8])
        assert run.model == "model-2" and run.best_iteration == 2
        assert calls == [1, 2, 3]
        assert [r["acc_eval_ood"] for r in run.records] == [75.3, 76.3, 76.9, 76.8]
        assert [r["selected_count"] for r in run.records] == [0, 10, 20, 30]

    def test_deterministic(self):
        a, _ = self._scripted([75.3, 76.3, 76.9, 76.8])
        b, _ = self._scripted([75.3, 76.3, 76.9, 76.8])
        assert a.records == b.records and a.model == b.model

    def test_immediate_drop_keeps_start(self):
        run, _ = self._scripted([75.3, 75.0])
        assert run.model == "model-0" and run.best_iteration == 0

    def test_single_iteration(self):
        run, calls = self._scripted([75.3, 76.3], PseudoLabelConfig(max_iterations=1))
        assert calls == [1] and run.model == "model-1"

    def test_plateau_continues(self):
        run, calls = self._scripted([75.0, 75.0, 75.0, 75.0])
        assert calls == [1, 2, 3] and run.best_iteration == 3


def test_one_real_round():
    cfg = EncoderConfig(input_vocab_size=16, label_vocab_size=6, n_layers=1, hidden=16, n_heads=2,
                        ffn_dim=32, max_positions=32)
    rng = np.random.default_rng(0)
    train = [EncodedSentence(tuple(int(x) for x in ids), tuple(1 + int(x) % 5 for x in ids), (False,) * len(ids))
             for ids in (rng.integers(4, 16, size=5) for _ in range(12))]
    pool = [EncodedSentence(e.input_ids, (0,) * len(e.input_ids), e.oov_mask) for e in train[:8]]
    pl = PseudoLabelConfig(fraction=0.25, retrain=TrainConfig(epochs=1))
    r = pseudo_label_iteration(init_params(cfg), train, pool, pl)
    assert len(r.selected) == 2
    assert 0 < r.mean_confidence <= 1
    assert r.model.config == cfg
    with pytest.raises(EmptyCorpus):
        pseudo_label_iteration(init_params(cfg), train, [], pl)
    with pytest.raises(ConfigError):
        pseudo_label_iteration(init_params(cfg), train, pool,
                               PseudoLabelConfig(continue_training=False, retrain=TrainConfig(epochs=1)))
