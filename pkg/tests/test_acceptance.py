"""End-to-end acceptance checks, one test per criterion (6 has four parts).

Each test records a one-line verdict that is printed in the terminal summary.
Criterion 6 runs the toy pipeline for five seeds in subprocesses and takes
roughly twenty minutes on one CPU core; criterion 8 reruns seed 0 once more.
"""

import glob
import json
import math
import os
import resource
import subprocess
import sys
import time

import numpy as np
import pytest

from glosskit import autodiff as ad
from glosskit.denoiser import input_size, labels_to_inputs
from glosskit.encoder import EncoderConfig, classify_logits, forward, init_params, mlm_logits, pad_batch
from glosskit.igt_data import (PAD, SEP, UNK, EncodedSentence, ToySpec, build_vocab, encode_corpus,
                               generate_toy_corpus)
from glosskit.metrics import OovReport, morpheme_accuracy, oov_report, oov_table
from glosskit.pseudo_label import PseudoLabelConfig, run_iterations
from glosskit.trainer import (IGNORE_INDEX, MaskingPolicy, OptimizerState, TrainConfig, adamw_step,
                              apply_dynamic_masking, perplexity, pretrain_mlm)

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
TOY_CONFIG = os.path.join(ROOT, "configs", "toy.json")
SEEDS = (0, 1, 2, 3, 4)
VERDICTS = {}


def verdict(key, ok, detail):
    line = f"criterion {key}: {'PASS' if ok else 'FAIL'} ({detail})"
    VERDICTS[key] = line
    print(line)
    return ok


# ---------------------------------------------------------------------------
# 1. numerical core


def _perturbed(cfg, std):
    m = init_params(cfg, seed=1, dtype=np.float64)
    rng = np.random.default_rng(7)
    for p in m.params.values():
        p.data += rng.normal(0, std, p.shape)
    return m


def _encoder_loss(m, seqs):
    ids, mask = pad_batch(seqs)
    lab = np.where(mask, np.random.default_rng(0).integers(0, m.config.label_vocab_size, ids.shape), IGNORE_INDEX)
    tgt = np.where(mask, ids, IGNORE_INDEX)

    def f():
        h = forward(m, ids, mask)
        return ad.add(ad.cross_entropy(classify_logits(m, h), lab), ad.cross_entropy(mlm_logits(m, h), tgt))
    return f


def test_criterion_1_gradient_check():
    t0 = time.perf_counter()
    batch = [[4, 5, SEP, 6, 7, 1, 9], [8, SEP, 9, 10]]
    # every coordinate of a narrow encoder with all components present
    narrow = _perturbed(EncoderConfig(12, 5, n_layers=2, hidden=8, n_heads=2, ffn_dim=16, max_positions=8,
                                      dropout=0.0), std=0.5)
    err_all = ad.finite_diff_check(_encoder_loss(narrow, batch), list(narrow.params.values()), eps=1e-5)
    # default width and depth, a random sample of coordinates from every tensor
    full = _perturbed(EncoderConfig(30, 7, max_positions=16, dropout=0.0), std=0.1)
    err_full = ad.finite_diff_check(_encoder_loss(full, batch), list(full.params.values()), eps=1e-5,
                                    max_coords=8)
    secs = time.perf_counter() - t0
    ok = err_all < 1e-3 and err_full < 1e-3 and secs < 60
    assert verdict("1", ok, f"max rel err {err_all:.1e} over all {narrow.n_params()} coords, "
                            f"{err_full:.1e} sampled at default size, {secs:.1f}s")


# ---------------------------------------------------------------------------
# 2. AdamW

ADAM_TRACE = (0.90000000199999996000, 0.88085019894177505541, 0.85545368061636825254)


def test_criterion_2_adamw():
    p, st = {"w": ad.Tensor(np.ones((1, 1)))}, OptimizerState()
    cfg = TrainConfig(learning_rate=0.1)
    worst = 0.0
    for g, want in zip((0.5, -0.3, 0.1), ADAM_TRACE):
        adamw_step(p, {"w": np.full((1, 1), g)}, st, cfg)
        worst = max(worst, abs(p["w"].data[0, 0] - want))
    exact = True
    for lr, lam in ((0.1, 0.01), (0.05, 0.5), (0.01, 1.0)):
        q, st = {"w": ad.Tensor(np.full((3, 3), 2.5))}, OptimizerState()
        theta = 2.5
        for _ in range(25):
            adamw_step(q, {"w": np.zeros((3, 3))}, st, TrainConfig(learning_rate=lr, weight_decay=lam))
            theta *= 1 - lr * lam
            exact &= bool(np.all(q["w"].data == theta))
    assert verdict("2", worst < 1e-10 and exact, f"trace error {worst:.1e}, decay closed form exact: {exact}")


# ---------------------------------------------------------------------------
# 3. masking statistics


def test_criterion_3_masking():
    corpus = generate_toy_corpus(ToySpec(n_sentences=3000), seed=0)
    vocab = build_vocab(corpus)
    ids, _ = pad_batch([e.input_ids for e in encode_corpus(corpus, vocab)])
    v = vocab.input_size
    out, tg = apply_dynamic_masking(ids, MaskingPolicy(), np.random.default_rng(0), v)
    n = int(((ids != PAD) & (ids != SEP)).sum())
    sel = tg != IGNORE_INDEX
    k = int(sel.sum())
    ok = n >= 10_000 and abs(k - 0.15 * n) <= 3 * math.sqrt(n * 0.15 * 0.85)
    ok &= not np.any(sel & ((ids == PAD) | (ids == SEP)))
    n_mask = int((out[sel] == 2).sum())
    n_same = int((out[sel] == ids[sel]).sum())
    # a random replacement may redraw the original id
    p_same = 0.1 + 0.1 / (v - 4)
    parts = ((n_mask, 0.8), (n_same, p_same), (k - n_mask - n_same, 0.2 - p_same))
    ok &= all(abs(c - k * p) <= 3 * math.sqrt(k * p * (1 - p)) for c, p in parts)
    assert verdict("3", ok, f"{k}/{n} selected ({100 * k / n:.2f}%), "
                            f"mask/keep/random {n_mask}/{n_same}/{k - n_mask - n_same}")


# ---------------------------------------------------------------------------
# 4. metric oracle


def test_criterion_4_metrics():
    gold = [
        EncodedSentence((5, 6, SEP, UNK, 7), (1, 2, 0, 3, 4), (False, False, False, True, False)),
        EncodedSentence((8, UNK, SEP, 9, 10, 11, 12), (5, 6, 0, 1, 2, 3, 4),
                        (False, True, False, False, False, False, False)),
    ]
    preds = [(1, 2, 0, 5, 4), (5, 6, 2, 2, 2, 3, 1)]
    acc = morpheme_accuracy(preds, gold)
    r = oov_report(preds, gold)
    ok = (acc.correct, acc.total_morphemes) == (7, 10)
    ok &= (r.oov_tokens, r.oov_incorrect, r.total_incorrect, r.total_tokens) == (2, 1, 3, 10)
    ok &= r.ratio_oov_of_incorrect == 1 / 3 and r.ratio_oov_of_total == 1 / 10
    pub = OovReport.from_counts(527, 376, 1910, 12388)
    text = oov_table({"Eval (ID)": pub})
    ok &= "19.7%" in text and "3.0%" in text
    assert verdict("4", ok, f"fixture 7/10, 1/3, 1/10; published counts give "
                            f"{100 * pub.ratio_oov_of_incorrect:.1f}% and {100 * pub.ratio_oov_of_total:.1f}%")


# ---------------------------------------------------------------------------
# 5. perplexity


def test_criterion_5_perplexity():
    corpus = generate_toy_corpus(ToySpec(n_sentences=400), seed=1)
    vocab = build_vocab(corpus)
    enc = encode_corpus(corpus, vocab)
    n_gloss = input_size(vocab.label_size)
    den = init_params(EncoderConfig(n_gloss, n_layers=1, hidden=16, n_heads=2, max_positions=64))
    den.params["mlm.w"].data[:] = 0
    den.params["mlm.b"].data[:] = 0
    ppl_uniform = perplexity(den, [labels_to_inputs(e.label_ids) for e in enc])
    sent = list(enc[0].input_ids)
    small = EncoderConfig(vocab.input_size, n_layers=1, hidden=32, n_heads=2, max_positions=64, dropout=0.0)
    mem = pretrain_mlm([sent] * 64, TrainConfig(learning_rate=3e-3, epochs=40, batch_size=16, grad_accum_steps=1),
                       MaskingPolicy(), small)
    ppl_mem = perplexity(mem, [sent] * 64)
    ok = abs(ppl_uniform - n_gloss) / n_gloss < 0.005 and ppl_mem < 1.2
    assert verdict("5", ok, f"uniform {ppl_uniform:.3f} vs vocabulary {n_gloss}, memorized {ppl_mem:.3f}")


# ---------------------------------------------------------------------------
# 6. pipeline ordering on the toy corpus, five seeds


def _run_pipeline(workdir, seed):
    env = {**os.environ, "GLOSSKIT_THREADS": "1"}
    cmd = [sys.executable, "-m", "glosskit", "pipeline", "--config", TOY_CONFIG, "--seed", str(seed),
           "--workdir", workdir, "--threads", "1"]
    proc = subprocess.run(cmd, capture_output=True, text=True, env=env, cwd=ROOT)
    assert proc.returncode == 0, proc.stderr
    with open(os.path.join(workdir, "reports", "pipeline.json"), encoding="utf-8") as fh:
        return json.load(fh)


@pytest.fixture(scope="module")
def toy_runs(tmp_path_factory):
    root = tmp_path_factory.mktemp("acceptance")
    before = resource.getrusage(resource.RUSAGE_CHILDREN)
    t0 = time.perf_counter()
    reports = {s: _run_pipeline(str(root / f"seed{s}"), s) for s in SEEDS}
    after = resource.getrusage(resource.RUSAGE_CHILDREN)
    cpu = (after.ru_utime - before.ru_utime) + (after.ru_stime - before.ru_stime)
    return {"root": root, "reports": reports, "cpu": cpu, "wall": time.perf_counter() - t0}


def _stage(rep, name):
    return next(r for r in rep["stages"] if r["stage"] == name)


@pytest.mark.slow
def test_criterion_6_runtime(toy_runs):
    cpu, wall = toy_runs["cpu"], toy_runs["wall"]
    assert verdict("6 runtime", cpu < 1800, f"{len(SEEDS)} seeds in {cpu / 60:.1f} min CPU, {wall / 60:.1f} min wall")


@pytest.mark.slow
def test_criterion_6a_beats_lexicon_baselines(toy_runs):
    rows = []
    beat_random = beat_mf = 0
    for s, rep in toy_runs["reports"].items():
        nn = _stage(rep, "baseline")["test_ood"]
        lex = rep["lexicon_baselines_test"]
        beat_random += nn > lex["random"]
        beat_mf += nn > lex["most_frequent"]
        rows.append(f"{100 * nn:.1f}/{100 * lex['most_frequent']:.1f}/{100 * lex['random']:.1f}")
    ok = beat_random == len(SEEDS) and beat_mf >= 4
    assert verdict("6a", ok, f"test-OOD nn/mf/random per seed: {', '.join(rows)}")


@pytest.mark.slow
def test_criterion_6b_unmasked_denoising(toy_runs):
    intact, improved, rows = True, 0, []
    for s, rep in toy_runs["reports"].items():
        d = rep["denoise"]
        assert d["mode"] == "unmasked"
        for split in ("eval_id", "eval_ood"):
            e = d[split]
            intact &= e["changed_known_positions"] == 0 and e["after"]["known"] == e["before"]["known"]
        e = d["eval_ood"]
        improved += e["after"]["oov"] > e["before"]["oov"]
        rows.append(f"{100 * e['before']['oov']:.1f}->{100 * e['after']['oov']:.1f}")
    ok = intact and improved >= 4
    assert verdict("6b", ok, f"known positions unchanged: {intact}; OOV accuracy per seed: {', '.join(rows)}")


@pytest.mark.slow
def test_criterion_6c_one_pseudo_label_round(toy_runs):
    improved, rows = 0, []
    for s, rep in toy_runs["reports"].items():
        recs = rep["pseudo_label"]["records"]
        assert recs[1]["iteration"] == 1
        a0, a1 = recs[0]["acc_eval_ood"], recs[1]["acc_eval_ood"]
        improved += a1 > a0
        rows.append(f"{100 * a0:.2f}->{100 * a1:.2f}")
    assert verdict("6c", improved >= 4, f"eval-OOD after one round per seed: {', '.join(rows)}")


@pytest.mark.slow
def test_criterion_6d_staged_report_monotone(toy_runs):
    mono, rows = 0, []
    for s, rep in toy_runs["reports"].items():
        accs = [r["test_ood"] for r in rep["stages"]]
        assert [r["stage"] for r in rep["stages"]] == ["baseline", "weight decay", "denoised", "pseudo-labeled"]
        mono += all(b >= a for a, b in zip(accs, accs[1:]))
        rows.append("/".join(f"{100 * a:.1f}" for a in accs))
    assert verdict("6d", mono >= 3, f"{mono}/{len(SEEDS)} monotone; test-OOD by stage: {', '.join(rows)}")


# ---------------------------------------------------------------------------
# 7. early stopping


def test_criterion_7_early_stop():
    def run():
        seq = iter([75.3, 76.3, 76.9, 76.8])

        def step(model, it):
            return f"model-{it}", 1, 1.0
        return run_iterations("model-0", None, None, PseudoLabelConfig(max_iterations=3),
                              lambda m: {"eval_ood": next(seq)}, step=step)
    a, b = run(), run()
    ok = a.model == "model-2" and a.best_iteration == 2 and a.records == b.records and b.model == a.model
    assert verdict("7", ok, f"returned {a.model} after {len(a.records) - 1} rounds")


# ---------------------------------------------------------------------------
# 8. determinism


def _report_bytes(workdir):
    out = {}
    for path in sorted(glob.glob(os.path.join(workdir, "reports", "*"))):
        with open(path, "rb") as fh:
            out[os.path.basename(path)] = fh.read()
    return out


@pytest.mark.slow
def test_criterion_8_determinism(toy_runs):
    first = str(toy_runs["root"] / "seed0")
    second = str(toy_runs["root"] / "seed0-again")
    _run_pipeline(second, 0)
    a, b = _report_bytes(first), _report_bytes(second)
    same = sorted(k for k in a if a.get(k) == b.get(k))
    ok = bool(a) and a == b
    assert verdict("8", ok, f"{len(same)}/{len(a)} report files byte-identical: {', '.join(same)}")
