"""Command-line front end: ``glosskit <command> [options]``.

Settings come from an optional JSON config (``--config``), then
``--set key.path=value`` overrides, then the dedicated flags. Exit status is
1 for configuration errors, 2 for data errors and 3 for runtime failures.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from . import experiment as ex
from . import metrics
from .denoiser import DenoiseMode, denoise_predictions
from .errors import ConfigError, DataError, GlosskitError
from .igt_data import ToySpec, Vocabulary, corpus_stats, generate_toy_corpus, write_corpus
from .threads import set_threads, threads_from_env
from .trainer import check_vocab, predict

log = logging.getLogger("glosskit")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")


def _common(p):
    p.add_argument("--config", help="JSON experiment config")
    p.add_argument("--workdir", help="artifact directory (overrides the config)")
    p.add_argument("--seed", type=int, help="seed for splitting, generation and training")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config entry, e.g. pretrain.epochs=5 (repeatable)")
    p.add_argument("--threads", type=int, help="numerical thread count (default: $GLOSSKIT_THREADS)")
    p.add_argument("-v", "--verbose", action="count", default=0)


def _denoise_flag(p, default=None):
    p.add_argument("--denoise", choices=["off", "masked", "unmasked"], default=default,
                   help="repair predictions at OOV positions with the gloss denoiser")


def build_parser():
    parser = _Parser(prog="glosskit", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("toygen", help="generate a synthetic IGT corpus")
    _common(p)
    p.add_argument("--out", help="output JSONL (default: <workdir>/corpus.jsonl)")

    p = sub.add_parser("split", help="genre-based train / eval / test split and vocabulary")
    _common(p)
    p.add_argument("--corpus", help="corpus file (default: generate the toy corpus)")
    p.add_argument("--format", choices=["jsonl", "twoline"])
    p.add_argument("--policy", choices=["sentence", "document"])

    p = sub.add_parser("pretrain", help="masked-LM pretraining on the training split")
    _common(p)

    p = sub.add_parser("finetune", help="fine-tune the pretrained encoder as a gloss classifier")
    _common(p)
    p.add_argument("--weight-decay", type=float)
    p.add_argument("--base", help="pretrained checkpoint (default: <workdir>/mlm.ckpt)")

    p = sub.add_parser("sweep-wd", help="fine-tune once per weight decay, keep the best on eval_ood")
    _common(p)
    p.add_argument("--values", help="comma-separated weight decays")
    p.add_argument("--base")

    for name, helptext in (("predict", "write predicted glosses"),
                           ("evaluate", "morpheme accuracy per split"),
                           ("oov-report", "OOV share of the errors per split")):
        p = sub.add_parser(name, help=helptext)
        _common(p)
        p.add_argument("--model", help="classifier checkpoint (default: <workdir>/classifier.ckpt)")
        p.add_argument("--vocab", help="vocabulary file (default: <workdir>/vocab.json)")
        p.add_argument("--splits", default="eval_id,eval_ood", help="comma-separated split names")
        p.add_argument("--denoiser", help="denoiser checkpoint (default: <workdir>/denoiser.ckpt)")
        _denoise_flag(p, default="off")
        if name == "predict":
            p.add_argument("--out", help="output JSONL (single split only)")

    p = sub.add_parser("denoise", help="train the gloss denoiser and compare both modes")
    _common(p)
    p.add_argument("--model")
    p.add_argument("--denoiser", help="reuse this denoiser instead of training one")

    p = sub.add_parser("pseudo-label", help="iterative pseudo-labeling on the OOD eval pool")
    _common(p)
    p.add_argument("--model")
    p.add_argument("--denoiser")
    p.add_argument("--fraction", type=float)
    p.add_argument("--iterations", type=int)
    _denoise_flag(p)

    p = sub.add_parser("pipeline", help="baseline, weight decay, denoising and pseudo-labeling end to end")
    _common(p)
    p.add_argument("--corpus")
    p.add_argument("--format", choices=["jsonl", "twoline"])
    _denoise_flag(p)
    return parser


def load_config(args):
    d = {}
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                d = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
    d = ex.apply_overrides(d, args.set)
    for flag, key in (("workdir", "workdir"), ("seed", "seed"), ("corpus", "corpus"), ("format", "corpus_format"),
                      ("denoise", "denoise")):
        v = getattr(args, flag, None)
        if v is not None:
            d[key] = v
    if getattr(args, "policy", None):
        d.setdefault("split", {})["policy"] = args.policy
    if getattr(args, "fraction", None) is not None:
        d.setdefault("pseudo_label", {})["fraction"] = args.fraction
    if getattr(args, "iterations", None) is not None:
        d.setdefault("pseudo_label", {})["max_iterations"] = args.iterations
    if getattr(args, "values", None):
        try:
            d["weight_decays"] = [float(x) for x in args.values.split(",") if x.strip()]
        except ValueError:
            raise ConfigError(f"--values must be comma-separated numbers, got {args.values!r}") from None
    if getattr(args, "weight_decay", None) is not None:
        d.setdefault("finetune", {})["weight_decay"] = args.weight_decay
    cfg = ex.ExperimentConfig.from_dict(d)
    cfg.validate()
    return cfg


# ---------------------------------------------------------------------------
# commands


def _show(path):
    with open(path, encoding="utf-8") as fh:
        print(fh.read(), end="")


def cmd_toygen(cfg, wd, args):
    out = args.out or wd.path("corpus.jsonl")
    corpus = generate_toy_corpus(ToySpec.from_dict(cfg.toy), cfg.seed)
    write_corpus(out, corpus)
    wd.report("toygen", {"path": os.path.relpath(out, wd.root), **corpus_stats(corpus)})
    return [out]


def cmd_split(cfg, wd, args):
    splits, vocab = ex.make_splits(cfg, wd)
    rep = {n: len(getattr(splits, n)) for n in ex.SPLIT_NAMES}
    rep["vocab"] = {"morphemes": vocab.input_size, "glosses": vocab.label_size}
    wd.report("split", rep)
    return [wd.split_path(n) for n in ex.SPLIT_NAMES] + [wd.path("vocab.json")]


def cmd_pretrain(cfg, wd, args):
    vocab = ex.read_vocab(wd)
    data = ex.encoded(wd, vocab, ("train",) + ex.EVAL_SPLITS)
    model = ex.run_pretrain(cfg, wd, vocab, data.pop("train"))
    wd.report("perplexity", ex.perplexity_report(cfg, model, data))
    return [wd.path("mlm.ckpt")]


def cmd_finetune(cfg, wd, args):
    vocab = ex.read_vocab(wd)
    base = ex.read_model(args.base or wd.path("mlm.ckpt"))
    data = ex.encoded(wd, vocab, ("train",) + ex.EVAL_SPLITS)
    model = ex.run_finetune(cfg, wd, vocab, base, data.pop("train"), cfg.finetune.weight_decay)
    wd.report("finetune", {n: metrics.morpheme_accuracy(predict(model, d), d).to_dict() for n, d in data.items()})
    return [wd.path("classifier.ckpt")]


def cmd_sweep(cfg, wd, args):
    vocab = ex.read_vocab(wd)
    base = ex.read_model(args.base or wd.path("mlm.ckpt"))
    data = ex.encoded(wd, vocab, ("train",) + ex.EVAL_SPLITS)
    ex.run_sweep(cfg, wd, vocab, base, data.pop("train"), data)
    _show(wd.path("reports", "sweep.txt"))
    return [wd.path("classifier.ckpt"), wd.path("reports", "sweep.json")]


def _load_eval(cfg, wd, args):
    vocab = Vocabulary.load(args.vocab) if args.vocab else ex.read_vocab(wd)
    model = ex.read_model(args.model or wd.path("classifier.ckpt"))
    check_vocab(model, vocab)
    names = [n.strip() for n in args.splits.split(",") if n.strip()]
    for n in names:
        if n not in ex.SPLIT_NAMES:
            raise ConfigError(f"unknown split {n!r}")
    data = ex.encoded(wd, vocab, names)
    den = None
    if args.denoise != "off":
        den = ex.read_model(args.denoiser or wd.path("denoiser.ckpt"))
    return vocab, model, data, ex.make_predictor(args.denoise, den)


def cmd_predict(cfg, wd, args):
    vocab, model, data, predictor = _load_eval(cfg, wd, args)
    if args.out and len(data) != 1:
        raise ConfigError("--out needs exactly one split")
    paths = []
    for n, d in data.items():
        out = args.out or wd.path("reports", f"predictions-{n}.jsonl")
        with open(out, "w", encoding="utf-8", newline="\n") as fh:
            for rec in ex.predictions_to_records(predictor(model, d), vocab):
                fh.write(json.dumps(rec, ensure_ascii=False) + "\n")
        paths.append(out)
    return paths


def cmd_evaluate(cfg, wd, args):
    vocab, model, data, predictor = _load_eval(cfg, wd, args)
    rep = {}
    for n, d in data.items():
        preds = predictor(model, d)
        by = metrics.accuracy_by_oov(preds, d)
        rep[n] = {"overall": metrics.morpheme_accuracy(preds, d).to_dict(),
                  **{k: (None if r is None else r.to_dict()) for k, r in by.items()}}
    rows = [[n, 100 * rep[n]["overall"]["accuracy"], rep[n]["overall"]["total_morphemes"]] for n in rep]
    text = metrics.format_table(["split", "accuracy (%)", "morphemes"], rows)
    wd.report(f"evaluate-{args.denoise}", rep, text)
    print(text, end="")
    return [wd.path("reports", f"evaluate-{args.denoise}.json")]


def cmd_oov_report(cfg, wd, args):
    vocab, model, data, predictor = _load_eval(cfg, wd, args)
    reps = {n: metrics.oov_report(predictor(model, d), d) for n, d in data.items()}
    text = metrics.oov_table(reps)
    wd.report("oov", {n: r.to_dict() for n, r in reps.items()}, text)
    print(text, end="")
    return [wd.path("reports", "oov.json")]


def cmd_denoise(cfg, wd, args):
    vocab = ex.read_vocab(wd)
    model = ex.read_model(args.model or wd.path("classifier.ckpt"))
    check_vocab(model, vocab)
    data = ex.encoded(wd, vocab, ("train",) + ex.EVAL_SPLITS)
    train = data.pop("train")
    if args.denoiser:
        den = ex.read_model(args.denoiser)
    else:
        den = ex.run_denoiser_training(cfg, wd, vocab, train)
    rep, rows = {}, []
    for n, d in data.items():
        preds = predict(model, d)
        rep[n] = {"classifier": metrics.morpheme_accuracy(preds, d).accuracy}
        for mode in DenoiseMode:
            after = denoise_predictions(preds, mode, den)
            rep[n][mode.value] = metrics.morpheme_accuracy(after, d).accuracy
    for key in ("classifier",) + tuple(m.value for m in DenoiseMode):
        rows.append([key] + [100 * rep[n][key] for n in data])
    text = metrics.format_table(["predictions"] + list(data), rows)
    wd.report("denoise", rep, text)
    print(text, end="")
    return [wd.path("denoiser.ckpt"), wd.path("reports", "denoise.json")]


def cmd_pseudo_label(cfg, wd, args):
    vocab = ex.read_vocab(wd)
    model = ex.read_model(args.model or wd.path("classifier.ckpt"))
    check_vocab(model, vocab)
    data = ex.encoded(wd, vocab, ("train",) + ex.EVAL_SPLITS)
    train = data.pop("train")
    den = None
    if cfg.denoise != "off":
        den = ex.read_model(args.denoiser or wd.path("denoiser.ckpt"))
    base_path = wd.path("mlm.ckpt")
    base = ex.read_model(base_path) if os.path.exists(base_path) else None
    run = ex.run_pseudo_label(cfg, wd, model, train, data, ex.make_predictor(cfg.denoise, den), base)
    for rec in run.records:
        print(json.dumps(rec, sort_keys=True))
    return [wd.path("pseudo.ckpt"), wd.path("reports", "pseudo_label.jsonl")]


def cmd_pipeline(cfg, wd, args):
    ex.run_pipeline(cfg, wd)
    _show(wd.path("reports", "pipeline.txt"))
    return None  # run_pipeline records its own manifest entry


COMMANDS = {
    "toygen": cmd_toygen, "split": cmd_split, "pretrain": cmd_pretrain, "finetune": cmd_finetune,
    "sweep-wd": cmd_sweep, "predict": cmd_predict, "evaluate": cmd_evaluate, "oov-report": cmd_oov_report,
    "denoise": cmd_denoise, "pseudo-label": cmd_pseudo_label, "pipeline": cmd_pipeline,
}


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                            format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
        if args.threads is not None:
            set_threads(args.threads)
        else:
            threads_from_env()
        cfg = load_config(args)
        wd = ex.Workdir(cfg.workdir)
        artifacts = COMMANDS[args.command](cfg, wd, args)
        if artifacts is not None:
            wd.record(args.command, cfg, artifacts)
        return 0
    except ConfigError as exc:
        print(f"glosskit: configuration error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"glosskit: data error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except GlosskitError as exc:
        print(f"glosskit: runtime error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"glosskit: data error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
