"""Experiment configuration, work-directory artifacts and the staged pipeline.

Every stage reads its inputs from and writes its outputs to one work
directory, so the command-line front end can run stages one at a time or
all at once. Metric reports hold no timings and are byte-identical across
reruns with the same configuration, seed and thread count.

Work-directory layout::

    corpus.jsonl              generated or copied corpus
    splits/<name>.jsonl       train, eval_id, eval_ood, test_ood
    vocab.json
    mlm.ckpt                  pretrained encoder
    classifier.ckpt           fine-tuned classifier (best weight decay after a sweep)
    sweep/wd-<value>.ckpt
    denoiser.ckpt
    pseudo.ckpt               classifier after pseudo-labeling
    reports/*.json, *.txt     metric reports
    logs/*.jsonl              per-epoch training records (with wall time)
    manifest.json             config hash, seed and build per command
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import subprocess
from dataclasses import asdict, dataclass, field, fields, replace

from . import baselines, metrics
from .denoiser import DENOISER_TRAIN, DenoiseMode, denoise_predictions, train_denoiser
from .encoder import EncoderConfig, load_checkpoint, save_checkpoint
from .errors import ConfigError, DataError
from .igt_data import (
    ToySpec,
    Vocabulary,
    build_vocab,
    decode_labels,
    encode_corpus,
    generate_toy_corpus,
    read_corpus,
    split_by_genre,
    write_corpus,
)
from .pseudo_label import PseudoLabelConfig, run_iterations
from .trainer import (
    TABLE_WEIGHT_DECAYS,
    MaskingPolicy,
    TrainConfig,
    finetune_classifier,
    perplexity,
    predict,
    pretrain_mlm,
)

log = logging.getLogger(__name__)

SPLIT_NAMES = ("train", "eval_id", "eval_ood", "test_ood")
EVAL_SPLITS = ("eval_id", "eval_ood")
ARCH_FIELDS = ("n_layers", "hidden", "n_heads", "ffn_dim", "max_positions", "dropout")


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class SplitConfig:
    id_genres: tuple = ("Story", "History")
    ood_genres: tuple = ("Personal", "Advice")
    ratios: tuple = (0.7, 0.5)
    policy: str = "sentence"

    def __post_init__(self):
        for name in ("id_genres", "ood_genres", "ratios"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if self.policy not in ("sentence", "document"):
            raise ConfigError(f"unknown split policy {self.policy!r}")
        if len(self.ratios) != 2:
            raise ConfigError("split ratios are (train fraction, OOD eval fraction)")


def _build(cls, d, what):
    if d is None:
        return cls()
    if isinstance(d, cls):
        return d
    if not isinstance(d, dict):
        raise ConfigError(f"{what} must be an object")
    known = {f.name for f in fields(cls)}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown {what} keys: {sorted(unknown)}")
    try:
        return cls(**d)
    except TypeError as exc:
        raise ConfigError(f"bad {what}: {exc}") from None


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a run depends on; JSON-serializable through ``to_dict``.

    ``corpus`` names a JSONL or two-line corpus file; when it is empty a toy
    corpus is generated from ``toy``. ``seed`` overrides the seed of every
    training stage and of the split and toy generator.
    """

    workdir: str = "run"
    corpus: str | None = None
    corpus_format: str = "jsonl"
    toy: dict = field(default_factory=dict)
    split: SplitConfig = field(default_factory=SplitConfig)
    encoder: dict = field(default_factory=dict)
    masking: MaskingPolicy = field(default_factory=MaskingPolicy)
    pretrain: TrainConfig = field(default_factory=TrainConfig)
    finetune: TrainConfig = field(default_factory=TrainConfig)
    weight_decays: tuple = TABLE_WEIGHT_DECAYS
    denoiser: TrainConfig = DENOISER_TRAIN
    denoise: str = "unmasked"
    pseudo_label: PseudoLabelConfig = field(default_factory=PseudoLabelConfig)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "weight_decays", tuple(float(x) for x in self.weight_decays))
        if self.denoise != "off":
            try:
                DenoiseMode(self.denoise)
            except ValueError:
                raise ConfigError(f"denoise must be off, masked or unmasked, not {self.denoise!r}") from None
        unknown = set(self.encoder) - set(ARCH_FIELDS)
        if unknown:
            raise ConfigError(f"unknown encoder keys: {sorted(unknown)}")
        if self.corpus_format not in ("jsonl", "twoline"):
            raise ConfigError(f"unknown corpus format {self.corpus_format!r}")
        if self.toy:
            ToySpec.from_dict(self.toy)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        for key, sub in (("split", SplitConfig), ("masking", MaskingPolicy), ("pretrain", TrainConfig),
                         ("finetune", TrainConfig), ("denoiser", TrainConfig)):
            if key in d:
                d[key] = _build(sub, d[key], key)
        if "pseudo_label" in d:
            pl = dict(d["pseudo_label"])
            pl["retrain"] = _build(TrainConfig, pl.get("retrain"), "pseudo_label.retrain")
            d["pseudo_label"] = _build(PseudoLabelConfig, pl, "pseudo_label")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def load(cls, path):
        try:
            with open(path, encoding="utf-8") as fh:
                return cls.from_dict(json.load(fh))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None

    def to_dict(self):
        d = asdict(self)
        d["pseudo_label"] = self.pseudo_label.to_dict()
        return json.loads(json.dumps(d))

    def digest(self):
        """Hash of the settings that affect results (the work directory does not)."""
        d = self.to_dict()
        d.pop("workdir")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]

    def replace(self, **kw):
        return replace(self, **kw)

    def validate(self):
        if self.corpus and not os.path.exists(self.corpus):
            raise ConfigError(f"corpus file {self.corpus} does not exist")

    # per-stage settings with the experiment seed applied
    def stage(self, name):
        cfg = getattr(self, name)
        if name == "pseudo_label":
            return replace(cfg, retrain=cfg.retrain.replace(seed=self.seed))
        return cfg.replace(seed=self.seed)

    def encoder_config(self, input_vocab_size, label_vocab_size=0):
        return EncoderConfig(input_vocab_size, label_vocab_size, **self.encoder)


def apply_overrides(d, assignments):
    """Apply ``dotted.key=json_value`` strings to a nested config dict."""
    d = json.loads(json.dumps(d))
    for item in assignments:
        key, sep, raw = item.partition("=")
        if not sep:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = d
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {key!r} descends into a non-object")
        node[parts[-1]] = value
    return d


# ---------------------------------------------------------------------------
# work directory


def git_describe():
    here = os.path.dirname(os.path.abspath(__file__))
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"], cwd=here,
                             capture_output=True, text=True, timeout=10)
    except (OSError, subprocess.SubprocessError):
        return "unknown"
    return out.stdout.strip() or "unknown"


def _dump(obj, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, ensure_ascii=False, indent=1, sort_keys=True)
        fh.write("\n")


class Workdir:
    def __init__(self, root):
        self.root = root
        for sub in ("", "splits", "sweep", "reports", "logs"):
            os.makedirs(os.path.join(root, sub), exist_ok=True)

    def path(self, *parts):
        return os.path.join(self.root, *parts)

    def split_path(self, name):
        return self.path("splits", f"{name}.jsonl")

    def report(self, name, obj, text=None):
        _dump(obj, self.path("reports", f"{name}.json"))
        if text is not None:
            with open(self.path("reports", f"{name}.txt"), "w", encoding="utf-8", newline="\n") as fh:
                fh.write(text)

    def logger(self, name):
        """Per-epoch training records; wall times make these files non-reproducible."""
        path = self.path("logs", f"{name}.jsonl")
        open(path, "w").close()

        def write(rec):
            with open(path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(rec) + "\n")
        return write

    def record(self, command, cfg, artifacts):
        path = self.path("manifest.json")
        man = {}
        if os.path.exists(path):
            with open(path, encoding="utf-8") as fh:
                man = json.load(fh)
        man["build"] = git_describe()
        man.setdefault("commands", {})[command] = {
            "config_hash": cfg.digest(), "seed": cfg.seed,
            "artifacts": sorted(os.path.relpath(a, self.root) for a in artifacts),
        }
        _dump(man, path)
        _dump(cfg.to_dict(), self.path("config.json"))


# ---------------------------------------------------------------------------
# data stages


def load_corpus(cfg):
    if cfg.corpus:
        cfg.validate()
        return read_corpus(cfg.corpus, cfg.corpus_format)
    return generate_toy_corpus(ToySpec.from_dict(cfg.toy), cfg.seed)


def make_splits(cfg, wd, corpus=None):
    corpus = load_corpus(cfg) if corpus is None else corpus
    sp = cfg.split
    splits = split_by_genre(corpus, sp.id_genres, sp.ood_genres, sp.ratios, cfg.seed, sp.policy)
    write_corpus(wd.path("corpus.jsonl"), corpus)
    for name in SPLIT_NAMES:
        write_corpus(wd.split_path(name), getattr(splits, name))
    vocab = build_vocab(splits.train)
    vocab.save(wd.path("vocab.json"))
    return splits, vocab


def read_split(wd, name):
    path = wd.split_path(name)
    if not os.path.exists(path):
        raise DataError(f"{path} is missing; run the split command first")
    return read_corpus(path)


def read_vocab(wd):
    path = wd.path("vocab.json")
    if not os.path.exists(path):
        raise DataError(f"{path} is missing; run the split command first")
    return Vocabulary.load(path)


def read_model(path):
    if not os.path.exists(path):
        raise DataError(f"checkpoint {path} is missing")
    return load_checkpoint(path)


def encoded(wd, vocab, names):
    return {n: encode_corpus(read_split(wd, n), vocab) for n in names}


# ---------------------------------------------------------------------------
# model stages


def run_pretrain(cfg, wd, vocab, train):
    enc_cfg = cfg.encoder_config(vocab.input_size)
    model = pretrain_mlm(train, cfg.stage("pretrain"), cfg.masking, enc_cfg, on_epoch=wd.logger("pretrain"))
    model.meta["vocab"] = vocab.fingerprint()
    save_checkpoint(model, wd.path("mlm.ckpt"))
    return model


def perplexity_report(cfg, model, data):
    return {name: perplexity(model, d, cfg.masking, seed=cfg.seed) for name, d in data.items()}


def run_finetune(cfg, wd, vocab, base, train, weight_decay, path=None, log_name="finetune"):
    tc = cfg.stage("finetune").replace(weight_decay=float(weight_decay))
    model = finetune_classifier(base, train, tc, vocab.label_size, vocab, on_epoch=wd.logger(log_name))
    save_checkpoint(model, path or wd.path("classifier.ckpt"))
    return model


def _wd_name(v):
    return f"wd-{v:g}"


def run_sweep(cfg, wd, vocab, base, train, evals, values=None):
    """One fine-tuning run per weight decay; the best on eval_ood becomes classifier.ckpt.

    Ties go to the smaller weight decay (earlier in the sorted list).
    """
    values = cfg.weight_decays if values is None else tuple(values)
    if not values:
        raise ConfigError("the weight-decay sweep needs at least one value")
    runs = []
    for v in values:
        m = run_finetune(cfg, wd, vocab, base, train, v, wd.path("sweep", f"{_wd_name(v)}.ckpt"),
                         log_name=f"sweep-{_wd_name(v)}")
        acc = {n: metrics.morpheme_accuracy(predict(m, d), d).accuracy for n, d in evals.items()}
        runs.append({"weight_decay": float(v), "model": m, "accuracy": acc})
    best = max(runs, key=lambda r: (r["accuracy"]["eval_ood"], -r["weight_decay"]))
    save_checkpoint(best["model"], wd.path("classifier.ckpt"))
    rows = [[f"{r['weight_decay']:g}"] + [100 * r["accuracy"][n] for n in evals] for r in runs]
    text = metrics.format_table(["weight decay"] + [n for n in evals], rows)
    report = {"runs": [{"weight_decay": r["weight_decay"], "accuracy": r["accuracy"]} for r in runs],
              "best_weight_decay": best["weight_decay"]}
    wd.report("sweep", report, text)
    return runs, best


def run_denoiser_training(cfg, wd, vocab, train):
    den = train_denoiser(train, vocab.label_size, cfg.stage("denoiser"),
                         cfg.encoder_config(1) if cfg.encoder else None,
                         cfg.masking, on_epoch=wd.logger("denoiser"))
    save_checkpoint(den, wd.path("denoiser.ckpt"))
    return den


def make_predictor(mode, den):
    if mode == "off" or den is None:
        return predict

    def predictor(model, sentences):
        return denoise_predictions(predict(model, sentences), mode, den)
    return predictor


def denoise_report(preds, data, mode, den):
    """Accuracy split by OOV status before and after denoising, plus the change count at known positions."""
    after = denoise_predictions(preds, mode, den)
    changed = sum(a != b for p, q, e in zip(preds, after, data)
                  for a, b, o in zip(p.pred_ids, q.pred_ids, e.oov_mask) if not o)
    out = {"changed_known_positions": changed}
    for tag, ps in (("before", preds), ("after", after)):
        split = metrics.accuracy_by_oov(ps, data)
        out[tag] = {k: (None if r is None else r.accuracy) for k, r in split.items()}
        out[tag]["overall"] = metrics.morpheme_accuracy(ps, data).accuracy
    return out, after


def run_pseudo_label(cfg, wd, model, train, evals, predictor, base=None):
    pl = cfg.stage("pseudo_label")

    def evaluate(m):
        return {n: metrics.morpheme_accuracy(predictor(m, d), d).accuracy for n, d in evals.items()}

    run = run_iterations(model, train, evals["eval_ood"], pl, evaluate, predictor, base)
    save_checkpoint(run.model, wd.path("pseudo.ckpt"))
    with open(wd.path("reports", "pseudo_label.jsonl"), "w", encoding="utf-8", newline="\n") as fh:
        for rec in run.records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    return run


# ---------------------------------------------------------------------------
# pipeline


STAGES = ("baseline", "weight decay", "denoised", "pseudo-labeled")


def lexicon_accuracy(lex, vocab, data, method, seed):
    preds = baselines.predict_corpus(lex, data, vocab, method, seed)
    return metrics.morpheme_accuracy(preds, data).accuracy


def run_pipeline(cfg, wd=None):
    """Baseline fine-tune, best weight decay, denoising, pseudo-labeling.

    The held-out OOD test split is written to disk by the split stage and
    only read back for the final evaluation of all four stages.
    """
    wd = wd or Workdir(cfg.workdir)
    splits, vocab = make_splits(cfg, wd)
    del splits  # the test split is re-read from disk at the very end
    train = encoded(wd, vocab, ["train"])["train"]
    evals = encoded(wd, vocab, EVAL_SPLITS)
    report = {"seed": cfg.seed, "config_hash": cfg.digest(),
              "sizes": {"train": len(train), **{n: len(d) for n, d in evals.items()}},
              "vocab": {"morphemes": vocab.input_size, "glosses": vocab.label_size},
              "oov_rate": {n: metrics.oov_rate(d, vocab) for n, d in evals.items()}}

    lex = baselines.fit_lexicon([e.source for e in train])
    report["lexicon_baselines"] = {
        m: {n: lexicon_accuracy(lex, vocab, d, m, cfg.seed) for n, d in evals.items()}
        for m in ("most_frequent", "random")}

    base = run_pretrain(cfg, wd, vocab, train)
    report["perplexity"] = perplexity_report(cfg, base, evals)

    values = cfg.weight_decays if 0.0 in cfg.weight_decays else (0.0,) + cfg.weight_decays
    runs, best = run_sweep(cfg, wd, vocab, base, train, evals, values)
    report["sweep"] = [{"weight_decay": r["weight_decay"], **r["accuracy"]} for r in runs]
    report["best_weight_decay"] = best["weight_decay"]
    baseline_model = next(r["model"] for r in runs if r["weight_decay"] == 0.0)
    wd_model = best["model"]

    den = None
    report["denoise"] = {"mode": cfg.denoise}
    if cfg.denoise != "off":
        den = run_denoiser_training(cfg, wd, vocab, train)
        for n, d in evals.items():
            report["denoise"][n], _ = denoise_report(predict(wd_model, d), d, cfg.denoise, den)
    predictor = make_predictor(cfg.denoise, den)

    # retraining keeps the selected weight decay
    pl_cfg = cfg.replace(pseudo_label=replace(
        cfg.pseudo_label, retrain=cfg.pseudo_label.retrain.replace(weight_decay=best["weight_decay"])))
    run = run_pseudo_label(pl_cfg, wd, wd_model, train, evals, predictor, base)
    report["pseudo_label"] = {"records": run.records, "best_iteration": run.best_iteration}

    # final evaluation: the only place the test split is read
    test = {"test_ood": encode_corpus(read_split(wd, "test_ood"), vocab)}
    final = {**evals, **test}
    stage_models = [("baseline", baseline_model, predict), ("weight decay", wd_model, predict),
                    ("denoised", wd_model, predictor), ("pseudo-labeled", run.model, predictor)]
    rows = []
    for name, model, pr in stage_models:
        acc = {n: metrics.morpheme_accuracy(pr(model, d), d).accuracy for n, d in final.items()}
        rows.append({"stage": name, **acc})
    report["stages"] = rows
    report["lexicon_baselines_test"] = {
        m: lexicon_accuracy(lex, vocab, test["test_ood"], m, cfg.seed) for m in ("most_frequent", "random")}
    oov = {}
    for n, d in final.items():
        oov[n] = metrics.oov_report(predictor(run.model, d), d)
    report["oov"] = {n: r.to_dict() for n, r in oov.items()}

    text = pipeline_text(report, oov)
    wd.report("pipeline", report, text)
    wd.record("pipeline", cfg, [wd.path("reports", "pipeline.json"), wd.path("reports", "pipeline.txt"),
                                wd.path("classifier.ckpt"), wd.path("pseudo.ckpt")])
    return report


def pipeline_text(report, oov):
    names = ["eval_id", "eval_ood", "test_ood"]
    rows = [[r["stage"]] + [100 * r[n] for n in names] for r in report["stages"]]
    out = [metrics.format_table(["stage"] + names, rows, title="Staged accuracy (%)")]
    lb = report["lexicon_baselines"]
    rows = [[m] + [100 * lb[m][n] for n in EVAL_SPLITS] + [100 * report["lexicon_baselines_test"][m]]
            for m in lb]
    out.append(metrics.format_table(["lexicon baseline"] + names, rows))
    rows = [[f"{r['weight_decay']:g}"] + [100 * r[n] for n in EVAL_SPLITS] for r in report["sweep"]]
    out.append(metrics.format_table(["weight decay"] + list(EVAL_SPLITS), rows,
                                    title=f"Weight-decay sweep (best {report['best_weight_decay']:g})"))
    out.append("OOV errors of the final model\n" + metrics.oov_table(oov))
    return "\n".join(out)


def predictions_to_records(preds, vocab):
    out = []
    for p in preds:
        s = p.source.source if p.source is not None and hasattr(p.source, "source") else None
        rec = {"glosses": decode_labels(p.pred_ids, vocab),
               "replaced": [i for i, r in enumerate(p.replaced) if r]}
        if s is not None:
            rec["doc"], rec["index"] = s.doc_id, s.index
        out.append(rec)
    return out

