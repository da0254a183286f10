"""Pretrain, fine-tune, then repair OOV predictions with the gloss denoiser.

A reduced encoder keeps this to a couple of minutes on one core; the
configs/toy.json settings use the full-size encoder.
Run from the repository root:  python notebooks/02_classifier_and_denoiser.py
"""

from glosskit import set_threads
from glosskit.denoiser import denoise_predictions, train_denoiser
from glosskit.encoder import EncoderConfig
from glosskit.igt_data import ToySpec, build_vocab, encode_corpus, generate_toy_corpus, split_by_genre
from glosskit.metrics import accuracy_by_oov, morpheme_accuracy, oov_report, oov_table
from glosskit.trainer import MaskingPolicy, TrainConfig, finetune_classifier, perplexity, predict, pretrain_mlm

set_threads(1)
corpus = generate_toy_corpus(ToySpec(n_sentences=3000, ambiguity_rate=0.2, ood_vocab_shift=0.1), seed=0)
splits = split_by_genre(corpus, ["Story", "History"], ["Personal", "Advice"], (0.7, 0.5), seed=0)
vocab = build_vocab(splits.train)
train, eval_id, eval_ood = (encode_corpus(p, vocab) for p in (splits.train, splits.eval_id, splits.eval_ood))
arch = dict(n_layers=2, hidden=64, n_heads=4, ffn_dim=256, max_positions=64)

# %% Masked-LM pretraining; the OOD split is less predictable
base = pretrain_mlm(train, TrainConfig(learning_rate=1e-3, epochs=10), MaskingPolicy(),
                    EncoderConfig(vocab.input_size, **arch))
print("perplexity", {n: round(perplexity(base, d), 2) for n, d in (("eval_id", eval_id), ("eval_ood", eval_ood))})

# %% Token classification on top of the pretrained encoder
clf = finetune_classifier(base, train, TrainConfig(learning_rate=1e-3, epochs=10), vocab.label_size, vocab)
preds = predict(clf, eval_ood)
print("eval_ood accuracy", round(100 * morpheme_accuracy(preds, eval_ood).accuracy, 1))
print(oov_table({"eval_ood": oov_report(preds, eval_ood)}))

# %% The denoiser sees only gloss sequences and rewrites OOV positions
den = train_denoiser(train, vocab.label_size, TrainConfig(learning_rate=2e-3, epochs=30, weight_decay=0.01),
                     EncoderConfig(1, **arch))
for mode in ("unmasked", "masked"):
    fixed = denoise_predictions(preds, mode, den)
    split = accuracy_by_oov(fixed, eval_ood)
    print(f"{mode:9s} overall {100 * morpheme_accuracy(fixed, eval_ood).accuracy:.1f}  "
          f"OOV {100 * split['oov'].accuracy:.1f}  known {100 * split['known'].accuracy:.1f}")
before = accuracy_by_oov(preds, eval_ood)
print(f"{'none':9s} OOV {100 * before['oov'].accuracy:.1f}  known {100 * before['known'].accuracy:.1f}")
