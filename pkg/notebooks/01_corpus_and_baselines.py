"""Toy corpus, genre split, vocabulary and the two lexicon baselines.

Run from the repository root:  python notebooks/01_corpus_and_baselines.py
"""

from glosskit.baselines import fit_lexicon, predict_corpus
from glosskit.igt_data import (ToySpec, build_vocab, corpus_stats, decode_labels, encode_corpus,
                               generate_toy_corpus, split_by_genre)
from glosskit.metrics import format_table, morpheme_accuracy, oov_rate

# %% A synthetic corpus: four genres, the last two shifted toward unseen stems
spec = ToySpec(n_sentences=3000, ambiguity_rate=0.2, ood_vocab_shift=0.1)
corpus = generate_toy_corpus(spec, seed=0)
print(corpus_stats(corpus))
s = corpus[0]
for w, g in zip(s.words, s.glosses):
    print("  ", "-".join(w), "=", "-".join(g))

# %% Story and History are in-distribution; Personal and Advice are held out
splits = split_by_genre(corpus, ["Story", "History"], ["Personal", "Advice"], (0.7, 0.5), seed=0)
print({name: len(part) for name, part in splits.as_dict().items()})

# %% The vocabulary comes from the training split only, so OOD morphemes become <unk>
vocab = build_vocab(splits.train)
print(f"{vocab.input_size} input ids, {vocab.label_size} glosses")
enc = {name: encode_corpus(part, vocab) for name, part in splits.as_dict().items()}
print({name: round(100 * oov_rate(e, vocab), 1) for name, e in enc.items() if name != "train"}, "% OOV")
e = enc["eval_ood"][0]
print(e.input_ids, decode_labels(e.label_ids, vocab))

# %% Lexicon baselines
lex = fit_lexicon(splits.train)
rows = []
for method in ("most_frequent", "random"):
    accs = [100 * morpheme_accuracy(predict_corpus(lex, enc[n], vocab, method, seed=0), enc[n]).accuracy
            for n in ("eval_id", "eval_ood", "test_ood")]
    rows.append([method] + accs)
print(format_table(["baseline", "eval_id", "eval_ood", "test_ood"], rows, title="Lexicon accuracy (%)"))
