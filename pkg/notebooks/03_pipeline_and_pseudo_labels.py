"""The staged pipeline through the command-line entry point, then a look at its reports.

Uses a shrunken configuration so it finishes in a few minutes; swap in
configs/toy.json (without the overrides) for the full-size run.
Run from the repository root:  python notebooks/03_pipeline_and_pseudo_labels.py
"""

import json
import os
import tempfile

from glosskit.cli import main

workdir = os.path.join(tempfile.mkdtemp(), "run")
overrides = ['encoder={"n_layers":2,"hidden":64,"n_heads":4,"ffn_dim":256,"max_positions":64}',
             "pretrain.epochs=8", "finetune.epochs=8", "weight_decays=[0,0.1,1]", "denoiser.epochs=20"]
argv = ["pipeline", "--config", "configs/toy.json", "--workdir", workdir, "--threads", "1"]
for o in overrides:
    argv += ["--set", o]
assert main(argv) == 0

# %% Each pseudo-labeling round adds the most confident quarter of the OOD pool
with open(os.path.join(workdir, "reports", "pseudo_label.jsonl")) as fh:
    for line in fh:
        r = json.loads(line)
        conf = "-" if r["mean_confidence"] is None else f"{r['mean_confidence']:.3f}"
        print(f"round {r['iteration']}: {r['selected_count']:4d} sentences, confidence {conf}, "
              f"eval_ood {100 * r['acc_eval_ood']:.1f}")

# %% The manifest ties every artifact to a config hash, seed and build
with open(os.path.join(workdir, "manifest.json")) as fh:
    print(json.dumps(json.load(fh), indent=1))
