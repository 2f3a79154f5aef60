"""
Scoring generated audio
=======================

E-L1 needs only the audio. FAD and IS come from embeddings and class
posteriors computed elsewhere (VGGish, PANNs); here random stand-ins show
the file formats and what the numbers do.
"""

import csv
import shutil
from pathlib import Path

import numpy as np

from eventfoley.corpus import make_synth_corpus, write_corpus
from eventfoley.metrics import event_l1, evaluate_run, frechet_distance, inception_score, write_embeddings

rng = np.random.default_rng(0)

# E-L1 is a mean absolute difference, so it is a metric and scales linearly
a, b = rng.uniform(size=59), rng.uniform(size=59)
print("E-L1(a, a) =", event_l1(a, a), " E-L1(a, b) =", round(event_l1(a, b), 4),
      " E-L1(2a, 2b) =", round(event_l1(2 * a, 2 * b), 4))

# Frechet distance between Gaussian fits: a unit mean shift costs exactly 1
emb = rng.normal(size=(500, 8))
print("FD, same set:", round(frechet_distance(emb, emb), 6))
print("FD, shifted by one unit along an axis:", round(frechet_distance(emb, emb + np.eye(8)[0]), 6))

# Inception score ranges from 1 (no confidence) to C (confident and balanced)
print("IS uniform:", inception_score(np.full((30, 7), 1 / 7)), " IS one-hot:", inception_score(np.eye(7)))

# A whole evaluation run over directories: one row per class plus the mean
root = Path("demo_eval")
shutil.rmtree(root, ignore_errors=True)
ref = write_corpus(make_synth_corpus(4, seed=3), root / "reference")
gen = root / "generated"
shutil.copytree(ref, gen)
(gen / "manifest.csv").unlink()
write_embeddings(rng.normal(size=(12, 8)), root / "gen.emb")
write_embeddings(rng.normal(size=(12, 8)) + 0.3, root / "ref.emb")
with open(root / "probs.csv", "w", newline="") as fh:
    csv.writer(fh).writerows(rng.dirichlet(np.ones(3), size=12).tolist())
report = evaluate_run(gen, ref, gen_embeddings=root / "gen.emb", ref_embeddings=root / "ref.emb",
                      gen_probs=root / "probs.csv")
report.to_csv(root / "report.csv")
print((root / "report.csv").read_text())
