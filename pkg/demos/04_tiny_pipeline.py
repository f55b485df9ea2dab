"""
The whole pipeline at toy size
==============================

features -> pool -> a few training steps -> anonymize, in a temp directory,
with narrow networks so it finishes in seconds. The output audio is noise;
the point is the plumbing. ``vqanon train --profile desk`` is the real run.
"""

import json
import os
import tempfile

from vqanon import pipeline
from vqanon.config import from_dict
from vqanon.corpus import desk_corpus_dir

root = desk_corpus_dir()
work = tempfile.mkdtemp(prefix="vqanon-demo-")
cfg = from_dict({
    "encoder": {"channels": 32},
    "generator": {"base_channels": 32},
    "training": {"batch_size": 2, "segment_frames": 8, "disc_width_divisor": 16,
                 "max_steps": 5, "checkpoint_every": 1},
}, seed=1)

###########################################################################
# Features for the training and evaluation splits.

for split in ("train", "eval"):
    n, failed = pipeline.cmd_features(os.path.join(root, split), os.path.join(work, split), cfg)
    print(split, n, "utterances", len(failed), "failures")

###########################################################################
# Train. The run directory gets config.json, loss_log.csv and checkpoints.

trainer = pipeline.cmd_train(os.path.join(work, "train"), cfg, os.path.join(work, "run"),
                             os.path.join(root, "xvectors"))
print(sorted(os.listdir(os.path.join(work, "run"))))
for r in trainer.reports:
    print(f"mel L1 {r.mel_l1:.3f}  commit {r.commit:.4f}")

###########################################################################
# Anonymize the eval split with System 2 and read one sidecar.

ckpt = os.path.join(work, "run", f"ckpt_{trainer.step:08d}.ckpt")
out = os.path.join(work, "anon")
done = pipeline.cmd_anonymize(os.path.join(work, "eval"), os.path.join(root, "xvectors"),
                              os.path.join(root, "pool.pool"), ckpt, 2, out, cfg)
with open(os.path.join(out, done[0] + ".json")) as f:
    side = json.load(f)
print(done[0], {k: side[k] for k in ("system", "alpha", "n_samples", "f0_strategy")})
print("outputs in", work)
