"""
Pseudo-speakers and the three F0 strategies
===========================================

Pick a pseudo-x-vector from the bundled 300-speaker pool, then see what each
system does to the source F0 before it reaches the prosody encoder.
"""

###########################################################################
# Pool and source embedding.

import os

import numpy as np

from vqanon import anonymizer as anon
from vqanon.corpus import desk_corpus_dir
from vqanon.features import extract_features, read_wav

root = desk_corpus_dir()
pool = anon.load_pool(os.path.join(root, "pool.pool"))
src = anon.load_xvector(os.path.join(root, "xvectors", "spkB_02.xvec"))
cfg = anon.AnonymizationConfig(rng_seed=0)

sel = anon.select_pseudo_xvector(src.values, pool, cfg, "spkB_02")
print(len(pool), "pool speakers;", len(sel.far_speaker_ids), "far;", len(sel.selected_speaker_ids), "averaged")
print("distance source -> pseudo:", np.linalg.norm(sel.pseudo - src.values).round(3))

# same utterance id, same draw
again = anon.select_pseudo_xvector(src.values, pool, cfg, "spkB_02")
assert np.array_equal(again.pseudo, sel.pseudo)

###########################################################################
# F0 under each system.

clip = read_wav(os.path.join(root, "eval", "spkB_02.wav"), "spkB_02", "spkB")
track = extract_features(clip).track
v = track.voiced

for system in (1, 2, 3):
    out, info = anon.anonymize_f0(system, track, cfg, "spkB_02", sel, pool)
    print(f"system {system}: mean normalized F0 {out[v].mean():+.3f}  std {out[v].std():.3f}  {info}")

###########################################################################
# System 2 is a constant ratio in Hz.

scaled = anon.anonymize_f0_random_scale(track, cfg, "spkB_02")
ratio = scaled.f0_hz[v] / track.f0_hz[v]
print("alpha", ratio[0].round(4), "constant:", np.allclose(ratio, ratio[0]))
