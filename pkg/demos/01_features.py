"""
Features of one bundled clip
============================

Log-mel frames, the F0 track and frame energy for ``spkA_00``, then the
per-utterance normalization the prosody encoder sees.
"""

###########################################################################
# Load the clip. The bundled corpus ships inside the package.

import os

import numpy as np

from vqanon.corpus import desk_corpus_dir
from vqanon.features import extract_features, normalize_energy_mean, normalize_f0_log, read_wav

path = os.path.join(desk_corpus_dir(), "train", "spkA_00.wav")
clip = read_wav(path, "spkA_00", "spkA")
print(clip.samples.shape, clip.sample_rate)

###########################################################################
# One call gives mel, F0 and energy on the same 10 ms grid.

feats = extract_features(clip)
print("mel", feats.mel.shape, "range", feats.mel.min().round(2), feats.mel.max().round(2))

track = feats.track
f0 = track.f0_hz[track.voiced]
print(f"voiced {track.voiced.mean():.0%} of frames, F0 median {np.median(f0):.1f} Hz")

###########################################################################
# Normalized inputs: log-F0 z-scores on voiced frames (zero elsewhere),
# energy divided by its mean.

f0n = normalize_f0_log(track)
en = normalize_energy_mean(track.energy)
print("f0n mean/std over voiced:", f0n[track.voiced].mean().round(6), f0n[track.voiced].std().round(6))
print("energy mean:", en.mean())

# a crude text plot of the pitch contour
for t in range(0, feats.n_frames, 5):
    hz = track.f0_hz[t]
    print(f"{t:3d} {'#' * int(hz / 10) if hz else '.'}")
