"""Synthetic desk corpus: two pseudo-speakers, eight 1-second clips.

Each clip is a glottal-like pulse train with a moving pitch contour, shaped
by a cascade of formant resonators, with a fricative noise burst and short
pauses. Four clips (two per speaker) form the training split, four the
evaluation split. Stub x-vectors and a 300-speaker synthetic pool complete
the set so every pipeline stage runs without downloads.
"""

import os
from importlib import resources

import numpy as np
from scipy.signal import lfilter

from vqanon.anonymizer import (SpeakerPool, XVector, _stable_int, save_pool, save_xvector,
                               stub_xvector)
from vqanon.features import SAMPLE_RATE, write_wav

SPEAKERS = {"spkA": 115.0, "spkB": 210.0}
VOWELS = {
    "a": (730, 1090, 2440),
    "i": (270, 2290, 3010),
    "u": (300, 870, 2240),
    "e": (530, 1840, 2480),
    "o": (570, 840, 2410),
}
POOL_SIZE = 300


def _resonator(x, freq, bw, sr=SAMPLE_RATE):
    r = np.exp(-np.pi * bw / sr)
    theta = 2 * np.pi * freq / sr
    a = [1.0, -2 * r * np.cos(theta), r * r]
    return lfilter([1.0 - r], a, x)


def synth_utterance(f0_base, vowel_seq, rng, seconds=1.0, sr=SAMPLE_RATE):
    n = int(seconds * sr)
    t = np.arange(n) / sr
    contour = f0_base * (1.0 + 0.12 * np.sin(2 * np.pi * rng.uniform(0.6, 1.4) * t + rng.uniform(0, 6.28))
                         - 0.08 * t + 0.01 * np.sin(2 * np.pi * 5.5 * t))
    phase = np.cumsum(contour / sr)
    source = (phase % 1.0) - 0.5
    source = np.diff(np.concatenate([[0.0], source]))  # spectral tilt of a pulse train
    source += 0.002 * rng.standard_normal(n)

    seg = n // len(vowel_seq)
    out = np.zeros(n)
    for k, v in enumerate(vowel_seq):
        lo, hi = k * seg, n if k == len(vowel_seq) - 1 else (k + 1) * seg
        y = source[lo:hi]
        for f, bw in zip(VOWELS[v], (80, 100, 140)):
            y = _resonator(y, f * rng.uniform(0.97, 1.03), bw)
        out[lo:hi] = y

    # fricative burst and pauses
    b0 = int(rng.uniform(0.35, 0.55) * n)
    blen = int(0.08 * sr)
    noise = _resonator(rng.standard_normal(blen), 4500, 1500) * 0.6
    out[b0:b0 + blen] = noise * np.std(out) / max(np.std(noise), 1e-9)
    env = np.ones(n)
    ramp = int(0.03 * sr)
    for edge in (0, n - int(0.06 * sr)):
        env[edge:edge + int(0.06 * sr)] = 0.0
    env = np.convolve(env, np.ones(ramp) / ramp, mode="same")
    out *= env
    return 0.5 * out / np.max(np.abs(out))


def utterance_xvector(speaker_id, utterance_id, dim=192):
    """Speaker stub plus a small utterance-specific perturbation, unit norm."""
    base = stub_xvector(speaker_id, dim).values
    rng = np.random.default_rng(_stable_int("utt-xvector:" + utterance_id))
    v = base + 0.05 * rng.standard_normal(dim)
    return XVector(v / np.linalg.norm(v), speaker_id, source="stub", utterance_id=utterance_id)


def synthetic_pool(size=POOL_SIZE, dim=192, seed=1234):
    rng = np.random.default_rng(seed)
    ids = [f"pool{i:04d}" for i in range(size)]
    xv = np.stack([stub_xvector(s, dim).values for s in ids])
    mean_log_f0 = rng.uniform(np.log(90.0), np.log(260.0), size)
    return SpeakerPool(ids, xv, mean_log_f0)


def write_desk_corpus(out_dir, seed=2024):
    """Generate the corpus into ``out_dir``; returns the written file paths."""
    rng = np.random.default_rng(seed)
    vowel_orders = ["aiu", "eoa", "uia", "oei"]
    written = []
    for split in ("train", "eval"):
        os.makedirs(os.path.join(out_dir, split), exist_ok=True)
    os.makedirs(os.path.join(out_dir, "xvectors"), exist_ok=True)
    for spk, f0 in SPEAKERS.items():
        for k, vowels in enumerate(vowel_orders):
            split = "train" if k < 2 else "eval"
            utt = f"{spk}_{k:02d}"
            x = synth_utterance(f0, vowels, rng)
            path = os.path.join(out_dir, split, f"{utt}.wav")
            write_wav(path, x)
            xpath = os.path.join(out_dir, "xvectors", f"{utt}.xvec")
            save_xvector(xpath, utterance_xvector(spk, utt))
            written += [path, xpath]
    ppath = os.path.join(out_dir, "pool.pool")
    save_pool(ppath, synthetic_pool())
    written.append(ppath)
    return written


def speaker_of(utterance_id):
    """Desk-corpus naming: ``<speaker>_<index>``."""
    return utterance_id.rsplit("_", 1)[0]


def desk_corpus_dir():
    """Location of the bundled copy shipped with the package."""
    return str(resources.files("vqanon") / "data" / "desk_corpus")
