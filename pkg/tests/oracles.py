"""Independent reference computations used as test oracles.

Each one is written from the defining formula, as directly as possible,
and shares no code with the package under test.
"""

import hashlib
import os

import numpy as np

SR = 16000


def sine(freq, seconds=1.0, amp=0.5, sr=SR):
    t = np.arange(int(seconds * sr)) / sr
    return amp * np.sin(2 * np.pi * freq * t)


def sawtooth(freq, seconds=1.0, amp=0.5, sr=SR):
    t = np.arange(int(seconds * sr)) / sr
    return amp * (2 * ((t * freq) % 1.0) - 1)


def file_digest(path):
    with open(path, "rb") as f:
        return hashlib.sha256(f.read()).hexdigest()


def tree_digests(root):
    out = {}
    for dirpath, _, names in os.walk(root):
        for n in sorted(names):
            p = os.path.join(dirpath, n)
            out[os.path.relpath(p, root)] = file_digest(p)
    return out


# -- mel --------------------------------------------------------------------

def slaney_mel(f):
    """Piecewise linear below 1 kHz, logarithmic above (27 / ln 6.4 per octave-ish step)."""
    f = np.asarray(f, dtype=np.float64)
    lin = f / (200.0 / 3)
    log_part = 15.0 + np.log(np.maximum(f, 1e-12) / 1000.0) / (np.log(6.4) / 27.0)
    return np.where(f >= 1000.0, log_part, lin)


def slaney_hz(m):
    m = np.asarray(m, dtype=np.float64)
    return np.where(m >= 15.0, 1000.0 * np.exp((m - 15.0) * np.log(6.4) / 27.0), m * 200.0 / 3)


def mel_centres(n_mels=80, fmax=8000.0):
    edges = slaney_hz(np.linspace(0.0, slaney_mel(fmax), n_mels + 2))
    return edges[1:-1]


def one_frame_mel(x, centre_sample, n_fft=1024, win=400, n_mels=80, floor=1e-5):
    """Log-mel of one frame by an explicit DFT sum and triangle weights."""
    start = centre_sample - win // 2
    seg = np.array([x[i] if 0 <= i < x.size else 0.0 for i in range(start, start + win)])
    w = 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(win) / win)  # periodic Hann
    seg = seg * w
    k = np.arange(n_fft // 2 + 1)[:, None]
    n = np.arange(win)[None, :]
    spec = np.abs(np.sum(seg[None, :] * np.exp(-2j * np.pi * k * n / n_fft), axis=1))
    freqs = np.arange(n_fft // 2 + 1) * SR / n_fft
    edges = slaney_hz(np.linspace(0.0, slaney_mel(SR / 2), n_mels + 2))
    out = np.zeros(n_mels)
    for m in range(n_mels):
        lo, c, hi = edges[m], edges[m + 1], edges[m + 2]
        tri = np.clip(np.minimum((freqs - lo) / (c - lo), (hi - freqs) / (hi - c)), 0, None)
        out[m] = np.sum(spec * tri * 2.0 / (hi - lo))
    return np.log(np.maximum(out, floor))


def autocorr_f0(frame, sr=SR, fmin=50, fmax=550):
    """F0 from the biggest normalized autocorrelation peak of one isolated frame."""
    frame = frame - frame.mean()
    best, best_lag = -np.inf, None
    for lag in range(int(np.ceil(sr / fmax)), int(sr / fmin) + 1):
        a, b = frame[:-lag], frame[lag:]
        r = np.dot(a, b) / np.sqrt(np.dot(a, a) * np.dot(b, b) + 1e-20)
        if r > best + 1e-9:
            best, best_lag = r, lag
    return sr / best_lag


# -- metrics ----------------------------------------------------------------

def eer_bruteforce(target, nontarget):
    """Sweep every candidate threshold one at a time and interpolate the crossing.

    Returns EER in percent.
    """
    target = [float(t) for t in target]
    nontarget = [float(n) for n in nontarget]
    cands = sorted(set(target + nontarget))
    cands.append(np.nextafter(cands[-1], np.inf))
    pts = []
    for th in cands:
        far = sum(1 for s in nontarget if s >= th) / len(nontarget)
        frr = sum(1 for s in target if s < th) / len(target)
        pts.append((far, frr))
    for i, (far, frr) in enumerate(pts):
        if frr >= far:
            if frr == far or i == 0:
                return 100.0 * far
            f0, r0 = pts[i - 1]
            d0, d1 = r0 - f0, frr - far
            t = -d0 / (d1 - d0)
            return 100.0 * (f0 + t * (far - f0))
    raise AssertionError("no crossing found")


def uar_direct(true, pred):
    classes = sorted(set(true) | set(pred))
    recalls = []
    for c in classes:
        idx = [i for i, t in enumerate(true) if t == c]
        recalls.append(sum(1 for i in idx if pred[i] == c) / len(idx))
    return 100.0 * sum(recalls) / len(recalls)


# -- selection --------------------------------------------------------------

def farthest_by_sort(source, vectors, ids, n_far):
    """Sort (−distance, speaker_id) pairs explicitly."""
    d = [float(np.sqrt(np.sum((v - source) ** 2))) for v in vectors]
    order = sorted(range(len(ids)), key=lambda i: (-d[i], ids[i]))
    return order[:n_far]


# -- fd gradients -----------------------------------------------------------

def central_difference(f, param, index, h=1e-3):
    """d f / d param[index] by central differences; ``param`` is modified in place and restored."""
    import torch
    with torch.no_grad():
        orig = param[index].item()
        param[index] = orig + h
        up = float(f())
        param[index] = orig - h
        down = float(f())
        param[index] = orig
    return (up - down) / (2 * h)
