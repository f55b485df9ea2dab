"""Acoustic front end: log-mel spectrogram, F0 track and spectral energy.

All three streams share one frame grid: 16 kHz audio, hop 160 samples
(10 ms), so a clip of N samples gives T = N / 160 frames. Frame ``t``
is the 400-sample (25 ms) window centred on the middle of hop ``t``;
the signal is zero-padded by 120 samples on both sides so every frame
is complete.
"""

import csv
import wave
from dataclasses import dataclass, field

import numpy as np
import torch
from scipy.signal import get_window, medfilt

from vqanon import archive
from vqanon.errors import DataError

SAMPLE_RATE = 16000


@dataclass(frozen=True)
class FeatureConfig:
    window_ms: float = 25.0
    hop_ms: float = 10.0
    fft_size: int = 1024
    n_mels: int = 80
    f0_min_hz: float = 50.0
    f0_max_hz: float = 550.0
    log_floor: float = 1e-5
    voicing_threshold: float = 0.3
    median_width: int = 3
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        if self.window_ms <= self.hop_ms:
            raise ValueError("window_ms must exceed hop_ms")
        if self.fft_size < self.win_length:
            raise ValueError("fft_size must be >= window length in samples")
        if self.sample_rate != SAMPLE_RATE:
            raise ValueError("only 16 kHz audio is supported")

    @property
    def win_length(self):
        return int(round(self.sample_rate * self.window_ms / 1000))

    @property
    def hop_length(self):
        return int(round(self.sample_rate * self.hop_ms / 1000))

    @property
    def pad(self):
        """Zero padding on each side so frame t is centred on hop t."""
        return (self.win_length - self.hop_length) // 2


DEFAULT_CONFIG = FeatureConfig()


@dataclass(frozen=True)
class AudioClip:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE
    utterance_id: str = ""
    speaker_id: str = ""

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.float64)
        if s.ndim != 1 or s.size == 0:
            raise DataError("audio must be a non-empty mono signal")
        if not np.all(np.isfinite(s)):
            raise DataError("audio contains non-finite samples")
        if self.sample_rate != SAMPLE_RATE:
            raise DataError(f"sample rate {self.sample_rate} != {SAMPLE_RATE}")
        object.__setattr__(self, "samples", s)

    @property
    def n_frames(self):
        return self.samples.size // DEFAULT_CONFIG.hop_length


@dataclass(frozen=True)
class MelSpectrogram:
    frames: np.ndarray  # [T, n_mels], natural-log magnitudes
    frame_rate: float = 100.0

    @property
    def n_frames(self):
        return self.frames.shape[0]


@dataclass
class ProsodyTrack:
    f0_hz: np.ndarray
    voiced: np.ndarray
    energy: np.ndarray = field(default=None)

    def __post_init__(self):
        self.f0_hz = np.asarray(self.f0_hz, dtype=np.float64)
        self.voiced = np.asarray(self.voiced, dtype=bool)
        if self.f0_hz.shape != self.voiced.shape:
            raise DataError("f0 and voicing flags differ in length")
        if np.any((self.f0_hz > 0) != self.voiced):
            raise DataError("f0 must be zero exactly on unvoiced frames")
        if self.energy is not None:
            self.energy = np.asarray(self.energy, dtype=np.float64)

    def __len__(self):
        return self.f0_hz.size


def trim_to_hop(samples, hop_length=160):
    """Drop trailing samples so the length is a multiple of ``hop_length``."""
    samples = np.asarray(samples)
    return samples[: samples.size - samples.size % hop_length]


def read_wav(path, utterance_id="", speaker_id=""):
    """Read 16-bit PCM mono 16 kHz WAV, trimmed to a multiple of the hop."""
    try:
        with wave.open(str(path), "rb") as w:
            if w.getnchannels() != 1:
                raise DataError(f"{path}: expected mono audio")
            if w.getsampwidth() != 2:
                raise DataError(f"{path}: expected 16-bit PCM")
            sr = w.getframerate()
            raw = w.readframes(w.getnframes())
    except (wave.Error, EOFError) as exc:
        raise DataError(f"{path}: {exc}") from exc
    if sr != SAMPLE_RATE:
        raise DataError(f"{path}: sample rate {sr} != {SAMPLE_RATE}")
    x = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    x = trim_to_hop(x)
    if x.size == 0:
        raise DataError(f"{path}: no complete frames")
    return AudioClip(x, SAMPLE_RATE, utterance_id, speaker_id)


def write_wav(path, samples, sample_rate=SAMPLE_RATE):
    """Write 16-bit PCM mono WAV. Samples are clipped to [-1, 1]."""
    x = np.clip(np.asarray(samples, dtype=np.float64), -1.0, 1.0)
    pcm = np.clip(np.round(x * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(sample_rate)
        w.writeframes(pcm.tobytes())


# -- mel filterbank ---------------------------------------------------------

def hz_to_mel(f):
    """Slaney mel scale: linear below 1 kHz, logarithmic above."""
    f = np.asarray(f, dtype=np.float64)
    f_sp = 200.0 / 3
    min_log_hz = 1000.0
    min_log_mel = min_log_hz / f_sp
    logstep = np.log(6.4) / 27.0
    return np.where(f >= min_log_hz,
                    min_log_mel + np.log(np.maximum(f, min_log_hz) / min_log_hz) / logstep,
                    f / f_sp)


def mel_to_hz(m):
    m = np.asarray(m, dtype=np.float64)
    f_sp = 200.0 / 3
    min_log_hz = 1000.0
    min_log_mel = min_log_hz / f_sp
    logstep = np.log(6.4) / 27.0
    return np.where(m >= min_log_mel, min_log_hz * np.exp(logstep * (m - min_log_mel)), f_sp * m)


def mel_center_frequencies(cfg=DEFAULT_CONFIG):
    edges = mel_to_hz(np.linspace(hz_to_mel(0.0), hz_to_mel(cfg.sample_rate / 2), cfg.n_mels + 2))
    return edges[1:-1]


def mel_filterbank(cfg=DEFAULT_CONFIG):
    """Triangular, area-normalized filters over 0 Hz..Nyquist. Shape [n_mels, fft/2+1]."""
    fft_freqs = np.linspace(0, cfg.sample_rate / 2, cfg.fft_size // 2 + 1)
    edges = mel_to_hz(np.linspace(hz_to_mel(0.0), hz_to_mel(cfg.sample_rate / 2), cfg.n_mels + 2))
    fb = np.zeros((cfg.n_mels, fft_freqs.size))
    for m in range(cfg.n_mels):
        lo, c, hi = edges[m], edges[m + 1], edges[m + 2]
        up = (fft_freqs - lo) / (c - lo)
        down = (hi - fft_freqs) / (hi - c)
        fb[m] = np.maximum(0.0, np.minimum(up, down)) * (2.0 / (hi - lo))
    return fb


def analysis_window(cfg=DEFAULT_CONFIG):
    return get_window("hann", cfg.win_length, fftbins=True)


def _check_clip(clip, cfg):
    x = clip.samples if isinstance(clip, AudioClip) else np.asarray(clip, dtype=np.float64)
    if x.size < cfg.win_length:
        raise DataError(f"clip shorter than one analysis window ({cfg.win_length} samples)")
    if not np.all(np.isfinite(x)):
        raise DataError("audio contains non-finite samples")
    if x.size % cfg.hop_length:
        raise DataError(f"clip length {x.size} is not a multiple of {cfg.hop_length}; trim it first")
    return x


def _frames(x, cfg, extra=0):
    """Frame matrix [T, win_length + extra] on the shared hop grid."""
    T = x.size // cfg.hop_length
    padded = np.pad(x, (cfg.pad, cfg.pad + extra))
    idx = np.arange(T)[:, None] * cfg.hop_length + np.arange(cfg.win_length + extra)[None, :]
    return padded[idx]


def compute_mel(clip, cfg=DEFAULT_CONFIG):
    """Log-mel spectrogram, shape [N/160, n_mels]."""
    x = _check_clip(clip, cfg)
    frames = _frames(x, cfg) * analysis_window(cfg)
    mag = np.abs(np.fft.rfft(frames, n=cfg.fft_size, axis=1))
    mel = mag @ mel_filterbank(cfg).T
    return MelSpectrogram(np.log(np.maximum(mel, cfg.log_floor)))


class TorchMel(torch.nn.Module):
    """Differentiable counterpart of :func:`compute_mel` for batched waveforms."""

    def __init__(self, cfg=DEFAULT_CONFIG):
        super().__init__()
        self.cfg = cfg
        self.register_buffer("fb", torch.from_numpy(mel_filterbank(cfg)), persistent=False)
        self.register_buffer("window", torch.from_numpy(analysis_window(cfg)), persistent=False)

    def forward(self, wave):
        """wave: [B, L] with L a multiple of the hop. Returns [B, L/160, n_mels]."""
        cfg = self.cfg
        x = torch.nn.functional.pad(wave, (cfg.pad, cfg.pad))
        frames = x.unfold(-1, cfg.win_length, cfg.hop_length) * self.window.to(wave.dtype)
        mag = torch.fft.rfft(frames, n=cfg.fft_size, dim=-1).abs()
        mel = mag @ self.fb.to(wave.dtype).T
        return torch.log(torch.clamp(mel, min=cfg.log_floor))


# -- pitch ------------------------------------------------------------------

def nccf_frames(x, cfg=DEFAULT_CONFIG):
    """Normalized cross-correlation per frame over the admissible lag range.

    Returns ``(lags, nccf)`` with nccf of shape [T, len(lags)].
    """
    sr = cfg.sample_rate
    min_lag = int(np.ceil(sr / cfg.f0_max_hz))
    max_lag = int(np.floor(sr / cfg.f0_min_hz))
    W = cfg.win_length
    seg = _frames(x, cfg, extra=max_lag)
    seg = seg - seg[:, :W].mean(axis=1, keepdims=True)
    ref = seg[:, :W]
    e0 = np.sum(ref * ref, axis=1)
    csum = np.concatenate([np.zeros((seg.shape[0], 1)), np.cumsum(seg * seg, axis=1)], axis=1)
    lags = np.arange(min_lag, max_lag + 1)
    out = np.zeros((seg.shape[0], lags.size))
    for j, lag in enumerate(lags):
        num = np.sum(ref * seg[:, lag:lag + W], axis=1)
        el = csum[:, lag + W] - csum[:, lag]
        den = np.sqrt(e0 * el)
        ok = den > 1e-10
        out[ok, j] = num[ok] / den[ok]
    return lags, out


def extract_f0(clip, cfg=DEFAULT_CONFIG):
    """Frame-wise F0 from the NCCF peak, with a width-3 median smoother.

    Among local NCCF maxima the shortest lag within 90 % of the best peak
    wins, which suppresses sub-harmonic (octave-down) picks. A frame is
    voiced when that peak exceeds ``cfg.voicing_threshold``.
    """
    x = _check_clip(clip, cfg)
    lags, r = nccf_frames(x, cfg)
    T = r.shape[0]
    f0 = np.zeros(T)
    for t in range(T):
        row = r[t]
        best = row.max()
        if best < cfg.voicing_threshold:
            continue
        inner = np.arange(1, row.size - 1)
        peaks = inner[(row[inner] >= row[inner - 1]) & (row[inner] >= row[inner + 1])]
        cand = peaks[row[peaks] >= 0.9 * best]
        j = int(cand[0]) if cand.size else int(np.argmax(row))
        lag = float(lags[j])
        if 0 < j < row.size - 1:
            a, b, c = row[j - 1], row[j], row[j + 1]
            denom = a - 2 * b + c
            if denom < 0:
                lag += 0.5 * (a - c) / denom
        f0[t] = np.clip(cfg.sample_rate / lag, cfg.f0_min_hz, cfg.f0_max_hz)
    if cfg.median_width > 1:
        f0 = medfilt(f0, cfg.median_width)
    return ProsodyTrack(f0_hz=f0, voiced=f0 > 0)


def compute_energy(mel):
    """Per-frame spectral energy: sum of linear mel magnitudes."""
    frames = mel.frames if isinstance(mel, MelSpectrogram) else np.asarray(mel)
    return np.exp(frames).sum(axis=1)


# -- normalization ----------------------------------------------------------

@dataclass(frozen=True)
class LogF0Stats:
    mean: float
    std: float


def log_f0_stats(track):
    """Mean and population std of log-F0 over voiced frames.

    A std below 1e-6 (flat pitch) is replaced by 1.
    """
    v = track.f0_hz[track.voiced]
    if v.size < 2:
        raise DataError("insufficient voicing")
    lf = np.log(v)
    dev = lf - lf[0]  # exact zeros for flat pitch
    mu = float(lf[0] + dev.mean())
    sd = float(dev.std())
    if sd < 1e-6:
        sd = 1.0
    return LogF0Stats(mu, sd)


def normalize_f0_log(track, stats=None):
    """Standardized log-F0 on voiced frames, 0 elsewhere.

    ``stats`` defaults to the track's own statistics. Passing the
    statistics of a different (e.g. the unmodified source) track keeps
    level changes visible after normalization.
    """
    if stats is None:
        stats = log_f0_stats(track)
    out = np.zeros(len(track))
    out[track.voiced] = (np.log(track.f0_hz[track.voiced]) - stats.mean) / stats.std
    return out


def normalize_energy_mean(energy):
    energy = np.asarray(energy, dtype=np.float64)
    if energy.size == 0 or np.any(energy <= 0):
        raise DataError("energy must be strictly positive")
    return energy / energy.mean()


# -- files ------------------------------------------------------------------

@dataclass
class UtteranceFeatures:
    utterance_id: str
    speaker_id: str
    mel: np.ndarray
    track: ProsodyTrack

    @property
    def n_frames(self):
        return self.mel.shape[0]


def extract_features(clip, cfg=DEFAULT_CONFIG):
    mel = compute_mel(clip, cfg)
    track = extract_f0(clip, cfg)
    track.energy = compute_energy(mel)
    return UtteranceFeatures(clip.utterance_id, clip.speaker_id, mel.frames, track)


def save_features(path, feats, extra_meta=None):
    """Feature cache: mel <f4 [T,80], f0 <f4 [T], voiced |u1 [T], energy <f4 [T]."""
    meta = {"utterance_id": feats.utterance_id, "speaker_id": feats.speaker_id,
            "n_frames": int(feats.n_frames), "n_mels": int(feats.mel.shape[1]),
            "sample_rate": SAMPLE_RATE, "hop_length": DEFAULT_CONFIG.hop_length}
    meta.update(extra_meta or {})
    archive.save(path, "features", {
        "mel": feats.mel.astype("<f4"),
        "f0": feats.track.f0_hz.astype("<f4"),
        "voiced": feats.track.voiced.astype("|u1"),
        "energy": feats.track.energy.astype("<f4"),
    }, meta)


def load_features(path):
    arrays, meta = archive.load(path, kind="features")
    T = meta["n_frames"]
    for name in ("f0", "voiced", "energy"):
        if arrays[name].shape != (T,):
            raise DataError(f"{path}: array {name!r} has shape {arrays[name].shape}, expected ({T},)")
    track = ProsodyTrack(arrays["f0"].astype(np.float64), arrays["voiced"].astype(bool),
                         arrays["energy"].astype(np.float64))
    return UtteranceFeatures(meta["utterance_id"], meta["speaker_id"],
                             arrays["mel"].astype(np.float64), track)


def read_f0_sidecar(path, n_frames=None):
    """Two-column text ``frame_index f0_hz``; 0 marks unvoiced frames."""
    rows = {}
    with open(path, newline="") as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.replace(",", " ").split()
            if len(parts) != 2:
                raise DataError(f"{path}:{lineno}: expected 2 columns, got {line!r}")
            try:
                idx, hz = int(parts[0]), float(parts[1])
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}: {line!r}") from exc
            if idx < 0 or hz < 0 or not np.isfinite(hz):
                raise DataError(f"{path}:{lineno}: invalid value {line!r}")
            rows[idx] = hz
    T = n_frames if n_frames is not None else (max(rows) + 1 if rows else 0)
    f0 = np.zeros(T)
    for idx, hz in rows.items():
        if idx >= T:
            raise DataError(f"{path}: frame index {idx} beyond track length {T}")
        f0[idx] = hz
    return ProsodyTrack(f0, f0 > 0)


def write_f0_sidecar(path, track):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, delimiter=" ", lineterminator="\n")
        for i, hz in enumerate(track.f0_hz):
            w.writerow([i, repr(float(hz))])
