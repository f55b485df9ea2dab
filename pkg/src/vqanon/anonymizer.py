"""Speaker pool, pseudo-x-vector selection and F0 anonymization strategies.

The three F0 strategies map onto the three system variants:

1. ``log_norm``      standardized log-F0 of the source utterance.
2. ``random_scale``  F0 multiplied by one per-utterance factor drawn from
                     U[0.8, 1.2], then standardized with the *source*
                     statistics so the shift survives normalization.
3. ``distant_mean``  source log-F0 level replaced by the mean level of the
                     speakers drawn for the pseudo-x-vector, standardized
                     with the source statistics.
"""

import hashlib
from dataclasses import dataclass, field

import numpy as np

from vqanon import archive
from vqanon.errors import DataError
from vqanon.features import ProsodyTrack, log_f0_stats, normalize_f0_log

XVECTOR_DIM = 192
POOL_VERSION = 1
F0_STRATEGIES = ("log_norm", "random_scale", "distant_mean")
SYSTEM_STRATEGY = {1: "log_norm", 2: "random_scale", 3: "distant_mean"}


@dataclass
class XVector:
    values: np.ndarray
    speaker_id: str
    source: str = "ingested"  # extracted | stub | ingested
    utterance_id: str = ""

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 1 or not np.all(np.isfinite(self.values)):
            raise DataError(f"x-vector for {self.speaker_id!r} must be a finite 1-D array")
        if self.source not in ("extracted", "stub", "ingested"):
            raise ValueError(f"unknown x-vector source {self.source!r}")

    @property
    def dim(self):
        return self.values.size


@dataclass
class SpeakerPool:
    speaker_ids: list
    xvectors: np.ndarray        # [S, D] per-speaker mean x-vectors
    mean_log_f0: np.ndarray     # [S], NaN where no F0 statistics exist

    def __post_init__(self):
        self.xvectors = np.asarray(self.xvectors, dtype=np.float64)
        self.mean_log_f0 = np.asarray(self.mean_log_f0, dtype=np.float64)
        if len(self.speaker_ids) != self.xvectors.shape[0] or self.mean_log_f0.shape != (len(self.speaker_ids),):
            raise DataError("pool arrays disagree in size")
        if len(set(self.speaker_ids)) != len(self.speaker_ids):
            raise DataError("duplicate speaker ids in pool")
        self._index = {s: i for i, s in enumerate(self.speaker_ids)}

    def __len__(self):
        return len(self.speaker_ids)

    @property
    def dim(self):
        return self.xvectors.shape[1]

    def index(self, speaker_id):
        return self._index[speaker_id]


@dataclass(frozen=True)
class AnonymizationConfig:
    n_far: int = 200
    n_select: int = 100
    f0_strategy: str = "log_norm"
    scale_low: float = 0.8
    scale_high: float = 1.2
    rng_seed: int = 0
    distance_reference: str = "utterance"  # or "speaker"

    def __post_init__(self):
        if not 0 < self.n_select <= self.n_far:
            raise ValueError("need 0 < n_select <= n_far")
        if self.f0_strategy not in F0_STRATEGIES:
            raise ValueError(f"unknown f0 strategy {self.f0_strategy!r}")
        if not 0 < self.scale_low <= self.scale_high:
            raise ValueError("need 0 < scale_low <= scale_high")
        if self.distance_reference not in ("utterance", "speaker"):
            raise ValueError(f"unknown distance reference {self.distance_reference!r}")


def _stable_int(text):
    return int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "little")


def utterance_rng(seed, utterance_id, purpose):
    """Generator keyed on (seed, utterance, purpose); independent of call order."""
    return np.random.default_rng(np.random.SeedSequence(
        [int(seed) & 0xFFFFFFFFFFFFFFFF, _stable_int(utterance_id), _stable_int(purpose)]))


def stub_xvector(speaker_id, dim=XVECTOR_DIM):
    """Deterministic unit-norm stand-in for a speaker embedding."""
    rng = np.random.default_rng(_stable_int("xvector:" + speaker_id))
    v = rng.standard_normal(dim)
    return XVector(v / np.linalg.norm(v), speaker_id, source="stub")


def save_xvector(path, xv):
    archive.save(path, "xvector", {"values": xv.values.astype("<f4")},
                 {"speaker_id": xv.speaker_id, "utterance_id": xv.utterance_id,
                  "dim": int(xv.dim), "source": xv.source})


def load_xvector(path):
    arrays, meta = archive.load(path, kind="xvector")
    v = arrays["values"].astype(np.float64)
    if v.shape != (meta["dim"],):
        raise DataError(f"{path}: payload shape {v.shape} disagrees with dim {meta['dim']}")
    return XVector(v, meta["speaker_id"], meta.get("source", "ingested"), meta.get("utterance_id", ""))


def speaker_log_f0_means(tracks_by_speaker):
    """Mean log-F0 over all voiced frames of each speaker's utterances."""
    out = {}
    for spk, tracks in tracks_by_speaker.items():
        vals = [np.log(t.f0_hz[t.voiced]) for t in tracks]
        vals = np.concatenate(vals) if vals else np.zeros(0)
        out[spk] = float(vals.mean()) if vals.size else float("nan")
    return out


def build_speaker_pool(xvectors, f0_stats=None):
    """Average each speaker's x-vectors; one pool entry per speaker, sorted by id."""
    if not xvectors:
        raise DataError("cannot build a pool from no x-vectors")
    dims = {xv.dim for xv in xvectors}
    if len(dims) != 1:
        raise DataError(f"inconsistent x-vector dimensions {sorted(dims)}")
    groups = {}
    for xv in xvectors:
        groups.setdefault(xv.speaker_id, []).append(xv.values)
    ids = sorted(groups)
    means = np.stack([np.mean(np.stack(groups[s]), axis=0, dtype=np.float64) for s in ids])
    f0_stats = f0_stats or {}
    f0 = np.array([f0_stats.get(s, np.nan) for s in ids], dtype=np.float64)
    return SpeakerPool(ids, means, f0)


def save_pool(path, pool):
    archive.save(path, "pool", {"xvectors": pool.xvectors.astype("<f8"),
                                "mean_log_f0": pool.mean_log_f0.astype("<f8")},
                 {"pool_version": POOL_VERSION, "speaker_ids": list(pool.speaker_ids),
                  "dim": int(pool.dim)})


def load_pool(path):
    arrays, meta = archive.load(path, kind="pool")
    if meta.get("pool_version") != POOL_VERSION:
        raise DataError(f"{path}: unsupported pool version {meta.get('pool_version')}")
    return SpeakerPool(meta["speaker_ids"], arrays["xvectors"], arrays["mean_log_f0"])


def farthest_speakers(source, pool, n_far):
    """Pool indices of the ``n_far`` entries farthest from ``source``.

    Ordered by decreasing distance; equal distances keep pool (speaker id)
    order.
    """
    v = source.values if isinstance(source, XVector) else np.asarray(source, dtype=np.float64)
    if v.shape != (pool.dim,):
        raise DataError(f"source dim {v.shape} != pool dim {pool.dim}")
    if n_far > len(pool):
        raise DataError(f"pool exhausted: need {n_far} speakers, pool has {len(pool)}")
    d = np.linalg.norm(pool.xvectors - v[None, :], axis=1)
    return np.argsort(-d, kind="stable")[:n_far]


@dataclass
class PseudoSelection:
    pseudo: np.ndarray
    selected_speaker_ids: list
    far_speaker_ids: list = field(default_factory=list)


def select_pseudo_xvector(source, pool, cfg, utterance_id=""):
    """Average ``n_select`` speakers drawn from the ``n_far`` farthest."""
    far = farthest_speakers(source, pool, cfg.n_far)
    rng = utterance_rng(cfg.rng_seed, utterance_id, "pseudo-xvector")
    pick = far[rng.choice(far.size, size=cfg.n_select, replace=False)]
    pseudo = pool.xvectors[pick].mean(axis=0)
    return PseudoSelection(pseudo, [pool.speaker_ids[i] for i in pick],
                           [pool.speaker_ids[i] for i in far])


# -- F0 strategies ----------------------------------------------------------

def anonymize_f0_log_norm(track):
    """System 1: plain per-utterance log-F0 standardization."""
    return normalize_f0_log(track)


def draw_scale(cfg, utterance_id):
    rng = utterance_rng(cfg.rng_seed, utterance_id, "f0-scale")
    return float(rng.uniform(cfg.scale_low, cfg.scale_high))


def anonymize_f0_random_scale(track, cfg, utterance_id, alpha=None):
    """System 2: scale every voiced F0 by one factor per utterance.

    ``alpha`` overrides the seeded draw.
    """
    if alpha is None:
        alpha = draw_scale(cfg, utterance_id)
    f0 = np.where(track.voiced, track.f0_hz * alpha, 0.0)
    return ProsodyTrack(f0, track.voiced.copy(), None if track.energy is None else track.energy.copy())


def distant_mean_level(selected_speaker_ids, pool):
    vals = np.array([pool.mean_log_f0[pool.index(s)] for s in selected_speaker_ids])
    if vals.size == 0 or not np.all(np.isfinite(vals)):
        raise DataError("pool stats incomplete")
    return float(vals.mean())


def shift_log_f0_level(track, target_level):
    """Voiced log-F0 with its mean moved to ``target_level``; 0 on unvoiced."""
    stats = log_f0_stats(track)
    out = np.zeros(len(track))
    out[track.voiced] = np.log(track.f0_hz[track.voiced]) - stats.mean + target_level
    return out


def anonymize_f0_distant_mean(track, selected_speaker_ids, pool):
    """System 3: replace the log-F0 level by the drawn speakers' mean level.

    The shifted contour is standardized with the source utterance's own
    mean and std, so the result equals System 1 plus (m* - mu) / sigma.
    """
    level = distant_mean_level(selected_speaker_ids, pool)
    stats = log_f0_stats(track)
    shifted = shift_log_f0_level(track, level)
    out = np.zeros(len(track))
    out[track.voiced] = (shifted[track.voiced] - stats.mean) / stats.std
    return out


def anonymize_f0(system, track, cfg, utterance_id, selection=None, pool=None, alpha=None):
    """Normalized F0 input for the decoder under a given system (1, 2 or 3).

    Returns ``(f0n, info)``; ``info`` records the drawn scale for System 2.
    """
    strategy = SYSTEM_STRATEGY.get(system)
    if strategy is None:
        raise ValueError(f"unknown system {system!r}")
    if strategy == "log_norm":
        return anonymize_f0_log_norm(track), {}
    if strategy == "random_scale":
        if alpha is None:
            alpha = draw_scale(cfg, utterance_id)
        scaled = anonymize_f0_random_scale(track, cfg, utterance_id, alpha=alpha)
        return normalize_f0_log(scaled, stats=log_f0_stats(track)), {"alpha": alpha}
    if selection is None or pool is None:
        raise DataError("distant_mean strategy needs the pseudo-x-vector selection and pool")
    return anonymize_f0_distant_mean(track, selection.selected_speaker_ids, pool), {
        "target_log_f0": distant_mean_level(selection.selected_speaker_ids, pool)}
