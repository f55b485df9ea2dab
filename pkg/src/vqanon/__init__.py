"""VQ-VAE speaker anonymization.

Content (vector-quantized mel encoder), prosody (Bi-GRU over F0 and energy)
and speaker identity (x-vector) are encoded separately. Anonymization swaps
the x-vector for a pseudo-x-vector averaged from distant pool speakers and
rewrites F0 under one of three strategies; a HiFi-GAN style vocoder
resynthesizes the waveform. EER and UAR tooling scores the result.
"""

from vqanon.anonymizer import (AnonymizationConfig, SpeakerPool, XVector, build_speaker_pool,
                               select_pseudo_xvector)
from vqanon.content import Codebook, ContentEncoder, perplexity, quantize, update_codebook_ema
from vqanon.evaluation import compute_eer, compute_uar, render_results_table
from vqanon.features import (AudioClip, FeatureConfig, ProsodyTrack, compute_energy, compute_mel,
                             extract_f0, normalize_energy_mean, normalize_f0_log)
from vqanon.model import VQAnonModel

__version__ = "0.1.0"

__all__ = [
    "AnonymizationConfig", "AudioClip", "Codebook", "ContentEncoder", "FeatureConfig",
    "ProsodyTrack", "SpeakerPool", "VQAnonModel", "XVector", "build_speaker_pool",
    "compute_eer", "compute_energy", "compute_mel", "compute_uar", "extract_f0",
    "normalize_energy_mean", "normalize_f0_log", "perplexity", "quantize",
    "render_results_table", "select_pseudo_xvector", "update_codebook_ema",
]
