"""The full network: content encoder + codebook, prosody encoder, vocoder."""

import numpy as np
import torch
import torch.nn as nn

from vqanon.content import Codebook, ContentEncoder, ContentEncoderConfig, quantize
from vqanon.features import normalize_energy_mean
from vqanon.prosody import ProsodyEncoder, ProsodyEncoderConfig, stack_prosody
from vqanon.synthesis import Generator, GeneratorConfig, build_local_conditioning


class VQAnonModel(nn.Module):
    def __init__(self, encoder_cfg=ContentEncoderConfig(), prosody_cfg=ProsodyEncoderConfig(),
                 generator_cfg=GeneratorConfig(), seed=0):
        super().__init__()
        if encoder_cfg.out_dim + prosody_cfg.out_dim != generator_cfg.local_cond_dim:
            raise ValueError("content + prosody widths must equal the generator's local_cond_dim")
        torch.manual_seed(seed)
        self.encoder = ContentEncoder(encoder_cfg)
        self.codebook = Codebook(encoder_cfg.codebook_size, encoder_cfg.out_dim,
                                 encoder_cfg.ema_decay, encoder_cfg.ema_eps,
                                 generator=torch.Generator().manual_seed(seed + 1))
        self.prosody = ProsodyEncoder(prosody_cfg)
        self.generator = Generator(generator_cfg)

    def forward(self, mel, prosody_in, speaker, track_usage=True):
        """mel [B, T, 80], prosody_in [B, T, 2], speaker [B, D].

        Returns ``(wave [B, 160 T], QuantizationResult, latents [B, T/2, 256])``.
        """
        z = self.encoder(mel)
        q = quantize(z, self.codebook, track_usage=track_usage)
        p = self.prosody(prosody_in)
        wave = self.generator(build_local_conditioning(q.quantized, p), speaker)
        return wave, q, z

    @torch.no_grad()
    def infer(self, mel, f0n, energy, speaker):
        """Single utterance inference from numpy features. Returns float64 samples."""
        was_training = self.training
        self.eval()
        try:
            dtype = next(self.parameters()).dtype
            m = torch.from_numpy(np.asarray(mel, dtype=np.float64)).to(dtype)[None]
            p = torch.from_numpy(stack_prosody(f0n, normalize_energy_mean(energy))).to(dtype)[None]
            s = torch.from_numpy(np.asarray(speaker, dtype=np.float64)).to(dtype)[None]
            wave, _, _ = self(m, p, s, track_usage=False)
        finally:
            self.train(was_training)
        return wave[0, : 160 * mel.shape[0]].double().numpy()
