"""Prosody branch: bidirectional GRU over normalized F0 and energy."""

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from vqanon.errors import DataError


@dataclass(frozen=True)
class ProsodyEncoderConfig:
    input_dim: int = 2
    hidden: int = 128
    bidirectional: bool = True

    @property
    def out_dim(self):
        return self.hidden * (2 if self.bidirectional else 1)


class ProsodyEncoder(nn.Module):
    """[B, T, 2] -> [B, T, 2*hidden]; forward states first, then backward."""

    def __init__(self, cfg=ProsodyEncoderConfig()):
        super().__init__()
        self.cfg = cfg
        self.gru = nn.GRU(cfg.input_dim, cfg.hidden, num_layers=1,
                          batch_first=True, bidirectional=cfg.bidirectional)

    def forward(self, x):
        if x.shape[1] == 0:
            raise DataError("empty prosody input")
        out, _ = self.gru(x)
        return out


def stack_prosody(f0n, en):
    f0n = np.asarray(f0n, dtype=np.float64)
    en = np.asarray(en, dtype=np.float64)
    if f0n.shape != en.shape or f0n.ndim != 1:
        raise DataError("normalized F0 and energy must be equal-length 1-D arrays")
    if f0n.size == 0:
        raise DataError("empty prosody input")
    if not (np.all(np.isfinite(f0n)) and np.all(np.isfinite(en))):
        raise DataError("non-finite prosody input")
    return np.stack([f0n, en], axis=1)


def encode_prosody(f0n, en, encoder):
    """Encode one utterance's normalized F0 and energy to [T, 256]."""
    dtype = next(encoder.parameters()).dtype
    x = torch.from_numpy(stack_prosody(f0n, en)).to(dtype)
    return encoder(x.unsqueeze(0))[0]
