"""Content branch: convolutional mel encoder (100 Hz -> 50 Hz) and a
vector quantizer with an EMA-trained codebook."""

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from vqanon.errors import DataError


@dataclass(frozen=True)
class ContentEncoderConfig:
    in_dim: int = 80
    channels: int = 768
    front_blocks: int = 2
    post_blocks: int = 2
    residual_blocks: int = 4
    out_dim: int = 256
    codebook_size: int = 1024
    commitment_beta: float = 0.25
    ema_decay: float = 0.99
    ema_eps: float = 1e-5
    dead_code_epochs: int = 3


class _ResidualUnit(nn.Module):
    def __init__(self, channels):
        super().__init__()
        self.conv1 = nn.Conv1d(channels, channels, 3, padding=1)
        self.conv2 = nn.Conv1d(channels, channels, 1)

    def forward(self, x):
        return x + self.conv2(F.relu(self.conv1(F.relu(x))))


class ContentEncoder(nn.Module):
    """Mel [B, T, 80] -> continuous latents [B, T/2, 256].

    Layout: 2 conv blocks (k3, s1) -> strided conv (k4, s2) -> 2 conv
    blocks with skips (k3, s1) -> 4 residual units -> 1x1 projection.
    """

    def __init__(self, cfg=ContentEncoderConfig()):
        super().__init__()
        self.cfg = cfg
        C = cfg.channels
        front = []
        for i in range(cfg.front_blocks):
            front.append(nn.Conv1d(cfg.in_dim if i == 0 else C, C, 3, padding=1))
        self.front = nn.ModuleList(front)
        self.down = nn.Conv1d(C, C, 4, stride=2, padding=1)
        self.post = nn.ModuleList(nn.Conv1d(C, C, 3, padding=1) for _ in range(cfg.post_blocks))
        self.res = nn.ModuleList(_ResidualUnit(C) for _ in range(cfg.residual_blocks))
        self.proj = nn.Conv1d(C, cfg.out_dim, 1)

    def forward(self, mel):
        if mel.shape[1] == 0:
            raise DataError("empty mel input")
        if mel.shape[1] % 2:
            mel = torch.cat([mel, mel[:, -1:]], dim=1)
        x = mel.transpose(1, 2)
        for conv in self.front:
            x = F.relu(conv(x))
        x = F.relu(self.down(x))
        for conv in self.post:
            x = x + F.relu(conv(x))
        for unit in self.res:
            x = unit(x)
        x = self.proj(F.relu(x))
        return x.transpose(1, 2)


def encode_content(mel, encoder):
    """Encode one utterance's mel [T, 80] (numpy or tensor) to [ceil(T/2), 256].

    Odd T is padded by repeating the last frame.
    """
    m = torch.as_tensor(mel)
    if m.ndim != 2 or m.shape[0] == 0:
        raise DataError("mel must be a non-empty [T, n_mels] array")
    dtype = next(encoder.parameters()).dtype
    return encoder(m.to(dtype).unsqueeze(0))[0]


class _StraightThrough(torch.autograd.Function):
    """Forward returns the code vectors, backward hands the gradient to z."""

    @staticmethod
    def forward(ctx, z, q):
        return q.clone()

    @staticmethod
    def backward(ctx, grad):
        return grad, None


@dataclass
class QuantizationResult:
    indices: torch.Tensor
    quantized: torch.Tensor
    commitment_loss: torch.Tensor
    codebook_loss: torch.Tensor
    perplexity: float


class Codebook(nn.Module):
    """K code vectors plus the EMA statistics that train them.

    EMA statistics start as (cluster size 1, sum = code), so the codes equal
    ``ema_embed_sums / ema_cluster_size`` from the first step on.
    """

    def __init__(self, size=1024, dim=256, decay=0.99, eps=1e-5, generator=None):
        super().__init__()
        self.size, self.dim, self.decay, self.eps = size, dim, decay, eps
        codes = torch.randn(size, dim, generator=generator)
        self.register_buffer("codes", codes)
        self.register_buffer("ema_cluster_size", torch.ones(size))
        self.register_buffer("ema_embed_sums", codes.clone())
        self.register_buffer("usage_counts", torch.zeros(size, dtype=torch.long))
        self.register_buffer("idle_epochs", torch.zeros(size, dtype=torch.long))

    def extra_repr(self):
        return f"size={self.size}, dim={self.dim}, decay={self.decay}"


def nearest_codes(z, codes):
    """argmin_k ||z_t - c_k||, computed in float64. Ties go to the lower k."""
    z64 = z.detach().to(torch.float64)
    c64 = codes.detach().to(torch.float64)
    d = (z64 * z64).sum(1, keepdim=True) - 2.0 * z64 @ c64.T + (c64 * c64).sum(1)[None, :]
    return torch.argmin(d, dim=1)


def perplexity(indices, K=1024):
    idx = torch.as_tensor(indices).reshape(-1)
    if idx.numel() == 0:
        raise ValueError("perplexity of an empty index set")
    p = torch.bincount(idx, minlength=K).to(torch.float64) / idx.numel()
    p = p[p > 0]
    return float(torch.exp(-(p * p.log()).sum()))


def quantize(z, cb, track_usage=True):
    """Snap latents ``z`` [..., D] to their nearest codes.

    ``quantized`` holds the code vectors bit-exactly; gradients reaching it
    are passed through to ``z`` unchanged. ``commitment_loss`` is the
    unweighted mean squared distance; the training loss applies its weight.
    ``codebook_loss`` is zero because the codes are trained by EMA.
    """
    if z.shape[-1] != cb.dim:
        raise DataError(f"latent dim {z.shape[-1]} != codebook dim {cb.dim}")
    if not torch.isfinite(z).all():
        raise DataError("non-finite latents")
    flat = z.reshape(-1, cb.dim)
    idx = nearest_codes(flat, cb.codes)
    q = cb.codes[idx].to(z.dtype)
    commit = ((flat - q.detach()) ** 2).sum(1).mean()
    if track_usage:
        with torch.no_grad():
            cb.usage_counts += torch.bincount(idx, minlength=cb.size)
    zq = _StraightThrough.apply(flat, q)
    shape = z.shape[:-1]
    return QuantizationResult(
        indices=idx.reshape(shape),
        quantized=zq.reshape(*shape, cb.dim),
        commitment_loss=commit,
        codebook_loss=torch.zeros((), dtype=z.dtype),
        perplexity=perplexity(idx, cb.size),
    )


@torch.no_grad()
def update_codebook_ema(cb, z, indices, decay=None):
    """One EMA step of cluster sizes and sums, then Laplace-smoothed codes."""
    gamma = cb.decay if decay is None else decay
    flat = z.detach().reshape(-1, cb.dim).to(cb.codes.dtype)
    idx = torch.as_tensor(indices).reshape(-1)
    counts = torch.bincount(idx, minlength=cb.size).to(cb.codes.dtype)
    sums = torch.zeros_like(cb.ema_embed_sums).index_add_(0, idx, flat)
    cb.ema_cluster_size.mul_(gamma).add_(counts, alpha=1 - gamma)
    cb.ema_embed_sums.mul_(gamma).add_(sums, alpha=1 - gamma)
    n = cb.ema_cluster_size.sum()
    smoothed = (cb.ema_cluster_size + cb.eps) / (n + cb.size * cb.eps) * n
    cb.codes.copy_(cb.ema_embed_sums / smoothed[:, None])
    return cb


@torch.no_grad()
def end_codebook_epoch(cb, recent_latents, patience=3, generator=None):
    """Close an epoch of usage accounting and re-seed dead codes.

    Codes unused for ``patience`` consecutive epochs are replaced by randomly
    chosen rows of ``recent_latents``. Returns the re-seeded code indices.
    """
    unused = cb.usage_counts == 0
    cb.idle_epochs[unused] += 1
    cb.idle_epochs[~unused] = 0
    cb.usage_counts.zero_()
    dead = torch.nonzero(cb.idle_epochs >= patience).reshape(-1)
    if dead.numel() and recent_latents is not None and len(recent_latents):
        pool = recent_latents.detach().reshape(-1, cb.dim).to(cb.codes.dtype)
        pick = torch.randint(0, pool.shape[0], (dead.numel(),), generator=generator)
        cb.codes[dead] = pool[pick]
        cb.ema_embed_sums[dead] = pool[pick]
        cb.ema_cluster_size[dead] = 1.0
        cb.idle_epochs[dead] = 0
    return dead

