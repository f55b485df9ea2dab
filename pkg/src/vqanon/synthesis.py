"""HiFi-GAN style generator with local (content + prosody) and global
(speaker) conditioning, and the multi-period / multi-scale discriminators."""

import math
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F
from torch.nn.utils.parametrizations import weight_norm

from vqanon.errors import DataError

LRELU_SLOPE = 0.1


@dataclass(frozen=True)
class GeneratorConfig:
    upsample_factors: tuple = (10, 4, 4)
    upsample_kernels: tuple = (20, 8, 8)
    base_channels: int = 512
    resblock_kernels: tuple = (3, 7, 11)
    resblock_dilations: tuple = ((1, 3, 5), (1, 3, 5), (1, 3, 5))
    global_cond_dim: int = 192
    local_cond_dim: int = 512

    def __post_init__(self):
        if len(self.upsample_factors) != len(self.upsample_kernels):
            raise ValueError("one kernel per upsampling factor")
        for u, k in zip(self.upsample_factors, self.upsample_kernels):
            if k != 2 * u:
                raise ValueError(f"upsample kernel {k} must be twice the factor {u}")
        if self.base_channels % (2 ** len(self.upsample_factors)):
            raise ValueError("base_channels must halve cleanly at every stage")

    @property
    def hop(self):
        return math.prod(self.upsample_factors)


@dataclass(frozen=True)
class DiscriminatorConfig:
    mpd_periods: tuple = (3, 5, 7)
    msd_scales: int = 3
    mpd_channels: tuple = (32, 128, 512, 1024, 1024)
    msd_channels: tuple = (128, 128, 256, 512, 1024, 1024, 1024)
    msd_groups: tuple = (1, 4, 16, 16, 16, 16, 1)

    def __post_init__(self):
        p = list(self.mpd_periods)
        if p != sorted(set(p)):
            raise ValueError("MPD periods must be strictly ascending")
        for i in range(len(p)):
            for j in range(i + 1, len(p)):
                if math.gcd(p[i], p[j]) != 1:
                    raise ValueError("MPD periods must be pairwise coprime")
        if len(self.msd_channels) != len(self.msd_groups):
            raise ValueError("one group count per MSD layer")

    def scaled(self, divisor):
        """Same geometry with every channel width divided by ``divisor``."""
        return DiscriminatorConfig(
            self.mpd_periods, self.msd_scales,
            tuple(max(1, c // divisor) for c in self.mpd_channels),
            tuple(max(1, c // divisor) for c in self.msd_channels),
            self.msd_groups,
        )


def _init_normal(m):
    if isinstance(m, (nn.Conv1d, nn.ConvTranspose1d)):
        m.weight.data.normal_(0.0, 0.01)


class ResBlock(nn.Module):
    """Dilated residual block: per dilation, lrelu -> conv(d) -> lrelu -> conv(1)."""

    def __init__(self, channels, kernel, dilations):
        super().__init__()
        pad = lambda d: (kernel * d - d) // 2  # noqa: E731
        self.convs1 = nn.ModuleList(
            weight_norm(nn.Conv1d(channels, channels, kernel, dilation=d, padding=pad(d))) for d in dilations)
        self.convs2 = nn.ModuleList(
            weight_norm(nn.Conv1d(channels, channels, kernel, padding=pad(1))) for _ in dilations)

    def forward(self, x):
        for c1, c2 in zip(self.convs1, self.convs2):
            xt = c2(F.leaky_relu(c1(F.leaky_relu(x, LRELU_SLOPE)), LRELU_SLOPE))
            x = x + xt
        return x


class Generator(nn.Module):
    """Conditioning [B, local_cond_dim, T] plus speaker [B, global_cond_dim]
    -> waveform [B, T * prod(upsample_factors)] in (-1, 1)."""

    def __init__(self, cfg=GeneratorConfig()):
        super().__init__()
        self.cfg = cfg
        self.global_proj = nn.Linear(cfg.global_cond_dim, cfg.local_cond_dim)
        self.conv_pre = weight_norm(nn.Conv1d(cfg.local_cond_dim, cfg.base_channels, 7, padding=3))
        self.ups = nn.ModuleList()
        self.resblocks = nn.ModuleList()
        ch = cfg.base_channels
        for u, k in zip(cfg.upsample_factors, cfg.upsample_kernels):
            self.ups.append(weight_norm(nn.ConvTranspose1d(ch, ch // 2, k, u, padding=(k - u) // 2)))
            ch //= 2
            self.resblocks.append(nn.ModuleList(
                ResBlock(ch, kk, dd) for kk, dd in zip(cfg.resblock_kernels, cfg.resblock_dilations)))
        self.conv_post = weight_norm(nn.Conv1d(ch, 1, 7, padding=3))
        self.ups.apply(_init_normal)
        self.resblocks.apply(_init_normal)

    def forward(self, local, speaker):
        x = local + self.global_proj(speaker)[:, :, None]
        x = self.conv_pre(x)
        for up, blocks in zip(self.ups, self.resblocks):
            x = up(F.leaky_relu(x, LRELU_SLOPE))
            x = sum(b(x) for b in blocks) / len(blocks)
        x = self.conv_post(F.leaky_relu(x))
        return torch.tanh(x).squeeze(1)


def upsample_content(zq):
    """Repeat every content step twice along time (50 Hz -> 100 Hz)."""
    return torch.repeat_interleave(torch.as_tensor(zq), 2, dim=-2)


def build_local_conditioning(zq, prosody):
    """Channel-concatenate upsampled content with prosody. Batched [B, T', C] inputs."""
    T = prosody.shape[-2]
    up = upsample_content(zq)
    if up.shape[-2] == T + 1:
        up = up[..., :T, :]
    if up.shape[-2] != T:
        raise DataError(f"conditioning misaligned: content {zq.shape[-2]} steps vs prosody {T} frames")
    return torch.cat([up, prosody], dim=-1).transpose(-1, -2)


def synthesize(zq, prosody, pseudo, generator):
    """One utterance: content [T/2, 256], prosody [T, 256], speaker [192] -> [T * 160]."""
    pseudo = torch.as_tensor(pseudo)
    if not torch.isfinite(pseudo).all():
        raise DataError("non-finite speaker embedding")
    dtype = next(generator.parameters()).dtype
    local = build_local_conditioning(torch.as_tensor(zq).to(dtype)[None], torch.as_tensor(prosody).to(dtype)[None])
    return generator(local, pseudo.to(dtype)[None])[0]


# -- discriminators ---------------------------------------------------------

def fold_for_period(wave, period):
    """[B, L] -> [B, 1, ceil(L/p), p], zero-padding the tail to a multiple of p."""
    B, L = wave.shape
    rem = (-L) % period
    if rem:
        wave = F.pad(wave, (0, rem))
    return wave.reshape(B, 1, -1, period)


class PeriodDiscriminator(nn.Module):
    def __init__(self, period, channels=(32, 128, 512, 1024, 1024)):
        super().__init__()
        self.period = period
        layers = []
        c_in = 1
        for i, c in enumerate(channels):
            stride = 1 if i == len(channels) - 1 else 3
            layers.append(weight_norm(nn.Conv2d(c_in, c, (5, 1), (stride, 1), padding=(2, 0))))
            c_in = c
        self.convs = nn.ModuleList(layers)
        self.conv_post = weight_norm(nn.Conv2d(c_in, 1, (3, 1), 1, padding=(1, 0)))

    def forward(self, wave):
        x = fold_for_period(wave, self.period)
        fmaps = []
        for conv in self.convs:
            x = F.leaky_relu(conv(x), LRELU_SLOPE)
            fmaps.append(x)
        x = self.conv_post(x)
        fmaps.append(x)
        return torch.flatten(x, 1), fmaps


class MultiPeriodDiscriminator(nn.Module):
    def __init__(self, cfg=DiscriminatorConfig()):
        super().__init__()
        self.periods = tuple(cfg.mpd_periods)
        self.discriminators = nn.ModuleList(PeriodDiscriminator(p, cfg.mpd_channels) for p in self.periods)

    def forward(self, wave):
        return [d(wave) for d in self.discriminators]


class ScaleDiscriminator(nn.Module):
    _KERNELS = (15, 41, 41, 41, 41, 41, 5)
    _STRIDES = (1, 2, 2, 4, 4, 1, 1)

    def __init__(self, channels=(128, 128, 256, 512, 1024, 1024, 1024), groups=(1, 4, 16, 16, 16, 16, 1)):
        super().__init__()
        layers = []
        c_in = 1
        for c, g, k, s in zip(channels, groups, self._KERNELS, self._STRIDES):
            g = math.gcd(math.gcd(g, c_in), c)
            layers.append(weight_norm(nn.Conv1d(c_in, c, k, s, groups=g, padding=(k - 1) // 2)))
            c_in = c
        self.convs = nn.ModuleList(layers)
        self.conv_post = weight_norm(nn.Conv1d(c_in, 1, 3, 1, padding=1))

    def forward(self, wave):
        x = wave.unsqueeze(1)
        fmaps = []
        for conv in self.convs:
            x = F.leaky_relu(conv(x), LRELU_SLOPE)
            fmaps.append(x)
        x = self.conv_post(x)
        fmaps.append(x)
        return torch.flatten(x, 1), fmaps


def pool_scales(wave, n_scales):
    """Inputs of the scale branches: raw, then repeated 2x average pooling."""
    out = [wave]
    for _ in range(n_scales - 1):
        out.append(F.avg_pool1d(out[-1].unsqueeze(1), 2, 2).squeeze(1))
    return out


class MultiScaleDiscriminator(nn.Module):
    def __init__(self, cfg=DiscriminatorConfig()):
        super().__init__()
        self.n_scales = cfg.msd_scales
        self.discriminators = nn.ModuleList(
            ScaleDiscriminator(cfg.msd_channels, cfg.msd_groups) for _ in range(cfg.msd_scales))

    def forward(self, wave):
        return [d(x) for d, x in zip(self.discriminators, pool_scales(wave, self.n_scales))]


def _as_batch(wave):
    w = torch.as_tensor(wave)
    return w.unsqueeze(0) if w.ndim == 1 else w


def discriminate_mpd(wave, mpd):
    """List of (logits, feature maps), one entry per period."""
    w = _as_batch(wave)
    if w.shape[-1] < max(mpd.periods):
        raise DataError("waveform shorter than the largest period")
    return mpd(w.to(next(mpd.parameters()).dtype))


def discriminate_msd(wave, msd):
    """List of (logits, feature maps), one entry per scale."""
    w = _as_batch(wave)
    if w.shape[-1] < 16:
        raise DataError("waveform shorter than 16 samples")
    return msd(w.to(next(msd.parameters()).dtype))
