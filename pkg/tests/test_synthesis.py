import numpy as np
import pytest
import torch
import torch.nn.functional as F
from hypothesis import given, settings
from hypothesis import strategies as st

from vqanon.content import ContentEncoderConfig
from vqanon.errors import DataError
from vqanon.model import VQAnonModel
from vqanon.synthesis import (DiscriminatorConfig, Generator, GeneratorConfig,
                              MultiPeriodDiscriminator, MultiScaleDiscriminator,
                              build_local_conditioning, discriminate_mpd, discriminate_msd,
                              fold_for_period, pool_scales, synthesize, upsample_content)

SMALL_GEN = GeneratorConfig(base_channels=32)
SMALL_DISC = DiscriminatorConfig().scaled(16)


@pytest.fixture(scope="module")
def small_gen():
    torch.manual_seed(0)
    return Generator(SMALL_GEN).eval()


class TestConfig:
    def test_full_scale_geometry(self):
        cfg = GeneratorConfig()
        assert cfg.upsample_factors == (10, 4, 4) and cfg.hop == 160
        assert cfg.upsample_kernels == (20, 8, 8)
        assert (cfg.global_cond_dim, cfg.local_cond_dim) == (192, 512)

    def test_kernel_rule(self):
        with pytest.raises(ValueError):
            GeneratorConfig(upsample_kernels=(20, 8, 9))

    def test_disc_periods_validated(self):
        with pytest.raises(ValueError):
            DiscriminatorConfig(mpd_periods=(3, 6))
        with pytest.raises(ValueError):
            DiscriminatorConfig(mpd_periods=(5, 3))


class TestUpsample:
    def test_repeat(self):
        zq = torch.tensor([[1.0, 10.0], [2.0, 20.0]])
        up = upsample_content(zq)
        assert up[:, 0].tolist() == [1, 1, 2, 2] and up[:, 1].tolist() == [10, 10, 20, 20]

    @settings(max_examples=25, deadline=None)
    @given(st.integers(1, 200))
    def test_avgpool_inverse(self, n):
        zq = torch.randn(n, 8, dtype=torch.float64)
        up = upsample_content(zq)
        assert up.shape[0] == 2 * n
        back = F.avg_pool1d(up.T[None], 2, 2)[0].T
        assert torch.equal(back, zq)


class TestSynthesize:
    @pytest.mark.parametrize("T", [2, 100])
    def test_length(self, small_gen, T):
        out = synthesize(torch.zeros(T // 2, 256), torch.zeros(T, 256), torch.zeros(192), small_gen)
        assert out.shape == (160 * T,)
        assert out.abs().max() < 1

    def test_full_width_second(self):
        torch.manual_seed(0)
        gen = Generator().eval()
        with torch.no_grad():
            out = synthesize(torch.randn(50, 256), torch.randn(100, 256), torch.randn(192), gen)
        assert out.shape == (16000,)

    @settings(max_examples=12, deadline=None)
    @given(st.integers(1, 250))
    def test_length_property(self, small_gen, half):
        T = 2 * half
        with torch.no_grad():
            out = synthesize(torch.randn(half, 256), torch.randn(T, 256), torch.randn(192), small_gen)
        assert out.shape == (160 * T,)

    def test_misaligned(self, small_gen):
        with pytest.raises(DataError, match="conditioning misaligned"):
            synthesize(torch.zeros(3, 256), torch.zeros(10, 256), torch.zeros(192), small_gen)

    def test_odd_prosody_trims_padded_content(self):
        local = build_local_conditioning(torch.zeros(1, 4, 256), torch.zeros(1, 7, 256))
        assert local.shape == (1, 512, 7)

    def test_nonfinite_speaker(self, small_gen):
        with pytest.raises(DataError):
            synthesize(torch.zeros(1, 256), torch.zeros(2, 256), torch.full((192,), float("nan")), small_gen)

    def test_global_conditioning_wired(self):
        torch.manual_seed(1)
        gen = Generator(SMALL_GEN).eval()
        zq, pro = torch.randn(5, 256), torch.randn(10, 256)
        a, b = torch.randn(192), torch.randn(192)
        with torch.no_grad():
            assert (synthesize(zq, pro, a, gen) - synthesize(zq, pro, b, gen)).abs().max() > 0
            gen.global_proj.weight.zero_()
            assert torch.equal(synthesize(zq, pro, a, gen), synthesize(zq, pro, b, gen))

    def test_deterministic_inference(self, small_gen):
        zq, pro, s = torch.randn(5, 256), torch.randn(10, 256), torch.randn(192)
        with torch.no_grad():
            assert torch.equal(synthesize(zq, pro, s, small_gen), synthesize(zq, pro, s, small_gen))

    def test_gradient_reaches_encoder_first_layer(self):
        model = VQAnonModel(ContentEncoderConfig(channels=32), generator_cfg=SMALL_GEN)
        mel = torch.randn(2, 8, 80)
        wave, _, _ = model(mel, torch.randn(2, 8, 2), torch.randn(2, 192))
        (wave ** 2).mean().backward()
        g = model.encoder.front[0].weight.grad
        assert g is not None and g.abs().sum() > 0


class TestDiscriminators:
    def test_fold_arithmetic(self):
        x = torch.arange(160.0)[None]
        f = fold_for_period(x, 3)
        assert f.shape == (1, 1, 54, 3)
        assert f[0, 0, -1].tolist() == [159.0, 0.0, 0.0]
        assert f[0, 0, 1].tolist() == [3.0, 4.0, 5.0]

    def test_mpd_branches(self):
        mpd = MultiPeriodDiscriminator(SMALL_DISC)
        assert mpd.periods == (3, 5, 7)
        outs = discriminate_mpd(torch.zeros(1600), mpd)
        assert len(outs) == 3
        for logits, fmaps in outs:
            assert torch.isfinite(logits).all()
            assert all(torch.isfinite(f).all() for f in fmaps)

    def test_full_width_default(self):
        mpd, msd = MultiPeriodDiscriminator(), MultiScaleDiscriminator()
        assert mpd.periods == (3, 5, 7) and len(msd.discriminators) == 3
        assert len(discriminate_msd(torch.zeros(320), msd)) == 3

    def test_msd_scales(self):
        msd = MultiScaleDiscriminator(SMALL_DISC)
        outs = discriminate_msd(torch.randn(2, 1003), msd)
        assert len(outs) == 3
        lens = [x.shape[-1] for x in pool_scales(torch.randn(2, 1003), 3)]
        assert lens == [1003, 501, 250]

    def test_pooling_preserves_constants(self):
        for x in pool_scales(torch.full((1, 640), 0.3), 3):
            assert torch.allclose(x, torch.full_like(x, 0.3))

    def test_too_short(self):
        with pytest.raises(DataError):
            discriminate_mpd(torch.zeros(5), MultiPeriodDiscriminator(SMALL_DISC))
        with pytest.raises(DataError):
            discriminate_msd(torch.zeros(15), MultiScaleDiscriminator(SMALL_DISC))

    def test_scaled_keeps_geometry(self):
        d = DiscriminatorConfig().scaled(16)
        assert d.mpd_periods == (3, 5, 7) and d.msd_scales == 3
        assert d.mpd_channels == (2, 8, 32, 64, 64)


def test_model_infer_length():
    model = VQAnonModel(ContentEncoderConfig(channels=32), generator_cfg=SMALL_GEN)
    rng = np.random.default_rng(0)
    for T in (7, 20):
        out = model.infer(rng.standard_normal((T, 80)), rng.standard_normal(T), rng.uniform(0.5, 2, T),
                          rng.standard_normal(192))
        assert out.shape == (160 * T,) and out.dtype == np.float64
    assert model.training
