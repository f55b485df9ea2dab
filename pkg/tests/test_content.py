import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import central_difference
from vqanon.content import (Codebook, ContentEncoder, ContentEncoderConfig, encode_content,
                            end_codebook_epoch, nearest_codes, perplexity, quantize,
                            update_codebook_ema)
from vqanon.errors import DataError

SMALL = ContentEncoderConfig(channels=32)


def brute_argmin(z, codes):
    z, codes = z.double().numpy(), codes.double().numpy()
    out = []
    for row in z:
        best, arg = np.inf, -1
        for k, c in enumerate(codes):
            d = np.sum((row - c) ** 2)
            if d < best:
                best, arg = d, k
        out.append(arg)
    return np.array(out)


class TestEncoder:
    @pytest.mark.parametrize("T,expected", [(200, 100), (2, 1), (7, 4), (1, 1)])
    def test_halving(self, T, expected):
        enc = ContentEncoder(SMALL)
        assert encode_content(np.zeros((T, 80)), enc).shape == (expected, 256)

    def test_full_width_halving(self):
        enc = ContentEncoder()
        assert encode_content(np.zeros((200, 80)), enc).shape == (100, 256)

    def test_odd_padding_repeats_last_frame(self, rng):
        enc = ContentEncoder(SMALL).double()
        mel = rng.standard_normal((9, 80))
        padded = np.vstack([mel, mel[-1:]])
        torch.testing.assert_close(encode_content(mel, enc), encode_content(padded, enc), rtol=0, atol=0)

    def test_rejects_empty(self):
        with pytest.raises(DataError):
            encode_content(np.zeros((0, 80)), ContentEncoder(SMALL))

    def test_zero_input_finite_and_fd_gradient(self):
        enc = ContentEncoder().double()
        mel = torch.zeros(1, 8, 80, dtype=torch.float64)
        out = enc(mel)
        assert torch.isfinite(out).all()
        out.sum().backward()
        # zero input leaves the first weights without gradient; probe the bias and later layers
        assert torch.count_nonzero(enc.front[0].weight.grad) == 0
        for param, index in ((enc.front[0].bias, (11,)), (enc.post[1].weight, (4, 9, 2)),
                             (enc.proj.weight, (17, 3, 0))):
            fd = central_difference(lambda: enc(mel).sum(), param.data, index)
            assert param.grad[index].item() == pytest.approx(fd, rel=1e-3, abs=1e-9)

    def test_gradient_reaches_input(self):
        enc = ContentEncoder(SMALL).double()
        mel = torch.randn(1, 6, 80, dtype=torch.float64, requires_grad=True)
        enc(mel).pow(2).sum().backward()
        assert mel.grad.abs().sum() > 0


class TestQuantize:
    def test_exact_match(self):
        cb = Codebook(1024, 256, generator=torch.Generator().manual_seed(0))
        z = cb.codes[[7, 7, 500]].clone()
        q = quantize(z, cb)
        assert q.indices.tolist() == [7, 7, 500]
        assert q.commitment_loss.item() == 0.0
        assert q.codebook_loss.item() == 0.0

    def test_matches_bruteforce(self):
        g = torch.Generator().manual_seed(3)
        cb = Codebook(1024, 256, generator=g)
        z = torch.randn(64, 256, generator=g)
        q = quantize(z, cb)
        np.testing.assert_array_equal(q.indices.numpy(), brute_argmin(z, cb.codes))
        assert torch.equal(q.quantized, cb.codes[q.indices])

    def test_tie_goes_to_lower_index(self):
        cb = Codebook(4, 2)
        cb.codes.copy_(torch.tensor([[5.0, 5.0], [1.0, 0.0], [-1.0, 0.0], [9.0, 9.0]]))
        z = torch.zeros(3, 2)
        assert quantize(z, cb).indices.tolist() == [1, 1, 1]
        cb.codes[1] = torch.tensor([-1.0, 0.0])
        cb.codes[2] = torch.tensor([0.0, 1.0])
        assert quantize(z, cb).indices.tolist() == [1, 1, 1]

    def test_commitment_value(self):
        g = torch.Generator().manual_seed(1)
        cb = Codebook(16, 8, generator=g)
        z = torch.randn(10, 8, generator=g)
        q = quantize(z, cb)
        ref = ((z - cb.codes[q.indices]) ** 2).sum(1).mean()
        torch.testing.assert_close(q.commitment_loss, ref)

    def test_dim_mismatch(self):
        with pytest.raises(DataError, match="dim"):
            quantize(torch.zeros(3, 128), Codebook(1024, 256))

    def test_nonfinite_rejected(self):
        z = torch.zeros(2, 256)
        z[0, 0] = float("nan")
        with pytest.raises(DataError):
            quantize(z, Codebook(8, 256))

    def test_straight_through(self):
        g = torch.Generator().manual_seed(5)
        cb = Codebook(64, 16, generator=g)
        z = torch.randn(2, 5, 16, generator=g, dtype=torch.float64, requires_grad=True)
        cb.codes = cb.codes.double()
        q = quantize(z, cb)
        q.quantized.retain_grad()
        w = torch.randn(2, 5, 16, generator=g, dtype=torch.float64)
        (torch.sin(q.quantized) * w).sum().backward()
        assert torch.max(torch.abs(z.grad - q.quantized.grad)) <= 1e-6
        assert torch.equal(q.quantized.detach(), cb.codes[q.indices])

    def test_usage_counts_track_calls(self):
        g = torch.Generator().manual_seed(2)
        cb = Codebook(32, 4, generator=g)
        total = torch.zeros(32, dtype=torch.long)
        for _ in range(5):
            q = quantize(torch.randn(20, 4, generator=g), cb)
            total += torch.bincount(q.indices, minlength=32)
        assert torch.equal(cb.usage_counts, total)
        quantize(torch.randn(20, 4, generator=g), cb, track_usage=False)
        assert torch.equal(cb.usage_counts, total)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.integers(1, 50))
    def test_perplexity_bounds_and_lookup(self, seed, n):
        g = torch.Generator().manual_seed(seed)
        cb = Codebook(64, 8, generator=g)
        q = quantize(torch.randn(n, 8, generator=g), cb)
        assert 1.0 - 1e-9 <= q.perplexity <= 64 + 1e-9
        assert torch.equal(q.quantized - cb.codes[q.indices], torch.zeros(n, 8))


class TestPerplexity:
    def test_examples(self):
        assert perplexity(torch.full((50,), 3)) == pytest.approx(1.0)
        assert perplexity(torch.arange(1024)) == pytest.approx(1024.0)
        assert perplexity(torch.tensor([0, 0, 1, 1])) == pytest.approx(2.0)

    def test_empty(self):
        with pytest.raises(ValueError):
            perplexity(torch.tensor([], dtype=torch.long))


class TestEMA:
    def test_converges_to_latent_mean(self):
        g = torch.Generator().manual_seed(0)
        cb = Codebook(16, 8, generator=g)
        z = torch.randn(32, 8, generator=g)
        c0 = cb.codes[0].clone().double()
        idx = torch.zeros(32, dtype=torch.long)
        for _ in range(500):
            update_codebook_ema(cb, z, idx)
        assert torch.max(torch.abs(cb.codes[0] - z.mean(0))) < 1e-3
        # closed form of the recurrence from (size 1, sum c0)
        gn = 0.99 ** 500
        ref = (gn * c0 + (1 - gn) * 32 * z.double().mean(0)) / (gn + (1 - gn) * 32)
        assert torch.max(torch.abs(cb.codes[0].double() - ref)) < 1e-5

    def test_unit_decay_is_noop(self):
        g = torch.Generator().manual_seed(0)
        cb = Codebook(16, 8, generator=g)
        before = cb.codes.clone()
        update_codebook_ema(cb, torch.randn(10, 8, generator=g), torch.randint(0, 16, (10,), generator=g), decay=1.0)
        assert torch.allclose(cb.codes, before, rtol=0, atol=1e-12)

    def test_unused_codes_drift_small(self):
        g = torch.Generator().manual_seed(0)
        cb = Codebook(1024, 256, generator=g)
        z = torch.randn(64, 256, generator=g)
        for _ in range(20):
            before = cb.codes.clone()
            idx = torch.zeros(64, dtype=torch.long)
            update_codebook_ema(cb, z, idx)
            drift = torch.max(torch.abs(cb.codes[1:] - before[1:]))
            assert drift < 1e-6

    def test_dead_codes_reseeded(self):
        g = torch.Generator().manual_seed(0)
        cb = Codebook(8, 4, generator=g)
        latents = torch.randn(50, 4, generator=g)
        for epoch in range(3):
            cb.usage_counts.zero_()
            cb.usage_counts[0] = 5
            dead = end_codebook_epoch(cb, latents, patience=3, generator=g)
        assert sorted(dead.tolist()) == list(range(1, 8))
        for k in range(1, 8):
            assert any(torch.equal(cb.codes[k], row) for row in latents)
        assert int(cb.idle_epochs.max()) == 0

    def test_nearest_codes_float64(self):
        codes = torch.tensor([[0.0], [1e-8]])
        z = torch.tensor([[0.6e-8]])
        assert nearest_codes(z, codes).item() == 1
