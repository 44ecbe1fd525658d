"""Tests for the elevated-view attention stream.

The resampling oracle is a hand-rolled numpy bilinear sampler implementing
the same half-pixel coordinate convention, written independently of the
library code.
"""

import numpy as np
import pytest
import torch

from skyreid.eva import (
    EVAStream,
    HeadAggregator,
    HeadLocalizer,
    PartitionAttention,
    fuse,
    fusion_weights,
    sample_region,
    split_strips,
)

PRIOR = (1.0, 0.33, 0.0, -0.67)


def oracle_bilinear_affine(src, s_x, s_y, t_x, t_y, out_h, out_w):
    """Reference affine crop-and-resample with border clamping.

    Output pixel centers at (2k+1)/n - 1 in normalized coordinates map
    through (s*coord + t) into the source, then bilinear-interpolate.
    """
    c, in_h, in_w = src.shape
    out = np.zeros((c, out_h, out_w))
    for oy in range(out_h):
        for ox in range(out_w):
            x_n = (2 * ox + 1) / out_w - 1.0
            y_n = (2 * oy + 1) / out_h - 1.0
            x_s = s_x * x_n + t_x
            y_s = s_y * y_n + t_y
            u = ((x_s + 1.0) * in_w - 1.0) / 2.0
            v = ((y_s + 1.0) * in_h - 1.0) / 2.0
            u0, v0 = int(np.floor(u)), int(np.floor(v))
            fu, fv = u - u0, v - v0
            u0c, u1c = np.clip([u0, u0 + 1], 0, in_w - 1)
            v0c, v1c = np.clip([v0, v0 + 1], 0, in_h - 1)
            out[:, oy, ox] = (
                src[:, v0c, u0c] * (1 - fv) * (1 - fu)
                + src[:, v0c, u1c] * (1 - fv) * fu
                + src[:, v1c, u0c] * fv * (1 - fu)
                + src[:, v1c, u1c] * fv * fu
            )
    return out


class TestHeadLocalizer:
    def test_fresh_localizer_emits_the_prior(self):
        torch.manual_seed(0)
        loc = HeadLocalizer(channels=16, prior=PRIOR)
        x = torch.randn(3, 16, 8, 4)
        params = loc(x)
        expected = torch.tensor(PRIOR).repeat(3, 1)
        assert torch.allclose(params, expected, atol=1e-7)

    def test_outputs_always_form_a_valid_window(self):
        torch.manual_seed(1)
        loc = HeadLocalizer(channels=8, prior=PRIOR)
        # blow up the regressor so raw deltas are far out of range
        with torch.no_grad():
            for p in loc.parameters():
                p.add_(torch.randn_like(p) * 50.0)
        params = loc(torch.randn(64, 8, 6, 6))
        s = params[:, :2]
        t = params[:, 2:]
        assert (s > 0).all() and (s <= 1.0 + 1e-6).all()
        assert (t.abs() + s <= 1.0 + 1e-5).all()

    def test_perturbed_localizer_varies_with_input(self):
        torch.manual_seed(2)
        loc = HeadLocalizer(channels=8, prior=PRIOR)
        with torch.no_grad():
            for p in loc.parameters():
                p.add_(torch.randn_like(p) * 0.5)
        params = loc(torch.randn(8, 8, 6, 6))
        assert params.std(dim=0).max() > 1e-4


class TestSampleRegion:
    def test_identity_transform_reproduces_input(self):
        torch.manual_seed(3)
        x = torch.rand(2, 4, 8, 6, dtype=torch.float64)
        params = torch.tensor([[1.0, 1.0, 0.0, 0.0]] * 2, dtype=torch.float64)
        out = sample_region(x, params, out_shape=(8, 6))
        assert torch.allclose(out, x, atol=1e-6)

    def test_center_crop_matches_oracle(self):
        torch.manual_seed(4)
        x = torch.rand(1, 3, 8, 8, dtype=torch.float64)
        params = torch.tensor([[0.5, 0.5, 0.0, 0.0]], dtype=torch.float64)
        out = sample_region(x, params, out_shape=(6, 6))
        ref = oracle_bilinear_affine(x[0].numpy(), 0.5, 0.5, 0.0, 0.0, 6, 6)
        assert np.allclose(out[0].numpy(), ref, atol=1e-9)

    def test_head_window_matches_oracle(self):
        torch.manual_seed(5)
        x = torch.rand(1, 2, 12, 6, dtype=torch.float64)
        s_x, s_y, t_x, t_y = 1.0, 0.33, 0.0, -0.67
        params = torch.tensor([[s_x, s_y, t_x, t_y]], dtype=torch.float64)
        out = sample_region(x, params, out_shape=(4, 6))
        ref = oracle_bilinear_affine(x[0].numpy(), s_x, s_y, t_x, t_y, 4, 6)
        assert np.allclose(out[0].numpy(), ref, atol=1e-9)

    def test_gradient_wrt_translation_matches_fd(self):
        torch.manual_seed(6)
        x = torch.rand(1, 2, 8, 8, dtype=torch.float64)

        def sample_sum(tx):
            params = torch.stack(
                [
                    torch.tensor(0.5, dtype=torch.float64),
                    torch.tensor(0.5, dtype=torch.float64),
                    tx if isinstance(tx, torch.Tensor) else torch.tensor(tx, dtype=torch.float64),
                    torch.tensor(0.1, dtype=torch.float64),
                ]
            ).unsqueeze(0)
            weights = torch.linspace(0.5, 1.5, 2 * 4 * 4, dtype=torch.float64).reshape(1, 2, 4, 4)
            return (sample_region(x, params, out_shape=(4, 4)) * weights).sum()

        tx = torch.tensor(0.12, dtype=torch.float64, requires_grad=True)
        (g,) = torch.autograd.grad(sample_sum(tx), tx)
        eps = 1e-6
        fd = (float(sample_sum(0.12 + eps)) - float(sample_sum(0.12 - eps))) / (2 * eps)
        assert float(g) == pytest.approx(fd, rel=1e-4)


class TestSplitStrips:
    def test_even_height_splits_equally(self):
        x = torch.arange(6.0).reshape(1, 1, 6, 1)
        strips = split_strips(x)
        assert [s.shape[2] for s in strips] == [2, 2, 2]
        assert strips[0][0, 0, :, 0].tolist() == [0.0, 1.0]
        assert strips[2][0, 0, :, 0].tolist() == [4.0, 5.0]

    def test_uneven_height_pads_by_replicating_last_row(self):
        x = torch.arange(7.0).reshape(1, 1, 7, 1)
        strips = split_strips(x)
        assert [s.shape[2] for s in strips] == [3, 3, 3]
        # padded rows repeat the last original row (value 6)
        assert strips[2][0, 0, :, 0].tolist() == [6.0, 6.0, 6.0]

    def test_too_short_rejected(self):
        with pytest.raises(ValueError):
            split_strips(torch.ones(1, 1, 2, 4))


class TestPartitionAttention:
    def test_zero_input_stays_zero(self):
        torch.manual_seed(7)
        att = PartitionAttention(channels=8, reduction=4)
        outs = att(torch.zeros(2, 8, 6, 4))
        for a in outs:
            assert torch.allclose(a, torch.zeros_like(a))

    def test_zeroed_weights_scale_by_one_and_a_half(self):
        att = PartitionAttention(channels=8, reduction=4)
        with torch.no_grad():
            for p in att.parameters():
                p.zero_()
        x = torch.randn(2, 8, 6, 4, generator=torch.Generator().manual_seed(8))
        outs = att(x)
        strips = split_strips(x)
        for a, s in zip(outs, strips):
            assert torch.allclose(a, 1.5 * s, atol=1e-7)

    def test_gate_bounds_and_sign_preservation(self):
        torch.manual_seed(9)
        att = PartitionAttention(channels=8, reduction=4)
        x = torch.randn(3, 8, 6, 4)
        outs = att(x)
        strips = split_strips(x)
        for a, s in zip(outs, strips):
            assert (torch.sign(a) == torch.sign(s)).all()
            assert (a.abs() >= s.abs() - 1e-7).all()
            assert (a.abs() <= 2.0 * s.abs() + 1e-7).all()


class TestHeadAggregator:
    def test_constant_strips_give_channel_means(self):
        torch.manual_seed(10)
        agg = HeadAggregator(channels=8)
        means = torch.rand(2, 8)
        strips = [means[:, :, None, None].expand(2, 8, 2, 4).clone() for _ in range(3)]
        f_h, f_e = agg(strips)
        assert f_h.shape == (2, 24)
        assert f_e.shape == (2, 2)
        for i in range(3):
            assert torch.allclose(f_h[:, 8 * i : 8 * (i + 1)], means, atol=1e-6)

    def test_single_hot_location_dominates(self):
        torch.manual_seed(11)
        agg = HeadAggregator(channels=8)
        v = torch.full((8,), 30.0 / 8)
        strip = torch.zeros(1, 8, 3, 4)
        strip[0, :, 1, 2] = v
        strips = [strip, strip.clone(), strip.clone()]
        f_h, _ = agg(strips)
        for i in range(3):
            assert torch.allclose(f_h[0, 8 * i : 8 * (i + 1)], v, atol=1e-6)

    def test_length_is_three_c(self):
        for c in (8, 16):
            agg = HeadAggregator(channels=c)
            strips = [torch.rand(4, c, 2, 3) for _ in range(3)]
            f_h, f_e = agg(strips)
            assert f_h.shape == (4, 3 * c)
            assert f_e.shape == (4, 2)


class TestFuse:
    def test_saturated_logits_zero_the_head_half(self):
        torch.manual_seed(12)
        f_t = torch.rand(2, 6) + 0.5
        f_h = torch.rand(2, 9) + 0.5
        f_e = torch.tensor([[20.0, -20.0]] * 2)
        f = fuse(f_t, f_h, f_e)
        assert f.shape == (2, 15)
        assert f[:, 6:].abs().max() < 1e-6
        assert torch.allclose(f.norm(dim=1), torch.ones(2), atol=1e-6)

    def test_zero_logits_weigh_halves_equally(self):
        w = fusion_weights(torch.zeros(3, 2))
        assert torch.allclose(w, torch.full((3, 2), 0.5))

    def test_weights_always_simplex(self):
        torch.manual_seed(13)
        w = fusion_weights(torch.randn(100, 2) * 10)
        assert torch.allclose(w.sum(dim=1), torch.ones(100), atol=1e-6)
        assert (w >= 0).all() and (w <= 1).all()

    def test_output_is_unit_norm_concat(self):
        torch.manual_seed(14)
        f_t = torch.rand(4, 5)
        f_h = torch.rand(4, 7)
        f_e = torch.randn(4, 2)
        f = fuse(f_t, f_h, f_e)
        assert f.shape == (4, 12)
        assert torch.allclose(f.norm(dim=1), torch.ones(4), atol=1e-6)
        w = fusion_weights(f_e)
        raw = torch.cat([f_t * w[:, :1], f_h * w[:, 1:]], dim=1)
        assert torch.allclose(f, raw / raw.norm(dim=1, keepdim=True), atol=1e-6)

    def test_dimension_bookkeeping(self):
        with pytest.raises(ValueError):
            fuse(torch.rand(2, 3), torch.rand(3, 4), torch.zeros(2, 2))


class TestEVAStream:
    def test_forward_shapes_and_gradients(self):
        torch.manual_seed(15)
        eva = EVAStream(channels=16, head_grid=(6, 4))
        fmap = torch.rand(3, 16, 8, 4, requires_grad=True)
        out = eva(fmap)
        assert out["f_h"].shape == (3, 48)
        assert out["f_e"].shape == (3, 2)
        assert out["params"].shape == (3, 4)
        assert out["head_map"].shape == (3, 16, 6, 4)
        (out["f_h"].sum() + out["f_e"].sum()).backward()
        assert fmap.grad is not None
        assert torch.isfinite(fmap.grad).all()

    def test_fresh_stream_crops_the_prior_window(self):
        torch.manual_seed(16)
        eva = EVAStream(channels=8, head_grid=(3, 4))
        fmap = torch.rand(2, 8, 9, 4)
        out = eva(fmap)
        expected = sample_region(fmap, torch.tensor(PRIOR).repeat(2, 1), out_shape=(3, 4))
        assert torch.allclose(out["head_map"], expected, atol=1e-6)
