"""Frozen encoder bank: shapes, determinism, spectra, grounding geometry."""

import numpy as np
import pytest
import torch

from avground.config import EncoderConfig
from avground.encoders import DTYPE, ToyEncoderBank, build_encoders, upsample_bilinear
from avground.errors import InputError

from .oracles import central_difference


@pytest.fixture(scope="module")
def bank():
    return ToyEncoderBank(EncoderConfig())


class TestConstructionAndFingerprint:
    def test_same_seed_same_fingerprint(self):
        cfg = EncoderConfig()
        assert ToyEncoderBank(cfg).fingerprint() == ToyEncoderBank(cfg).fingerprint()

    def test_seed_changes_fingerprint(self):
        a, b = EncoderConfig(), EncoderConfig()
        b.seed = a.seed + 1
        assert ToyEncoderBank(a).fingerprint() != ToyEncoderBank(b).fingerprint()

    def test_registry_unknown_kind(self):
        cfg = EncoderConfig()
        cfg.kind = "resnet"
        with pytest.raises(InputError):
            build_encoders(cfg)

    def test_parameters_are_float64(self, bank):
        for tensor in bank.parameter_tensors().values():
            assert tensor.dtype == DTYPE


class TestImageEncoder:
    def test_shapes_single_and_batched(self, bank):
        image = torch.rand(3, 96, 96, dtype=DTYPE)
        side = 96 // bank.cfg.patch
        glob, spatial = bank.encode_image(image)
        assert glob.shape == (bank.cfg.d,) and spatial.shape == (bank.cfg.d, side, side)
        globs, spatials = bank.encode_image(image.expand(2, -1, -1, -1))
        assert globs.shape == (2, bank.cfg.d) and spatials.shape == (2, bank.cfg.d, side, side)
        assert torch.equal(globs[0], glob) and torch.equal(spatials[1], spatial)

    def test_global_is_cell_mean(self, bank):
        image = torch.rand(3, 96, 96, dtype=DTYPE)
        glob, spatial = bank.encode_image(image)
        assert torch.allclose(glob, spatial.mean(dim=(-2, -1)), atol=1e-12)

    def test_mid_gray_patch_maps_to_zero_feature(self, bank):
        from avground.encoders import center_image

        image = center_image(torch.full((3, 96, 96), 0.5))
        _, spatial = bank.encode_image(image)
        assert float(spatial.abs().max()) == 0.0

    def test_content_cells_outweigh_background_cells(self, bank):
        from avground.encoders import center_image

        pa = bank.cfg.patch
        image = torch.full((3, 96, 96), 128.0 / 255.0)
        image[0, 2 * pa:4 * pa, 2 * pa:4 * pa] = 0.9  # one colored patch-aligned block
        image[1, 2 * pa:4 * pa, 2 * pa:4 * pa] = 0.1
        _, spatial = bank.encode_image(center_image(image))
        norms = spatial.norm(dim=0)
        content = norms[2:4, 2:4]
        background = norms.clone()
        background[2:4, 2:4] = 0.0
        assert float(content.min()) > 10 * float(background.max())

    def test_masking_centered_image_erases_toward_background(self, bank):
        from avground.encoders import center_image

        pa = bank.cfg.patch
        image = torch.full((3, 96, 96), 128.0 / 255.0)
        image[0, 2 * pa:4 * pa, 2 * pa:4 * pa] = 0.9
        centered = center_image(image)
        mask = torch.ones(96, 96, dtype=DTYPE)
        mask[2 * pa:4 * pa, 2 * pa:4 * pa] = 0.0
        _, spatial = bank.encode_image(centered * mask)
        # masked-out block reads as empty, not as a dark object
        assert float(spatial.norm(dim=0)[2:4, 2:4].max()) < 1e-12

    def test_patch_locality(self, bank):
        image = torch.rand(3, 96, 96, dtype=DTYPE)
        _, before = bank.encode_image(image)
        image2 = image.clone()
        image2[:, :bank.cfg.patch, :bank.cfg.patch] = 0.0  # only cell (0, 0) sees this
        _, after = bank.encode_image(image2)
        changed = (before != after).any(dim=0)
        assert changed[0, 0] and changed.sum() == 1

    def test_input_validation(self, bank):
        with pytest.raises(InputError):
            bank.spatial_features(torch.rand(1, 96, 96, dtype=DTYPE))
        with pytest.raises(InputError):
            bank.spatial_features(torch.rand(3, 90, 96, dtype=DTYPE))
        bad = torch.rand(3, 96, 96, dtype=DTYPE)
        bad[0, 0, 0] = float("nan")
        with pytest.raises(InputError):
            bank.spatial_features(bad)


class TestSpectrogram:
    def test_pure_tone_peaks_at_its_bin(self, bank):
        rate, f0 = 16000, 2000.0
        t = torch.arange(rate, dtype=DTYPE) / rate
        samples = torch.sin(2 * torch.pi * f0 * t)
        spec = bank.compute_spectrogram(samples)
        assert spec.shape[0] == bank.cfg.f_bins
        freqs = np.fft.rfftfreq(bank.cfg.n_fft, 1.0 / rate)
        peak_bin = int(spec.mean(dim=1).argmax())
        assert abs(freqs[peak_bin] - f0) <= rate / bank.cfg.n_fft

    def test_frame_count_matches_hop(self, bank):
        samples = torch.rand(16000, dtype=DTYPE)
        spec = bank.compute_spectrogram(samples)
        assert spec.shape[1] == 16000 // bank.cfg.hop + 1  # centered STFT

    def test_magnitude_nonnegative(self, bank):
        spec = bank.compute_spectrogram(torch.randn(4000, dtype=DTYPE))
        assert float(spec.min()) >= 0.0

    def test_validation(self, bank):
        with pytest.raises(InputError):
            bank.compute_spectrogram(torch.rand(2, 100, dtype=DTYPE))
        with pytest.raises(InputError):
            bank.compute_spectrogram(torch.rand(bank.cfg.n_fft - 1, dtype=DTYPE))
        bad = torch.rand(4000, dtype=DTYPE)
        bad[7] = float("inf")
        with pytest.raises(InputError):
            bank.compute_spectrogram(bad)


class TestAudioFrames:
    def test_framewise_rows_are_independent(self, bank):
        spec = torch.rand(bank.cfg.f_bins, 10, dtype=DTYPE)
        frames = bank.encode_audio_frames(spec)
        assert frames.shape == (10, bank.cfg.d_a)
        perm = torch.randperm(10)
        assert torch.equal(bank.encode_audio_frames(spec[:, perm]), frames[perm])

    def test_bin_count_checked(self, bank):
        with pytest.raises(InputError):
            bank.encode_audio_frames(torch.rand(7, 10, dtype=DTYPE))


class TestTextEncoder:
    def test_shape_and_determinism(self, bank):
        tokens = torch.rand(3, bank.cfg.d_tok, dtype=DTYPE)
        out = bank.encode_text_tokens(tokens)
        assert out.shape == (bank.cfg.d,)
        assert torch.equal(out, bank.encode_text_tokens(tokens))

    def test_position_table_breaks_order_invariance(self, bank):
        tokens = torch.rand(2, bank.cfg.d_tok, dtype=DTYPE)
        assert not torch.equal(bank.encode_text_tokens(tokens), bank.encode_text_tokens(tokens.flip(0)))

    def test_differentiable_wrt_tokens(self, bank):
        tokens = torch.rand(2, bank.cfg.d_tok, dtype=DTYPE, requires_grad=True)
        bank.encode_text_tokens(tokens).sum().backward()
        assert tokens.grad is not None and float(tokens.grad.abs().sum()) > 0

    def test_length_limits(self, bank):
        with pytest.raises(InputError):
            bank.encode_text_tokens(torch.rand(0, bank.cfg.d_tok, dtype=DTYPE))
        with pytest.raises(InputError):
            bank.encode_text_tokens(torch.rand(bank.cfg.max_tokens + 1, bank.cfg.d_tok, dtype=DTYPE))
        with pytest.raises(InputError):
            bank.encode_text_tokens(torch.rand(2, bank.cfg.d_tok + 1, dtype=DTYPE))


class TestGrounding:
    def test_linear_in_condition(self, bank):
        spatial = torch.rand(bank.cfg.d, 4, 4, dtype=DTYPE)
        u = torch.rand(bank.cfg.d, dtype=DTYPE)
        # unit conditions make normalization a no-op, exposing the linear core
        u = u / u.norm()
        v = torch.rand(bank.cfg.d, dtype=DTYPE)
        v = v - (v @ u) * u
        v = v / v.norm()
        mix = (u + v) / torch.tensor(2.0, dtype=DTYPE).sqrt()
        lhs = bank.ground_cells(spatial, mix)
        rhs = (bank.ground_cells(spatial, u) + bank.ground_cells(spatial, v)) / (2 ** 0.5)
        assert torch.allclose(lhs, rhs, atol=1e-9)

    def test_condition_scale_invariance(self, bank):
        spatial = torch.rand(bank.cfg.d, 3, 3, dtype=DTYPE)
        cond = torch.rand(bank.cfg.d, dtype=DTYPE)
        a = bank.ground_cells(spatial, cond)
        b = bank.ground_cells(spatial, 7.5 * cond)
        assert torch.allclose(a, b, atol=1e-9)

    def test_cell_magnitude_saturates_not_scales(self, bank):
        direction = torch.rand(bank.cfg.d, dtype=DTYPE)
        direction = direction / direction.norm()
        floor = bank.cfg.norm_floor
        for scale in (0.01, 0.5, 2.0, 50.0):
            spatial = (scale * direction).reshape(-1, 1, 1)
            logit = float(bank.ground_cells(spatial, direction)[0, 0])
            assert logit == pytest.approx(bank.cfg.logit_gain * scale / (scale + floor), abs=1e-9)
        # near-empty cells stay near zero even at perfect alignment
        tiny = (0.01 * direction).reshape(-1, 1, 1)
        assert abs(float(bank.ground_cells(tiny, direction)[0, 0])) < 0.1 * bank.cfg.logit_gain

    def test_full_map_is_upsampled_cells(self, bank):
        spatial = torch.rand(bank.cfg.d, 3, 3, dtype=DTYPE)
        cond = torch.rand(bank.cfg.d, dtype=DTYPE)
        full = bank.ground(spatial, cond)
        assert full.shape == (3 * bank.cfg.patch, 3 * bank.cfg.patch)
        cells = bank.ground_cells(spatial, cond)
        assert torch.allclose(full, upsample_bilinear(cells, bank.cfg.patch), atol=1e-12)

    def test_shape_validation(self, bank):
        with pytest.raises(InputError):
            bank.ground_cells(torch.rand(bank.cfg.d + 1, 2, 2, dtype=DTYPE), torch.rand(bank.cfg.d, dtype=DTYPE))
        with pytest.raises(InputError):
            bank.ground_cells(torch.rand(bank.cfg.d, 2, 2, dtype=DTYPE), torch.rand(3, dtype=DTYPE))


class TestUpsample:
    def test_constant_map_stays_constant(self):
        cells = torch.full((2, 2), 3.25, dtype=DTYPE)
        up = upsample_bilinear(cells, 8)
        assert up.shape == (16, 16)
        assert torch.allclose(up, torch.full((16, 16), 3.25, dtype=DTYPE), atol=1e-12)

    def test_preserves_mean(self):
        cells = torch.rand(4, 4, dtype=DTYPE)
        up = upsample_bilinear(cells, 16)
        assert float(up.mean()) == pytest.approx(float(cells.mean()), abs=1e-6)

    def test_range_bounded_by_input(self):
        cells = torch.rand(5, 5, dtype=DTYPE)
        up = upsample_bilinear(cells, 4)
        assert float(up.max()) <= float(cells.max()) + 1e-12
        assert float(up.min()) >= float(cells.min()) - 1e-12

    def test_batched_matches_per_map(self):
        cells = torch.rand(3, 4, 4, dtype=DTYPE)
        batched = upsample_bilinear(cells, 4)
        for i in range(3):
            assert torch.equal(batched[i], upsample_bilinear(cells[i], 4))


class TestFiniteDifferenceSanity:
    def test_text_encoder_gradient_matches_central_difference(self, bank):
        tokens = torch.rand(2, bank.cfg.d_tok, dtype=DTYPE, requires_grad=True)
        probe = torch.rand(bank.cfg.d, dtype=DTYPE)
        (bank.encode_text_tokens(tokens) @ probe).backward()
        leaf = tokens.detach()
        [numeric] = central_difference(
            lambda: bank.encode_text_tokens(leaf) @ probe, [leaf], eps=1e-6
        )
        assert torch.allclose(tokens.grad, numeric, rtol=1e-6, atol=1e-8)
