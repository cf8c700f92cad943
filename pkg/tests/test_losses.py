"""Contrastive loss and area regularizer: closed forms, hand cases, invariances."""

import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from avground.config import LossConfig
from avground.errors import InputError
from avground.losses import (
    area_regularizer,
    cosine_similarity_matrix,
    symmetric_contrastive,
    total_loss,
)

from .oracles import ref_area_reg, ref_cosine_matrix, ref_symmetric_infonce


def t64(data):
    return torch.tensor(data, dtype=torch.float64)


class TestSymmetricContrastive:
    @pytest.mark.parametrize("b", [2, 4, 8])
    def test_uniform_matrix_gives_log_b(self, b):
        s = torch.full((b, b), 0.3, dtype=torch.float64)
        assert abs(float(symmetric_contrastive(s, 0.07)) - math.log(b)) < 1e-9

    def test_saturated_diagonal_vanishes(self):
        s = 40.0 * torch.eye(2, dtype=torch.float64)
        assert float(symmetric_contrastive(s, 1.0)) < 1e-9

    def test_hand_case_5_0(self):
        s = t64([[5.0, 0.0], [0.0, 5.0]])
        expected = -math.log(math.exp(5) / (math.exp(5) + 1))
        assert abs(float(symmetric_contrastive(s, 1.0)) - expected) < 1e-7

    def test_shift_invariance(self):
        gen = torch.Generator().manual_seed(3)
        s = torch.randn(5, 5, generator=gen, dtype=torch.float64)
        base = float(symmetric_contrastive(s, 0.07))
        shifted = float(symmetric_contrastive(s + 17.3, 0.07))
        assert abs(base - shifted) < 1e-9

    def test_joint_permutation_invariance(self):
        gen = torch.Generator().manual_seed(4)
        s = torch.randn(6, 6, generator=gen, dtype=torch.float64)
        perm = torch.randperm(6, generator=gen)
        base = float(symmetric_contrastive(s, 0.07))
        permuted = float(symmetric_contrastive(s[perm][:, perm], 0.07))
        assert abs(base - permuted) < 1e-9

    def test_matches_reference_on_random_matrices(self):
        gen = torch.Generator().manual_seed(5)
        for _ in range(10):
            s = torch.randn(4, 4, generator=gen, dtype=torch.float64)
            ours = float(symmetric_contrastive(s, 0.07))
            ref = ref_symmetric_infonce(s.numpy(), 0.07)
            assert abs(ours - ref) < 1e-9

    @given(st.integers(min_value=2, max_value=7), st.integers(min_value=0, max_value=10**6))
    @settings(max_examples=30, deadline=None)
    def test_nonnegative_and_constant_floor(self, b, seed):
        gen = torch.Generator().manual_seed(seed)
        s = torch.randn(b, b, generator=gen, dtype=torch.float64)
        assert float(symmetric_contrastive(s, 0.07)) >= -1e-12

    def test_rejects_tiny_batch_and_bad_tau(self):
        with pytest.raises(InputError):
            symmetric_contrastive(torch.ones(1, 1, dtype=torch.float64), 0.07)
        with pytest.raises(InputError):
            symmetric_contrastive(torch.ones(2, 2, dtype=torch.float64), 0.0)
        with pytest.raises(InputError):
            symmetric_contrastive(torch.ones(2, 3, dtype=torch.float64), 0.07)


class TestCosineSimilarityMatrix:
    def test_matches_reference(self):
        gen = torch.Generator().manual_seed(6)
        a = torch.randn(4, 8, generator=gen, dtype=torch.float64)
        b = torch.randn(4, 8, generator=gen, dtype=torch.float64)
        ours = cosine_similarity_matrix(a, b).numpy()
        assert np.allclose(ours, ref_cosine_matrix(a.numpy(), b.numpy()), atol=1e-9)

    def test_bounded_by_one(self):
        gen = torch.Generator().manual_seed(7)
        a = torch.randn(6, 5, generator=gen, dtype=torch.float64) * 100
        s = cosine_similarity_matrix(a, a)
        assert float(s.abs().max()) <= 1.0 + 1e-12
        assert torch.allclose(torch.diagonal(s), torch.ones(6, dtype=torch.float64))

    def test_rejects_mismatched_shapes(self):
        with pytest.raises(InputError):
            cosine_similarity_matrix(
                torch.ones(2, 3, dtype=torch.float64), torch.ones(3, 3, dtype=torch.float64)
            )


class TestAreaRegularizer:
    def cfg(self):
        return LossConfig()

    def test_matched_priors_give_zero(self):
        masks = torch.zeros(3, 3, 10, 10, dtype=torch.float64)
        for i in range(3):
            masks[i, i, :4, :] = 1.0  # 40 of 100 pixels on
        assert abs(float(area_regularizer(masks, self.cfg()))) < 1e-12

    def test_single_all_ones_mask(self):
        masks = torch.ones(1, 1, 4, 4, dtype=torch.float64)
        assert abs(float(area_regularizer(masks, self.cfg())) - 0.6) < 1e-12

    def test_hand_case_b2(self):
        # positive means {0.5, 0.3}, negative means {0.1, 0.2} -> 0.1+0.1+0.1+0.2 = 0.5
        masks = torch.zeros(2, 2, 1, 10, dtype=torch.float64)
        masks[0, 0, 0, :5] = 1.0
        masks[1, 1, 0, :3] = 1.0
        masks[0, 1, 0, :1] = 1.0
        masks[1, 0, 0, :2] = 1.0
        assert abs(float(area_regularizer(masks, self.cfg())) - 0.5) < 1e-12

    def test_matches_reference_on_random_masks(self):
        gen = torch.Generator().manual_seed(8)
        masks = torch.rand(4, 4, 6, 6, generator=gen, dtype=torch.float64)
        ours = float(area_regularizer(masks, self.cfg()))
        assert abs(ours - ref_area_reg(masks.numpy(), 0.4, 0.0)) < 1e-9

    def test_rejects_non_square_pair_grid(self):
        with pytest.raises(InputError):
            area_regularizer(torch.zeros(2, 3, 4, 4, dtype=torch.float64), self.cfg())


class TestTotalLoss:
    def terms(self):
        return {
            "acl_i": torch.tensor(1.5, dtype=torch.float64),
            "acl_f": torch.tensor(2.5, dtype=torch.float64),
            "reg": torch.tensor(4.0, dtype=torch.float64),
            "acl_c": torch.tensor(0.5, dtype=torch.float64),
        }

    def test_all_weights_zero_gives_zero(self):
        cfg = LossConfig(lambda_acl_i=0.0, lambda_acl_f=0.0, lambda_reg=0.0)
        assert float(total_loss(self.terms(), cfg)) == 0.0

    def test_default_sum(self):
        assert abs(float(total_loss(self.terms(), LossConfig())) - 8.0) < 1e-12

    def test_caption_term_is_additive(self):
        base = float(total_loss(self.terms(), LossConfig()))
        full = float(total_loss(self.terms(), LossConfig(), include_caption=True))
        assert abs(full - base - 0.5) < 1e-12

    def test_disabled_terms_are_skipped(self):
        cfg = LossConfig(use_acl_i=False, use_reg=False)
        assert abs(float(total_loss(self.terms(), cfg)) - 2.5) < 1e-12

    def test_missing_enabled_term_raises(self):
        with pytest.raises(InputError):
            total_loss({"acl_i": torch.tensor(1.0, dtype=torch.float64)}, LossConfig())
