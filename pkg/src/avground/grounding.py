"""Mask generation from grounding logit maps.

Two mask heads sit on top of the raw logit map:

* ``BinaryMaskHead`` — image-resolution stochastic binary masks.  A learned
  affine (w, b) rescales the logits, logistic noise is added, the result is
  squashed through a sigmoid at a fixed temperature, and the forward pass is
  hardened to exact {0, 1} with a straight-through gradient (the backward pass
  sees the relaxed sigmoid).  ``w`` is stored as log w so the positive-scale
  constraint holds by construction.
* ``soft_feature_mask`` — feature-resolution soft weights in (0, 1): the logit
  map is area-averaged down to the feature grid, min-max normalized, and
  soft-thresholded around a fixed center.

At inference time noise is dropped entirely and the head emits the
deterministic confidence map sigmoid(map + b / w); thresholding that map at
0.5 selects exactly the pixels where w * map + b >= 0, i.e. the noise-free
decision boundary of the training-time mask.
"""

from __future__ import annotations

import torch
from torch import nn

from .config import MaskConfig
from .encoders import DTYPE
from .errors import DegenerateParameterError, InputError


def logistic_noise(shape, gen: torch.Generator) -> torch.Tensor:
    """Sample logistic(0, 1) noise: the difference of two Gumbels."""
    u = torch.rand(*shape, generator=gen, dtype=DTYPE)
    u = u.clamp(torch.finfo(DTYPE).tiny, 1.0 - torch.finfo(DTYPE).eps)
    return torch.log(u) - torch.log1p(-u)


class BinaryMaskHead(nn.Module):
    """Learned affine + logistic noise + hard threshold with straight-through grads."""

    def __init__(self, cfg: MaskConfig):
        super().__init__()
        self.cfg = cfg
        self.log_w = nn.Parameter(torch.tensor(cfg.init_log_w, dtype=DTYPE))
        self.b = nn.Parameter(torch.tensor(cfg.init_b, dtype=DTYPE))

    @property
    def w(self) -> torch.Tensor:
        return torch.exp(self.log_w)

    def relaxed(self, logit_map: torch.Tensor, noise: torch.Tensor) -> torch.Tensor:
        """Differentiable surrogate mask in (0, 1)."""
        if noise.shape != logit_map.shape:
            raise InputError("noise shape must match the logit map")
        z = (self.w * logit_map + self.b + noise) / self.cfg.gumbel_temperature
        return torch.sigmoid(z)

    def forward(self, logit_map: torch.Tensor, noise: torch.Tensor, hard: bool = True) -> torch.Tensor:
        soft = self.relaxed(logit_map, noise)
        if not hard:
            return soft
        binary = (soft >= 0.5).to(soft.dtype)
        # (soft - soft.detach()) is exactly zero elementwise, so the forward stays
        # hard {0, 1}; grouping it first keeps binary + 0.0 free of rounding
        return binary + (soft - soft.detach())

    def confidence(self, logit_map: torch.Tensor) -> torch.Tensor:
        """Noise-free heatmap sigmoid(map + b / w); threshold 0.5 <=> w*map + b >= 0."""
        w = self.w
        if not torch.isfinite(w) or w <= 0:
            raise DegenerateParameterError(f"mask scale w must be finite and positive, got {w}")
        return torch.sigmoid(logit_map + self.b / w)


def soft_feature_mask(logit_map: torch.Tensor, grid_hw: tuple[int, int], cfg: MaskConfig) -> torch.Tensor:
    """Feature-grid soft mask: area-average pool, min-max normalize, soft-threshold.

    A constant map carries no contrast to normalize, so it maps to uniform 0.5.
    """
    h, w = grid_hw
    if logit_map.ndim != 2:
        raise InputError("logit map must be 2-D")
    height, width = logit_map.shape
    if height % h != 0 or width % w != 0:
        raise InputError(f"map {height}x{width} not divisible by feature grid {h}x{w}")
    pooled = logit_map.reshape(h, height // h, w, width // w).mean(dim=(1, 3))
    lo, hi = pooled.min(), pooled.max()
    if hi - lo <= 0:
        return torch.full_like(pooled, 0.5)
    norm = (pooled - lo) / (hi - lo)
    return torch.sigmoid((norm - cfg.soft_center) / cfg.soft_temperature)


def masked_pool(features: torch.Tensor, mask: torch.Tensor, epsilon: float) -> torch.Tensor:
    """Mask-weighted average of spatial features [d, h, w] -> [d]."""
    if features.ndim != 3:
        raise InputError("features must be [d, h, w]")
    if mask.shape != features.shape[1:]:
        raise InputError(f"mask {tuple(mask.shape)} must match feature grid {tuple(features.shape[1:])}")
    weighted = (features * mask).sum(dim=(1, 2))
    return weighted / (mask.sum() + epsilon)


def soft_feature_mask_pairs(maps: torch.Tensor, grid_hw: tuple[int, int],
                            cfg: MaskConfig) -> torch.Tensor:
    """Vectorized soft_feature_mask over pairwise maps [B, B, H, W] -> [B, B, h, w].

    Matches the single-map function elementwise (pinned by a property test);
    exists because per-pair Python loops dominate the training step otherwise.
    """
    h, w = grid_hw
    b1, b2, height, width = maps.shape
    if height % h != 0 or width % w != 0:
        raise InputError(f"map {height}x{width} not divisible by feature grid {h}x{w}")
    pooled = maps.reshape(b1, b2, h, height // h, w, width // w).mean(dim=(3, 5))
    lo = pooled.amin(dim=(2, 3), keepdim=True)
    hi = pooled.amax(dim=(2, 3), keepdim=True)
    degenerate = (hi - lo) <= 0
    safe = torch.where(degenerate, torch.ones_like(hi), hi - lo)
    norm = (pooled - lo) / safe
    soft = torch.sigmoid((norm - cfg.soft_center) / cfg.soft_temperature)
    return torch.where(degenerate, torch.full_like(soft, 0.5), soft)


def masked_pool_pairs(features: torch.Tensor, masks: torch.Tensor,
                      epsilon: float) -> torch.Tensor:
    """Vectorized masked_pool: features [B, d, h, w], masks [B, B, h, w] -> [B, B, d]."""
    if features.ndim != 4 or masks.ndim != 4:
        raise InputError("expected features [B, d, h, w] and masks [B, B, h, w]")
    weighted = torch.einsum("ijhw,idhw->ijd", masks, features)
    return weighted / (masks.sum(dim=(2, 3)).unsqueeze(-1) + epsilon)
