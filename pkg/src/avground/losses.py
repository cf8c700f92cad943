"""Contrastive and regularization losses.

The same symmetric cross-entropy objective is applied to three similarity
matrices built from different views of the batch:

* image-level:   masked-image global embeddings vs audio embeddings
* feature-level: soft-mask-pooled spatial features vs audio embeddings
* caption-level: audio embeddings vs embeddings of text derived from captions

Rows and columns of each B x B cosine-similarity matrix are softmaxed at a
shared temperature; the loss is the mean negative log-likelihood of the
diagonal, averaged over both directions.  For a constant matrix this equals
log B exactly, and it is invariant to adding a constant to every entry.

The area term pulls the mean of each positive-pair relaxed mask toward a
target on-fraction and the mean of each negative-pair relaxed mask toward a
(typically zero) off-fraction, with plain absolute differences and no
normalization by the number of pairs.
"""

from __future__ import annotations

import torch

from .config import LossConfig
from .errors import InputError


def cosine_similarity_matrix(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Pairwise cosine similarities between rows of a [B, d] and b [B, d]."""
    if a.ndim != 2 or b.ndim != 2 or a.shape != b.shape:
        raise InputError("similarity inputs must be equal-shape [B, d] matrices")
    a_n = torch.nn.functional.normalize(a, dim=1, eps=1e-12)
    b_n = torch.nn.functional.normalize(b, dim=1, eps=1e-12)
    return a_n @ b_n.T

def symmetric_contrastive(similarity: torch.Tensor, tau: float) -> torch.Tensor:
    """Symmetric InfoNCE over a square similarity matrix with diagonal positives."""
    if similarity.ndim != 2 or similarity.shape[0] != similarity.shape[1]:
        raise InputError("similarity matrix must be square")
    if similarity.shape[0] < 2:
        raise InputError("contrastive loss needs a batch of at least 2")
    if tau <= 0:
        raise InputError("temperature must be positive")
    logits = similarity / tau
    targets = torch.arange(similarity.shape[0])
    row = torch.nn.functional.cross_entropy(logits, targets)
    col = torch.nn.functional.cross_entropy(logits.T, targets)
    return 0.5 * (row + col)


def area_regularizer(relaxed_masks: torch.Tensor, cfg: LossConfig) -> torch.Tensor:
    """Sum of |target - mean mask area| over positive (diagonal) and negative pairs.

    ``relaxed_masks`` is [B, B, H, W]: entry (i, j) is the relaxed mask of
    image i under the audio of sample j, before hardening.
    """
    if relaxed_masks.ndim != 4 or relaxed_masks.shape[0] != relaxed_masks.shape[1]:
        raise InputError("relaxed masks must be [B, B, H, W]")
    b = relaxed_masks.shape[0]
    areas = relaxed_masks.mean(dim=(2, 3))
    eye = torch.eye(b, dtype=torch.bool)
    pos = (cfg.area_pos_prior - areas[eye]).abs().sum()
    neg = (cfg.area_neg_prior - areas[~eye]).abs().sum()
    return pos + neg


def total_loss(
    terms: dict[str, torch.Tensor],
    cfg: LossConfig,
    include_caption: bool = False,
) -> torch.Tensor:
    """Weighted sum of whichever terms are enabled; raises if an enabled term is missing."""
    weights = {
        "acl_i": cfg.lambda_acl_i if cfg.use_acl_i else 0.0,
        "acl_f": cfg.lambda_acl_f if cfg.use_acl_f else 0.0,
        "reg": cfg.lambda_reg if cfg.use_reg else 0.0,
    }
    if include_caption:
        weights["acl_c"] = cfg.lambda_acl_c
    total = None
    for name, weight in weights.items():
        if weight == 0.0:
            continue
        if name not in terms:
            raise InputError(f"loss term {name!r} is enabled but was not computed")
        piece = weight * terms[name]
        total = piece if total is None else total + piece
    if total is None:
        # empty objective: constant zero, and the trainer performs no update
        return torch.zeros((), dtype=torch.float64)
    return total
