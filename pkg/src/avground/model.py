"""End-to-end model: batch forward producing all loss terms, plus inference paths.

One training forward over a batch of B (image, audio) pairs:

1. audio frames -> pseudo-token -> frozen text encoder -> audio embeddings A [B, d]
2. per image, frozen spatial features and a grounding logit map against every
   audio embedding -> maps [B, B, H, W] (linear in A, cheap)
3. image-level path: the B diagonal maps become stochastic binary masks; each
   image is multiplied by its own mask and re-encoded to a global embedding.
   Only the B positive pairs are re-encoded; the B*(B-1) negative-pair masks
   exist only in relaxed form for the area term.
4. feature-level path: all B^2 maps become soft feature-grid masks that pool
   the cached spatial features into B^2 vectors.
5. similarity matrices feed the shared contrastive objective; relaxed mask
   areas feed the area regularizer; optional caption embeddings add the
   caption-audio term over records whose captions are complete.

Noise is an explicit argument so a forward is a pure function of
(batch, parameters, noise); the trainer owns the seeded noise stream.
``mask_mode`` selects the hard straight-through mask (training default) or its
relaxed surrogate (the function whose gradient straight-through reports, used
by the finite-difference checks).
"""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn

from .config import Config
from .encoders import DTYPE, build_encoders, upsample_bilinear
from .errors import InputError
from .grounding import (
    BinaryMaskHead,
    logistic_noise,
    masked_pool_pairs,
    soft_feature_mask_pairs,
)
from .losses import area_regularizer, cosine_similarity_matrix, symmetric_contrastive, total_loss
from .tokenizer import AudioTokenProjector, PromptTemplate

MASK_MODES = ("hard_st", "relaxed")


class AudioVisualGrounder(nn.Module):
    """Frozen encoder bank plus the trainable token projector and mask head."""

    def __init__(self, cfg: Config):
        super().__init__()
        self.cfg = cfg
        self.bank = build_encoders(cfg.encoder)
        self.projector = AudioTokenProjector(cfg.encoder, seed=cfg.train.seed)
        self.template = PromptTemplate(cfg.encoder)
        self.mask_head = BinaryMaskHead(cfg.mask)
        # instrumentation: per-forward counts of masks built and re-encodes done
        self.stats = {"feature_masks": 0, "pooled_vectors": 0, "image_reencodes": 0}

    # -- building blocks -----------------------------------------------------------

    def audio_embedding(self, frames: torch.Tensor) -> torch.Tensor:
        token = self.projector(frames)
        return self.bank.encode_text_tokens(self.template.assemble(token))

    def batch_audio_embeddings(self, frames: torch.Tensor) -> torch.Tensor:
        if frames.ndim != 3:
            raise InputError("batched frames must be [B, T, d_a]")
        return torch.stack([self.audio_embedding(f) for f in frames])

    def grounder_maps(self, spatial: torch.Tensor, conditions: torch.Tensor) -> torch.Tensor:
        """Logit maps of one image's features against [N, d] conditions -> [N, H, W]."""
        conditions = F.normalize(conditions, dim=-1, eps=1e-12)
        cells_n = spatial / (spatial.norm(dim=0, keepdim=True) + self.cfg.encoder.norm_floor)
        cells = self.cfg.encoder.logit_gain * torch.einsum("nd,dhw->nhw", conditions, cells_n)
        return upsample_bilinear(cells, self.cfg.encoder.patch)

    def pairwise_grounder_maps(self, spatial: torch.Tensor, conditions: torch.Tensor) -> torch.Tensor:
        """All-pairs logit maps: spatial [B, d, h, w] x conditions [N, d] -> [B, N, H, W]."""
        conditions = F.normalize(conditions, dim=-1, eps=1e-12)
        cells_n = spatial / (spatial.norm(dim=1, keepdim=True) + self.cfg.encoder.norm_floor)
        cells = self.cfg.encoder.logit_gain * torch.einsum("bdhw,nd->bnhw", cells_n, conditions)
        b, n, h, w = cells.shape
        flat = upsample_bilinear(cells.reshape(b * n, h, w), self.cfg.encoder.patch)
        return flat.reshape(b, n, *flat.shape[-2:])

    def masked_global(self, image: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        """Re-encode an image multiplied pixelwise by a mask; returns the global embedding."""
        self.stats["image_reencodes"] += 1
        embedding, _ = self.bank.encode_image(image * mask.unsqueeze(0))
        return embedding

    # -- training forward ------------------------------------------------------------

    def forward(
        self,
        images: torch.Tensor,
        frames: torch.Tensor,
        noise: torch.Tensor,
        caption_embeddings: torch.Tensor | None = None,
        caption_complete: torch.Tensor | None = None,
        mask_mode: str = "hard_st",
    ) -> dict:
        if mask_mode not in MASK_MODES:
            raise InputError(f"mask_mode must be one of {MASK_MODES}")
        if images.ndim != 4 or frames.ndim != 3 or images.shape[0] != frames.shape[0]:
            raise InputError("expected images [B, 3, H, W] and frames [B, T, d_a]")
        b = images.shape[0]
        if b < 2:
            raise InputError("training forward needs a batch of at least 2")
        loss_cfg = self.cfg.loss
        images = images.to(DTYPE)

        audio = self.batch_audio_embeddings(frames)
        spatial = self.bank.spatial_features(images)  # [B, d, h, w]
        maps = self.pairwise_grounder_maps(spatial, audio)  # [B, B, H, W]
        if noise.shape != maps.shape:
            raise InputError(f"noise must be {tuple(maps.shape)}, got {tuple(noise.shape)}")

        relaxed = self.mask_head.relaxed(maps, noise)
        terms: dict[str, torch.Tensor] = {}

        if loss_cfg.use_acl_i:
            diag = torch.arange(b)
            soft_pos = relaxed[diag, diag]  # [B, H, W]
            if mask_mode == "hard_st":
                binary = (soft_pos >= 0.5).to(soft_pos.dtype)
                pos_masks = binary + soft_pos - soft_pos.detach()
            else:
                pos_masks = soft_pos
            masked_globals, _ = self.bank.encode_image(images * pos_masks.unsqueeze(1))
            self.stats["image_reencodes"] += b
            sim_image = cosine_similarity_matrix(masked_globals, audio)
            terms["acl_i"] = symmetric_contrastive(sim_image, loss_cfg.tau)

        if loss_cfg.use_acl_f:
            grid = spatial.shape[-2:]
            soft = soft_feature_mask_pairs(maps, grid, self.cfg.mask)
            pooled = masked_pool_pairs(spatial, soft, self.cfg.mask.pool_epsilon)
            self.stats["feature_masks"] += b * b
            self.stats["pooled_vectors"] += b * b
            audio_n = nn.functional.normalize(audio, dim=1, eps=1e-12)
            pooled_n = nn.functional.normalize(pooled, dim=2, eps=1e-12)
            sim_feature = torch.einsum("ijd,jd->ij", pooled_n, audio_n)
            terms["acl_f"] = symmetric_contrastive(sim_feature, loss_cfg.tau)

        if loss_cfg.use_reg:
            terms["reg"] = area_regularizer(relaxed, loss_cfg)

        include_caption = False
        if caption_embeddings is not None:
            if caption_complete is None:
                caption_complete = torch.ones(b, dtype=torch.bool)
            idx = torch.nonzero(caption_complete, as_tuple=True)[0]
            # the caption term contrasts within the complete subset only
            if idx.numel() >= 2:
                sim_caption = cosine_similarity_matrix(
                    caption_embeddings[idx].to(DTYPE), audio[idx]
                )
                terms["acl_c"] = symmetric_contrastive(sim_caption, loss_cfg.tau)
                include_caption = True

        total = total_loss(terms, loss_cfg, include_caption=include_caption)
        return {
            "total": total,
            "terms": terms,
            "audio": audio,
            "maps": maps,
            "relaxed_masks": relaxed,
        }

    def draw_noise(self, batch_size: int, hw: tuple[int, int], gen: torch.Generator) -> torch.Tensor:
        return logistic_noise((batch_size, batch_size, *hw), gen)

    def reset_stats(self) -> None:
        for key in self.stats:
            self.stats[key] = 0

    # -- inference paths ---------------------------------------------------------------

    @torch.no_grad()
    def inference_heatmap(self, image: torch.Tensor, frames: torch.Tensor) -> torch.Tensor:
        """Deterministic localization heatmap for one (image, audio) pair."""
        audio = self.audio_embedding(frames)
        spatial = self.bank.spatial_features(image.to(DTYPE))
        logit_map = self.bank.ground(spatial, audio)
        return self.mask_head.confidence(logit_map)

    @torch.no_grad()
    def multisource_localize(
        self,
        image: torch.Tensor,
        frames: torch.Tensor,
        class_embeddings: torch.Tensor,
        k: int,
    ) -> list[tuple[int, float, torch.Tensor]]:
        """Rank per-class heatmaps by agreement with the audio.

        Each class embedding conditions the grounder; the noise-free decision
        mask cuts the image out; the re-encoded global embedding is scored by
        cosine against the audio embedding.  Returns the top-k
        (class_index, score, inference heatmap) triples, ties broken by class
        index.
        """
        if class_embeddings.ndim != 2:
            raise InputError("class embeddings must be [N, d]")
        n = class_embeddings.shape[0]
        if not 1 <= k <= n:
            raise InputError(f"k must be in [1, {n}], got {k}")
        audio = self.audio_embedding(frames)
        image = image.to(DTYPE)
        spatial = self.bank.spatial_features(image)
        maps = self.grounder_maps(spatial, class_embeddings.to(DTYPE))
        w, bias = self.mask_head.w, self.mask_head.b
        scored = []
        for idx in range(n):
            decision = ((w * maps[idx] + bias) >= 0).to(DTYPE)
            v_masked = self.masked_global(image, decision)
            score = torch.nn.functional.cosine_similarity(v_masked, audio, dim=0)
            heat = self.mask_head.confidence(maps[idx])
            scored.append((idx, float(score), heat))
        scored.sort(key=lambda item: (-item[1], item[0]))
        return scored[:k]

    # -- persistence helpers -------------------------------------------------------------

    def trainable_state(self) -> dict[str, torch.Tensor]:
        return {k: v.detach().clone() for k, v in self.state_dict().items()}

    def frozen_fingerprint(self) -> str:
        return self.bank.fingerprint()
