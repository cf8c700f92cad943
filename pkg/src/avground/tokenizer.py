"""Audio-to-token projection: turns per-frame audio features into one pseudo-token.

This is the trainable front half of the audio branch.  Frame embeddings pass
through a two-layer MLP, then a learned attention query pools them into a
single token living in the text-token space.  The token is spliced into a
fixed prompt template and run through the frozen text encoder to produce the
audio-driven embedding used everywhere downstream.

Pooling is a softmax over frame scores, so reordering the frames reorders the
weights identically and the pooled token is permutation-invariant.
"""

from __future__ import annotations

import torch
from torch import nn

from .config import EncoderConfig
from .encoders import DTYPE, ToyEncoderBank
from .errors import InputError


class AudioTokenProjector(nn.Module):
    """Trainable map: frame embeddings [t, d_a] -> pseudo-token [d_tok]."""

    def __init__(self, cfg: EncoderConfig, seed: int = 0):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        hidden = 2 * cfg.d_tok
        self.mlp1 = nn.Linear(cfg.d_a, hidden, dtype=DTYPE)
        self.mlp2 = nn.Linear(hidden, cfg.d_tok, dtype=DTYPE)
        self.attn_query = nn.Parameter(torch.randn(cfg.d_tok, generator=gen, dtype=DTYPE))
        with torch.no_grad():
            for lin in (self.mlp1, self.mlp2):
                lin.weight.copy_(
                    torch.randn(*lin.weight.shape, generator=gen, dtype=DTYPE)
                    * lin.weight.shape[1] ** -0.5
                )
                lin.bias.zero_()

    def forward(self, frames: torch.Tensor) -> torch.Tensor:
        if frames.ndim != 2 or frames.shape[0] == 0:
            raise InputError("frame embeddings must be a nonempty [t, d_a] matrix")
        hidden = torch.tanh(self.mlp1(frames))
        tokens = self.mlp2(hidden)
        weights = torch.softmax(tokens @ self.attn_query, dim=0)
        return weights @ tokens


class PromptTemplate:
    """Fixed prefix tokens with one slot for the audio pseudo-token."""

    def __init__(self, cfg: EncoderConfig):
        gen = torch.Generator().manual_seed(cfg.seed + 1)
        # small fixed context so the audio token dominates the prompt mean
        self.prefix = torch.randn(cfg.prefix_len, cfg.d_tok, generator=gen, dtype=DTYPE) * 0.2
        self.slot_index = cfg.prefix_len

    def assemble(self, token: torch.Tensor) -> torch.Tensor:
        if token.shape != (self.prefix.shape[1],):
            raise InputError(f"pseudo-token must be [{self.prefix.shape[1]}]")
        return torch.cat([self.prefix, token.unsqueeze(0)], dim=0)


def audio_embedding(
    bank: ToyEncoderBank,
    projector: AudioTokenProjector,
    template: PromptTemplate,
    frames: torch.Tensor,
) -> torch.Tensor:
    """Frame embeddings -> pseudo-token -> prompt -> frozen text encoder -> [d]."""
    token = projector(frames)
    return bank.encode_text_tokens(template.assemble(token))
