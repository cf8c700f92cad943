"""Frozen encoder bank: toy stand-ins for the pretrained image/audio/text/grounding stack.

Every encoder here is a pure, seeded function of its input: parameters are
drawn once from a seeded generator at construction and never updated.  The
bank exposes the four surfaces the rest of the system builds on:

* ``encode_image``        image -> (global embedding [d], spatial features [d, h, w])
* ``compute_spectrogram`` waveform -> magnitude spectrogram [f_bins, t]
* ``encode_audio_frames`` spectrogram -> per-frame embeddings [t, d_a]
* ``encode_text_tokens``  token sequence [L, d_tok] -> embedding [d]
* ``ground``              (spatial features, condition [d]) -> logit map [H, W]

``ground`` is linear in its condition vector and differentiable with respect
to it; ``encode_text_tokens`` is differentiable with respect to the token
embeddings.  A registry maps encoder kinds to implementations so a real
pretrained adapter can be dropped in without touching any caller.
"""

from __future__ import annotations

import hashlib

import torch

from .config import EncoderConfig
from .errors import InputError

DTYPE = torch.float64


def center_image(image: torch.Tensor) -> torch.Tensor:
    """Map unit-range pixels into the zero-centered domain the encoders consume.

    With mid-gray at zero, multiplying a centered image by a binary mask erases
    content toward neutral gray instead of toward black, so masked-out regions
    read as empty rather than as a new dark object.
    """
    return image.to(DTYPE) - 0.5


def _randn(gen: torch.Generator, *shape, scale: float = 1.0) -> torch.Tensor:
    return torch.randn(*shape, generator=gen, dtype=DTYPE) * scale


class ToyEncoderBank:
    """Seeded random shallow maps sharing the output dimension d."""

    def __init__(self, cfg: EncoderConfig):
        self.cfg = cfg
        gen = torch.Generator().manual_seed(cfg.seed)
        d, d_a, d_tok, patch = cfg.d, cfg.d_a, cfg.d_tok, cfg.patch
        pvec = 3 * patch * patch
        # image: per-patch linear + tanh; the global embedding is the cell mean, so
        # global, spatial, text, and grounder vectors all share one d-dim space and
        # contrastive alignment in that space moves the grounder's response with it
        self.w_spatial = _randn(gen, d, pvec, scale=pvec ** -0.5)
        # audio: framewise map over log-compressed spectrogram columns (no positional term,
        # so permuting frames permutes output rows identically)
        self.w_audio = _randn(gen, d_a, cfg.f_bins, scale=cfg.f_bins ** -0.5)
        # text: token projection + positional table + mixing nonlinearity + output head
        self.w_token = _randn(gen, d, d_tok, scale=d_tok ** -0.5)
        self.positions = _randn(gen, cfg.max_tokens, d, scale=d ** -0.5)
        self.w_text_out = _randn(gen, d, d, scale=d ** -0.5)
        self.window = torch.hann_window(cfg.n_fft, periodic=True, dtype=DTYPE)

    # -- frozen-contract helpers -------------------------------------------------

    def parameter_tensors(self) -> dict[str, torch.Tensor]:
        return {
            "w_spatial": self.w_spatial,
            "w_audio": self.w_audio,
            "w_token": self.w_token,
            "positions": self.positions,
            "w_text_out": self.w_text_out,
        }

    def fingerprint(self) -> str:
        """SHA-256 over all frozen parameter bytes, for the frozen-contract audit."""
        h = hashlib.sha256()
        for name in sorted(self.parameter_tensors()):
            h.update(name.encode())
            h.update(self.parameter_tensors()[name].numpy().tobytes())
        return h.hexdigest()

    # -- encoders ------------------------------------------------------------------

    def encode_image(self, image: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Return (global embedding [d], spatial feature map [d, h, w]).

        A batched [B, 3, H, W] input yields ([B, d], [B, d, h, w]).
        """
        spatial = self.spatial_features(image)
        return spatial.mean(dim=(-2, -1)), spatial

    def spatial_features(self, image: torch.Tensor) -> torch.Tensor:
        patch = self.cfg.patch
        batched = image.ndim == 4
        if not batched:
            if image.ndim != 3 or image.shape[0] != 3:
                raise InputError(f"image must be [3, H, W], got {tuple(image.shape)}")
            image = image.unsqueeze(0)
        if image.shape[1] != 3:
            raise InputError(f"image must have 3 channels, got {tuple(image.shape)}")
        b, _, height, width = image.shape
        if height % patch != 0 or width % patch != 0:
            raise InputError(f"image size {height}x{width} not divisible by patch {patch}")
        if not torch.isfinite(image).all():
            raise InputError("image contains non-finite values")
        h, w = height // patch, width // patch
        # inputs are centered pixels (see center_image): a mid-gray patch maps to a
        # near-zero feature, so cell magnitude tracks how much content the patch holds
        # [B, 3, h, patch, w, patch] -> [B, h, w, 3 * patch * patch]
        cells = image.reshape(b, 3, h, patch, w, patch).permute(0, 2, 4, 1, 3, 5).reshape(b, h, w, -1)
        feats = torch.tanh(cells @ self.w_spatial.T).permute(0, 3, 1, 2)
        return feats if batched else feats[0]

    def compute_spectrogram(self, samples: torch.Tensor) -> torch.Tensor:
        """Magnitude STFT, Hann window of n_fft samples, centered; [f_bins, t]."""
        if samples.ndim != 1 or samples.numel() == 0:
            raise InputError("audio clip must be a nonempty 1-D array")
        if not torch.isfinite(samples).all():
            raise InputError("audio clip contains non-finite values")
        if samples.numel() < self.cfg.n_fft:
            raise InputError(f"clip shorter than the {self.cfg.n_fft}-sample analysis window")
        spec = torch.stft(
            samples.to(DTYPE),
            n_fft=self.cfg.n_fft,
            hop_length=self.cfg.hop,
            window=self.window,
            center=True,
            pad_mode="constant",
            onesided=True,
            return_complex=True,
        )
        return spec.abs()

    def encode_audio_frames(self, spectrogram: torch.Tensor) -> torch.Tensor:
        """Framewise embedding of log-compressed magnitude columns; [t, d_a]."""
        if spectrogram.ndim != 2:
            raise InputError(f"spectrogram must be 2-D, got {tuple(spectrogram.shape)}")
        if spectrogram.shape[0] != self.cfg.f_bins:
            raise InputError(
                f"spectrogram has {spectrogram.shape[0]} bins, encoder expects {self.cfg.f_bins}"
            )
        if not torch.isfinite(spectrogram).all():
            raise InputError("spectrogram contains non-finite values")
        return torch.tanh(torch.log1p(spectrogram).T @ self.w_audio.T)

    def encode_text_tokens(self, token_embeddings: torch.Tensor) -> torch.Tensor:
        """Sequence [L, d_tok] -> embedding [d]; differentiable w.r.t. the tokens."""
        if token_embeddings.ndim != 2 or token_embeddings.shape[0] == 0:
            raise InputError("token sequence must be a nonempty [L, d_tok] matrix")
        length, d_tok = token_embeddings.shape
        if d_tok != self.cfg.d_tok:
            raise InputError(f"token dimension {d_tok} != configured d_tok {self.cfg.d_tok}")
        if length > self.cfg.max_tokens:
            raise InputError(f"sequence length {length} exceeds max_tokens {self.cfg.max_tokens}")
        mixed = token_embeddings @ self.w_token.T + self.positions[:length]
        return self.w_text_out @ torch.tanh(mixed.mean(dim=0))

    def ground(self, spatial: torch.Tensor, condition: torch.Tensor) -> torch.Tensor:
        """Logit map at image resolution (h*patch, w*patch); linear in ``condition``."""
        cell = self.ground_cells(spatial, condition)
        return upsample_bilinear(cell, self.cfg.patch)

    def ground_cells(self, spatial: torch.Tensor, condition: torch.Tensor) -> torch.Tensor:
        """Pre-upsampling per-cell logits [h, w]."""
        if spatial.ndim != 3 or spatial.shape[0] != self.cfg.d:
            raise InputError(f"spatial features must be [{self.cfg.d}, h, w]")
        if condition.shape != (self.cfg.d,):
            raise InputError(f"condition must be [{self.cfg.d}], got {tuple(condition.shape)}")
        # cell logit = gain * <cell / (|cell| + floor), unit condition>: direction
        # selects which content responds at near-full strength once a cell carries
        # real content, while the floor keeps near-empty cells pinned near zero so
        # they cannot outscore content-bearing cells
        condition = condition / condition.norm().clamp_min(1e-12)
        cells = spatial / (spatial.norm(dim=0, keepdim=True) + self.cfg.norm_floor)
        return self.cfg.logit_gain * torch.einsum("dhw,d->hw", cells, condition)


def upsample_bilinear(cells: torch.Tensor, factor: int) -> torch.Tensor:
    """Bilinear upsampling of a [h, w] (or leading-batch) map by an integer factor."""
    squeeze = cells.ndim == 2
    batch = cells.reshape(1, 1, *cells.shape) if squeeze else cells.unsqueeze(1)
    out = torch.nn.functional.interpolate(
        batch, scale_factor=factor, mode="bilinear", align_corners=False
    )
    return out[0, 0] if squeeze else out[:, 0]


ENCODER_REGISTRY: dict[str, type] = {"toy": ToyEncoderBank}


def build_encoders(cfg: EncoderConfig):
    try:
        cls = ENCODER_REGISTRY[cfg.kind]
    except KeyError:
        raise InputError(f"unknown encoder kind {cfg.kind!r}; registered: {sorted(ENCODER_REGISTRY)}")
    return cls(cfg)
