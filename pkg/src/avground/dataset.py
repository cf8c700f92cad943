"""Manifest-backed pair loading with caching of frozen per-record features.

Decoded images and audio-frame embeddings are pure functions of the frozen
encoders and the files on disk, so they are computed once per record and kept
in memory; batches are assembled from the cache in manifest order under a
seeded per-epoch permutation.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .encoders import ToyEncoderBank, center_image
from .errors import InputError
from .synthdata import read_image, read_mask, read_wav, record_seed


def split_records(records: list[dict], split: str | None = None,
                  variant: str | None = None) -> list[dict]:
    out = records
    if split is not None:
        out = [r for r in out if r["split"] == split]
    if variant is not None:
        out = [r for r in out if r["variant"] == variant]
    return out


@dataclass
class LoadedPair:
    record: dict
    image: torch.Tensor  # float64 [3, H, W], centered pixel domain
    frames: torch.Tensor  # float64 [T, d_a]


class PairDataset:
    """Loads (image, audio-frame) pairs for a record list, caching by record id."""

    def __init__(self, root: str | Path, records: list[dict], bank: ToyEncoderBank):
        if not records:
            raise InputError("dataset needs at least one record")
        self.root = Path(root)
        self.records = list(records)
        self.bank = bank
        self._images: dict[str, torch.Tensor] = {}
        self._frames: dict[str, torch.Tensor] = {}

    def __len__(self) -> int:
        return len(self.records)

    def _image_for(self, record: dict) -> torch.Tensor:
        key = record["image"]
        if key not in self._images:
            self._images[key] = center_image(read_image(self.root / key))
        return self._images[key]

    def _frames_for(self, record: dict) -> torch.Tensor:
        key = record["audio"]
        if key not in self._frames:
            samples, _rate = read_wav(self.root / key)
            spec = self.bank.compute_spectrogram(samples)
            self._frames[key] = self.bank.encode_audio_frames(spec)
        return self._frames[key]

    def load(self, index: int) -> LoadedPair:
        record = self.records[index]
        return LoadedPair(record, self._image_for(record), self._frames_for(record))

    def batch(self, indices: list[int]) -> tuple[torch.Tensor, torch.Tensor, list[dict]]:
        pairs = [self.load(i) for i in indices]
        images = torch.stack([p.image for p in pairs])
        frames = torch.stack([p.frames for p in pairs])
        return images, frames, [p.record for p in pairs]

    def gt_mask(self, record: dict, class_id: int) -> np.ndarray:
        rel = record["masks"].get(str(class_id))
        if rel is None:
            raise InputError(f"record {record['id']} has no mask for class {class_id}")
        return read_mask(self.root / rel)


def epoch_permutation(n: int, seed: int, epoch: int) -> list[int]:
    gen = torch.Generator().manual_seed(record_seed(seed, f"epoch-permutation:{epoch}"))
    return torch.randperm(n, generator=gen).tolist()


def epoch_batches(n: int, batch_size: int, seed: int, epoch: int) -> list[list[int]]:
    """Seeded shuffle split into full batches; the trailing remainder is dropped."""
    order = epoch_permutation(n, seed, epoch)
    return [order[i:i + batch_size] for i in range(0, n - batch_size + 1, batch_size)]
