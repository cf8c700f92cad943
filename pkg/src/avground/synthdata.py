"""Synthetic paired dataset: colored-shape images with class-keyed tonal audio.

Classes are color x shape combinations; each class owns a narrow frequency
band, so its sound is a chord of seeded sinusoids inside that band.  Scenes
are rasterized without anti-aliasing, making the per-class ground-truth masks
exact pixel sets, and every object box lies fully inside the frame.

Variants produced per dataset:

* matched     one object, audio from its class (train and test)
* silent      one object, noise-only audio
* mismatched  one object, audio from a class absent from the image
* interactive one image with two objects, one record per class with that
              class's solo audio, sharing a group id
* mixture     two objects, both classes audible at once, per-class ground truth

Everything is a pure function of (config seed, record id): per-record seeds
are hashed from both, so regeneration is byte-identical file for file and
records can be generated in any order.
"""

from __future__ import annotations

import hashlib
import json
import wave
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .config import DataConfig
from .errors import InputError

CLASS_NAMES = ("red circle", "green square", "blue circle", "yellow square")
CLASS_COLORS = {
    "red": (200, 60, 30),
    "green": (60, 160, 50),
    "blue": (30, 60, 200),
    "yellow": (220, 200, 60),
}
# per-class admixture channel for instance shades; stays inside [0, 255] over u in [-1, 1]
SHADE_SHIFTS = {
    "red": (0, 45, 0),
    "green": (45, 0, 0),
    "blue": (0, 45, 0),
    "yellow": (0, 0, 45),
}
BACKGROUND_RGB = (128, 128, 128)
BAND_HALF_WIDTH_HZ = 300.0
TONES_PER_CLASS = 3
OVERTONE_MIN_HZ = 20.0
OVERTONE_MAX_HZ = 60.0
NOISE_AMPLITUDE = 0.005
NOISE_CEILING_RMS = 0.01  # silent clips stay below this by construction
PEAK_LEVEL = 0.9
MANIFEST_NAME = "manifest.jsonl"


def class_color(class_id: int) -> str:
    return CLASS_NAMES[class_id].split()[0]


def class_shape(class_id: int) -> str:
    return CLASS_NAMES[class_id].split()[1]


def band_center_hz(class_id: int) -> float:
    """Band centers 1.2 kHz apart leave a 600 Hz gap between band edges."""
    return 800.0 + 1200.0 * class_id


def draw_tones(class_id: int, gen: torch.Generator) -> tuple[float, ...]:
    """Narrow chord inside the class band: a fundamental plus close overtones."""
    spread = BAND_HALF_WIDTH_HZ - OVERTONE_MAX_HZ
    u = torch.rand(1, generator=gen, dtype=torch.float64).item() * 2 - 1
    f0 = band_center_hz(class_id) + u * spread
    tones = [f0]
    for sign in (1.0, -1.0):
        r = torch.rand(1, generator=gen, dtype=torch.float64).item()
        tones.append(f0 + sign * (OVERTONE_MIN_HZ + r * (OVERTONE_MAX_HZ - OVERTONE_MIN_HZ)))
    return tuple(tones)


def shade_color(class_id: int, tones: tuple[float, ...]) -> tuple[int, int, int]:
    """Instance color: base class hue plus a fundamental-dependent admixture.

    Ties each object's exact appearance to its own sound, the way distinct
    real-world instances of one category look and sound slightly different.
    The admixture shifts the hue direction (not the brightness) so the cue
    survives feature normalization downstream.
    """
    base = CLASS_COLORS[class_color(class_id)]
    if not tones:
        return base
    spread = BAND_HALF_WIDTH_HZ - OVERTONE_MAX_HZ
    u = (tones[0] - band_center_hz(class_id)) / spread
    u = max(-1.0, min(1.0, u))
    shift = SHADE_SHIFTS[class_color(class_id)]
    return tuple(int(round(min(255.0, max(0.0, c + u * s)))) for c, s in zip(base, shift))


def record_seed(global_seed: int, tag: str) -> int:
    digest = hashlib.blake2b(f"{global_seed}:{tag}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little") % (2 ** 63)


@dataclass
class ObjectSpec:
    class_id: int
    center: tuple[int, int]  # (col, row)
    size: int  # square side / circle diameter, pixels
    tones: tuple[float, ...] = ()  # chord frequencies, Hz; tones[0] is the fundamental


@dataclass
class SceneSpec:
    objects: list[ObjectSpec]
    audible_classes: list[int]
    image_size: int
    sample_rate: int
    duration: float
    seed: int = 0
    background: str = "plain"

    def placed_classes(self) -> list[int]:
        return [obj.class_id for obj in self.objects]


def _footprint(obj: ObjectSpec, size: int) -> np.ndarray:
    cx, cy = obj.center
    half = obj.size // 2
    ys, xs = np.mgrid[0:size, 0:size]
    if class_shape(obj.class_id) == "circle":
        # radius = size/2; squared form keeps membership in integers
        mask = 4 * ((xs - cx) ** 2 + (ys - cy) ** 2) <= obj.size ** 2
    else:
        # half-open extent: a size-n square covers exactly n*n pixels
        left, top = cx - half, cy - half
        mask = (xs >= left) & (xs < left + obj.size) & (ys >= top) & (ys < top + obj.size)
    if not mask.any():
        raise InputError(f"object of size {obj.size} at {obj.center} rasterizes to nothing")
    on_y, on_x = np.nonzero(mask)
    if on_x.min() < 0 or on_y.min() < 0 or on_x.max() >= size or on_y.max() >= size:
        raise InputError("object extends outside the frame")
    cols = mask.any(axis=0)
    rows = mask.any(axis=1)
    if cols[0] or cols[-1] or rows[0] or rows[-1]:
        raise InputError("object touches the frame border")
    return mask


def render_scene(spec: SceneSpec) -> tuple[np.ndarray, dict[int, np.ndarray]]:
    """Rasterize a scene; returns (uint8 image [H, W, 3], per-class boolean masks).

    Later objects paint over earlier ones; the per-class mask records visible
    pixels only.  Two objects of one class may not overlap (ground truth would
    be ambiguous).
    """
    size = spec.image_size
    footprints = [_footprint(obj, size) for obj in spec.objects]
    for i in range(len(spec.objects)):
        for j in range(i + 1, len(spec.objects)):
            if spec.objects[i].class_id == spec.objects[j].class_id:
                if (footprints[i] & footprints[j]).any():
                    raise InputError("overlapping objects of the same class")
    image = np.full((size, size, 3), BACKGROUND_RGB, dtype=np.uint8)
    masks: dict[int, np.ndarray] = {}
    for i, obj in enumerate(spec.objects):
        visible = footprints[i].copy()
        for later in footprints[i + 1:]:
            visible &= ~later
        image[visible] = shade_color(obj.class_id, obj.tones)
        prev = masks.get(obj.class_id, np.zeros((size, size), dtype=bool))
        masks[obj.class_id] = prev | visible
    return image, masks


def synth_audio(spec: SceneSpec) -> np.ndarray:
    """Band-limited chords for each audible class over a low seeded noise floor.

    Audible clips are peak-normalized to PEAK_LEVEL; silent clips are left as
    raw noise so their RMS stays under NOISE_CEILING_RMS.
    """
    gen = torch.Generator().manual_seed(spec.seed)
    n = int(round(spec.duration * spec.sample_rate))
    if n <= 0:
        raise InputError("audio duration must be positive")
    t = np.arange(n, dtype=np.float64) / spec.sample_rate
    signal = np.zeros(n, dtype=np.float64)
    by_class = {obj.class_id: obj for obj in spec.objects}
    for class_id in sorted(spec.audible_classes):
        obj = by_class.get(class_id)
        # sounding object in frame: play its own chord; otherwise (mismatched
        # pairing) an unseen instance of that class sounds instead
        tones = obj.tones if obj is not None and obj.tones else draw_tones(class_id, gen)
        for freq in tones:
            phase = torch.rand(1, generator=gen, dtype=torch.float64).item() * 2 * np.pi
            signal += np.sin(2 * np.pi * freq * t + phase)
    noise = torch.randn(n, generator=gen, dtype=torch.float64).numpy() * NOISE_AMPLITUDE
    signal += noise
    if spec.audible_classes:
        signal *= PEAK_LEVEL / np.abs(signal).max()
    return signal


def mask_to_box(mask: np.ndarray) -> list[int] | None:
    """Tight [x, y, w, h] box of on-pixels; None for an empty mask."""
    ys, xs = np.nonzero(mask)
    if len(xs) == 0:
        return None
    return [int(xs.min()), int(ys.min()), int(xs.max() - xs.min() + 1), int(ys.max() - ys.min() + 1)]


# -- file I/O ----------------------------------------------------------------------


def write_png(path: Path, array: np.ndarray) -> None:
    mode = "RGB" if array.ndim == 3 else "L"
    Image.fromarray(array, mode=mode).save(path, format="PNG")


def read_image(path: Path) -> torch.Tensor:
    """PNG -> float64 tensor [3, H, W] in [0, 1]."""
    arr = np.asarray(Image.open(path).convert("RGB"), dtype=np.float64) / 255.0
    return torch.from_numpy(arr).permute(2, 0, 1).contiguous()


def read_mask(path: Path) -> np.ndarray:
    return np.asarray(Image.open(path).convert("L")) >= 128


def write_wav(path: Path, samples: np.ndarray, sample_rate: int) -> None:
    pcm = np.clip(np.round(samples * 32767.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as handle:
        handle.setnchannels(1)
        handle.setsampwidth(2)
        handle.setframerate(sample_rate)
        handle.writeframes(pcm.tobytes())


def read_wav(path: Path) -> tuple[torch.Tensor, int]:
    with wave.open(str(path), "rb") as handle:
        if handle.getnchannels() != 1 or handle.getsampwidth() != 2:
            raise InputError(f"{path} is not 16-bit mono PCM")
        rate = handle.getframerate()
        raw = handle.readframes(handle.getnframes())
    pcm = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32767.0
    return torch.from_numpy(pcm), rate


# -- dataset assembly ---------------------------------------------------------------


@dataclass
class _Writer:
    root: Path
    cfg: DataConfig
    records: list[dict] = field(default_factory=list)

    def dirs(self, split: str) -> dict[str, Path]:
        out = {kind: self.root / split / kind for kind in ("images", "audio", "masks")}
        for path in out.values():
            path.mkdir(parents=True, exist_ok=True)
        return out

    def place_objects(self, class_ids: list[int], gen: torch.Generator) -> list[ObjectSpec]:
        """Seeded placement; multi-object scenes get one disjoint strip each."""
        cfg = self.cfg
        n = len(class_ids)
        if n == 1:
            lo_size, hi_size = cfg.min_object, cfg.max_object
            strips = [(0, cfg.image_size, 0, cfg.image_size)]
        else:
            lo_size, hi_size = cfg.multi_min_object, cfg.multi_max_object
            width = cfg.image_size // n
            bands = [(i * width, (i + 1) * width) for i in range(n)]
            order = torch.randperm(n, generator=gen).tolist()
            vertical = bool(torch.randint(2, (1,), generator=gen))
            strips = []
            for i in range(n):
                x0, x1 = bands[order[i]]
                strips.append((x0, x1, 0, cfg.image_size) if vertical
                              else (0, cfg.image_size, x0, x1))
        placed: list[ObjectSpec] = []
        for class_id, (x0, x1, y0, y1) in zip(class_ids, strips):
            size = int(torch.randint(lo_size, hi_size + 1, (1,), generator=gen))
            half = size // 2
            cx_lo, cx_hi = x0 + half + 2, x1 - half - 3
            cy_lo, cy_hi = y0 + half + 2, y1 - half - 3
            if cx_hi < cx_lo or cy_hi < cy_lo:
                raise InputError("objects do not fit in the configured image size")
            cx = int(torch.randint(cx_lo, cx_hi + 1, (1,), generator=gen))
            cy = int(torch.randint(cy_lo, cy_hi + 1, (1,), generator=gen))
            placed.append(ObjectSpec(class_id, (cx, cy), size, draw_tones(class_id, gen)))
        for spec in placed:
            _footprint(spec, cfg.image_size)  # border sanity
        return placed

    def emit(
        self,
        record_id: str,
        split: str,
        variant: str,
        pairing: str,
        objects: list[ObjectSpec],
        audible: list[int],
        target_classes: list[int],
        group_id: str | None = None,
        image_name: str | None = None,
        shared_masks: dict[int, str] | None = None,
    ) -> dict[int, str]:
        cfg = self.cfg
        dirs = self.dirs(split)
        scene = SceneSpec(
            objects=objects,
            audible_classes=audible,
            image_size=cfg.image_size,
            sample_rate=cfg.sample_rate,
            duration=cfg.duration,
            seed=record_seed(cfg.seed, f"{image_name or record_id}:audio:{record_id}"),
            background=cfg.background,
        )
        mask_paths: dict[int, str] = {}
        image_rel = f"{split}/images/{image_name or record_id}.png"
        if shared_masks is None:
            image, masks = render_scene(scene)
            write_png(self.root / image_rel, image)
            for class_id, mask in sorted(masks.items()):
                rel = f"{split}/masks/{image_name or record_id}-c{class_id}.png"
                write_png(self.root / rel, mask.astype(np.uint8) * 255)
                mask_paths[class_id] = rel
        else:
            mask_paths = dict(shared_masks)
            _, masks = render_scene(scene)  # recompute boxes from geometry
        audio_rel = f"{split}/audio/{record_id}.wav"
        write_wav(self.root / audio_rel, synth_audio(scene), cfg.sample_rate)
        boxes = {str(cid): mask_to_box(mask) for cid, mask in sorted(masks.items())}
        self.records.append({
            "id": record_id,
            "split": split,
            "variant": variant,
            "pairing": pairing,
            "group_id": group_id,
            "image": image_rel,
            "audio": audio_rel,
            "objects": [
                {"class_id": o.class_id, "color": class_color(o.class_id),
                 "shape": class_shape(o.class_id), "center": list(o.center), "size": o.size,
                 "tones": list(o.tones)}
                for o in objects
            ],
            "audio_classes": sorted(audible),
            "target_classes": sorted(target_classes),
            "masks": {str(cid): rel for cid, rel in sorted(mask_paths.items())},
            "boxes": boxes,
        })
        return mask_paths


def make_dataset(cfg: DataConfig) -> list[dict]:
    """Generate every split and variant under cfg.root; returns manifest records."""
    if cfg.classes != len(CLASS_NAMES):
        raise InputError(f"this generator defines exactly {len(CLASS_NAMES)} classes")
    root = Path(cfg.root)
    root.mkdir(parents=True, exist_ok=True)
    writer = _Writer(root, cfg)
    k = cfg.classes

    for i in range(cfg.train_matched):
        rid = f"train-matched-{i:05d}"
        gen = torch.Generator().manual_seed(record_seed(cfg.seed, f"{rid}:scene"))
        cls = i % k
        objects = writer.place_objects([cls], gen)
        writer.emit(rid, "train", "matched", "matched", objects, [cls], [cls])

    for i in range(cfg.test_matched):
        rid = f"test-matched-{i:05d}"
        gen = torch.Generator().manual_seed(record_seed(cfg.seed, f"{rid}:scene"))
        cls = i % k
        objects = writer.place_objects([cls], gen)
        writer.emit(rid, "test", "matched", "matched", objects, [cls], [cls])

    for i in range(cfg.test_silent):
        rid = f"test-silent-{i:05d}"
        gen = torch.Generator().manual_seed(record_seed(cfg.seed, f"{rid}:scene"))
        cls = i % k
        objects = writer.place_objects([cls], gen)
        writer.emit(rid, "test", "silent", "silent", objects, [], [])

    for i in range(cfg.test_mismatched):
        rid = f"test-mismatched-{i:05d}"
        gen = torch.Generator().manual_seed(record_seed(cfg.seed, f"{rid}:scene"))
        cls = i % k
        others = [c for c in range(k) if c != cls]
        audio_cls = others[int(torch.randint(len(others), (1,), generator=gen))]
        objects = writer.place_objects([cls], gen)
        writer.emit(rid, "test", "mismatched", "mismatched", objects, [audio_cls], [])

    for g in range(cfg.test_interactive_groups):
        group = f"test-interactive-{g:05d}"
        gen = torch.Generator().manual_seed(record_seed(cfg.seed, f"{group}:scene"))
        pair = torch.randperm(k, generator=gen)[:2].tolist()
        objects = writer.place_objects(sorted(pair), gen)
        shared: dict[int, str] | None = None
        for cls in sorted(pair):
            rid = f"{group}-c{cls}"
            shared = writer.emit(
                rid, "test", "interactive", "matched", objects, [cls], [cls],
                group_id=group, image_name=group,
                shared_masks=shared if shared else None,
            )

    for i in range(cfg.test_mixtures):
        rid = f"test-mixture-{i:05d}"
        gen = torch.Generator().manual_seed(record_seed(cfg.seed, f"{rid}:scene"))
        pair = sorted(torch.randperm(k, generator=gen)[:2].tolist())
        objects = writer.place_objects(pair, gen)
        writer.emit(rid, "test", "mixture", "matched", objects, pair, pair)

    manifest_path = root / MANIFEST_NAME
    with open(manifest_path, "w", encoding="utf-8") as handle:
        for record in writer.records:
            handle.write(json.dumps(record, sort_keys=True) + "\n")
    ids = [r["id"] for r in writer.records]
    if len(ids) != len(set(ids)):
        raise InputError("duplicate record ids in generated manifest")
    return writer.records


def load_manifest(root: str | Path) -> list[dict]:
    path = Path(root) / MANIFEST_NAME
    if not path.exists():
        raise InputError(f"no manifest at {path}; run gen-data first")
    records = []
    with open(path, encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records
