"""Deterministic training loop with checkpointing and structured logs.

Reproducibility contract: a run is a pure function of (config, dataset files,
caption cache).  Batch order comes from a stateless per-epoch permutation of
the record indices; mask noise comes from a dedicated generator whose state
rides along in every checkpoint, so save/load/resume replays the exact noise
stream and produces step-identical losses.  Log lines carry no timestamps for
the same reason: reruns must be byte-comparable.

Only the token projector and the mask head train.  The optimizer is the
decoupled-weight-decay Adam variant with betas (0.9, 0.999) and eps 1e-8; a
step with a constant (gradient-free) objective performs no update at all.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import torch

from .captions import load_cache
from .config import Config
from .dataset import PairDataset, epoch_batches, split_records
from .encoders import DTYPE
from .errors import InputError, TrainingAbort
from .model import AudioVisualGrounder
from .synthdata import load_manifest, record_seed

CHECKPOINT_FORMAT_VERSION = 1


def build_optimizer(model: AudioVisualGrounder, cfg: Config) -> torch.optim.AdamW:
    return torch.optim.AdamW(
        [p for p in model.parameters() if p.requires_grad],
        lr=cfg.train.lr,
        weight_decay=cfg.train.weight_decay,
        betas=(0.9, 0.999),
        eps=1e-8,
    )


def build_model(cfg: Config) -> AudioVisualGrounder:
    model = AudioVisualGrounder(cfg)
    # freeze everything except the projector and the mask head scalars
    for tensor in model.bank.parameter_tensors().values():
        tensor.requires_grad_(False)
    return model


@dataclass
class Checkpoint:
    config: Config
    step: int
    model_state: dict
    optimizer_state: dict
    noise_state: torch.Tensor
    fingerprint: str

    def save(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        torch.save({
            "format_version": CHECKPOINT_FORMAT_VERSION,
            "config": self.config.to_dict(),
            "step": self.step,
            "model_state": self.model_state,
            "optimizer_state": self.optimizer_state,
            "noise_state": self.noise_state,
            "fingerprint": self.fingerprint,
        }, path)

    @staticmethod
    def load(path: str | Path) -> "Checkpoint":
        raw = torch.load(path, weights_only=False)
        if raw.get("format_version") != CHECKPOINT_FORMAT_VERSION:
            raise InputError(f"unsupported checkpoint version {raw.get('format_version')}")
        return Checkpoint(
            config=Config.from_dict(raw["config"]),
            step=raw["step"],
            model_state=raw["model_state"],
            optimizer_state=raw["optimizer_state"],
            noise_state=raw["noise_state"],
            fingerprint=raw["fingerprint"],
        )


def restore(path: str | Path) -> tuple[AudioVisualGrounder, torch.optim.AdamW, torch.Generator, int, Config]:
    """Rebuild (model, optimizer, noise generator, step, config) from a checkpoint."""
    ckpt = Checkpoint.load(path)
    model = build_model(ckpt.config)
    if model.frozen_fingerprint() != ckpt.fingerprint:
        raise InputError("frozen encoder fingerprint mismatch; encoder config differs")
    model.load_state_dict(ckpt.model_state)
    optimizer = build_optimizer(model, ckpt.config)
    optimizer.load_state_dict(ckpt.optimizer_state)
    gen = torch.Generator()
    gen.set_state(ckpt.noise_state)
    return model, optimizer, gen, ckpt.step, ckpt.config


class JsonlLogger:
    def __init__(self, path: str | Path | None, append: bool = False):
        self.path = Path(path) if path else None
        self.rows: list[dict] = []
        if self.path:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            if not append and self.path.exists():
                self.path.unlink()

    def log(self, row: dict) -> None:
        self.rows.append(row)
        if self.path:
            with open(self.path, "a", encoding="utf-8") as handle:
                handle.write(json.dumps(row, sort_keys=True) + "\n")


def caption_lookup(cfg: Config) -> dict[str, torch.Tensor]:
    """Complete caption embeddings by sample id; empty when the cache is absent."""
    table = {}
    for sample_id, record in load_cache(cfg.caption.cache_path).items():
        if record.complete and record.embedding is not None:
            table[sample_id] = record.embedding.to(DTYPE)
    return table


def train(
    cfg: Config,
    dataset: PairDataset | None = None,
    resume_from: str | Path | None = None,
    log_path: str | Path | None = None,
) -> dict:
    """Run (or resume) training; returns a summary with the log rows and final paths.

    The step budget is epochs * floor(n / batch_size), optionally capped by
    cfg.train.max_steps.
    """
    cfg.validate()
    if dataset is None:
        records = split_records(load_manifest(cfg.data.root), split="train", variant="matched")
        model_probe = build_model(cfg)
        dataset = PairDataset(cfg.data.root, records, model_probe.bank)
    n = len(dataset)
    batch_size = cfg.train.batch_size
    if n < batch_size:
        raise InputError(f"dataset of {n} records cannot fill a batch of {batch_size}")
    steps_per_epoch = n // batch_size

    if resume_from is not None:
        model, optimizer, noise_gen, start_step, restored = restore(resume_from)
        # the checkpoint pins everything model-relevant; the caller keeps control
        # of the schedule so a resumed run can extend the original budget
        for field in ("epochs", "max_steps", "checkpoint_path", "log_path", "checkpoint_every"):
            setattr(restored.train, field, getattr(cfg.train, field))
        cfg = restored
        dataset.bank = model.bank
    else:
        model = build_model(cfg)
        optimizer = build_optimizer(model, cfg)
        noise_gen = torch.Generator()
        noise_gen.manual_seed(record_seed(cfg.train.seed, "mask-noise"))
        start_step = 0

    captions = caption_lookup(cfg) if cfg.train.llm_enabled else {}
    fingerprint_before = model.frozen_fingerprint()
    logger = JsonlLogger(log_path or cfg.train.log_path, append=resume_from is not None)

    total_steps = steps_per_epoch * cfg.train.epochs
    if cfg.train.max_steps is not None:
        total_steps = min(total_steps, cfg.train.max_steps)

    d_model = cfg.encoder.d
    step = start_step
    while step < total_steps:
        epoch = step // steps_per_epoch
        batches = epoch_batches(n, batch_size, cfg.train.seed, epoch)
        for batch_index in range(step % steps_per_epoch, len(batches)):
            if step >= total_steps:
                break
            indices = batches[batch_index]
            images, frames, records = dataset.batch(indices)
            caption_embs = None
            complete = None
            if cfg.train.llm_enabled:
                complete = torch.tensor([r["id"] in captions for r in records])
                caption_embs = torch.zeros(len(records), d_model, dtype=DTYPE)
                for row, record in enumerate(records):
                    if complete[row]:
                        caption_embs[row] = captions[record["id"]]
            noise = model.draw_noise(len(indices), images.shape[2:], noise_gen)
            out = model(images, frames, noise, caption_embs, complete)
            total = out["total"]
            if not torch.isfinite(total):
                dump = {
                    "step": step,
                    "records": [r["id"] for r in records],
                    "terms": {k: float(v.detach()) for k, v in out["terms"].items()},
                }
                dump_path = Path(cfg.train.checkpoint_path).with_suffix(".abort.json")
                dump_path.parent.mkdir(parents=True, exist_ok=True)
                dump_path.write_text(json.dumps(dump, indent=2, sort_keys=True))
                raise TrainingAbort(f"non-finite loss at step {step}; diagnostics in {dump_path}")
            if total.requires_grad:
                optimizer.zero_grad()
                total.backward()
                optimizer.step()
            step += 1
            row = {"step": step, "epoch": epoch, "total": float(total.detach())}
            row.update({k: float(v.detach()) for k, v in out["terms"].items()})
            logger.log(row)
            if cfg.train.checkpoint_every and step % cfg.train.checkpoint_every == 0:
                _save(cfg, model, optimizer, noise_gen, step)

    if model.frozen_fingerprint() != fingerprint_before:
        raise TrainingAbort("frozen encoder parameters changed during training")
    final_path = _save(cfg, model, optimizer, noise_gen, step)
    return {
        "steps": step,
        "checkpoint": str(final_path),
        "log_rows": logger.rows,
        "model": model,
        "fingerprint": fingerprint_before,
    }


def _save(cfg: Config, model, optimizer, noise_gen, step) -> Path:
    path = Path(cfg.train.checkpoint_path)
    Checkpoint(
        config=cfg,
        step=step,
        model_state=model.state_dict(),
        optimizer_state=optimizer.state_dict(),
        noise_state=noise_gen.get_state(),
        fingerprint=model.frozen_fingerprint(),
    ).save(path)
    return path


# -- loss-combination ablation -------------------------------------------------------

ABLATION_ROWS = (
    ("A", {"use_acl_i": True, "use_acl_f": False, "use_reg": False}),
    ("B", {"use_acl_i": False, "use_acl_f": True, "use_reg": False}),
    ("C", {"use_acl_i": True, "use_acl_f": True, "use_reg": False}),
    ("D", {"use_acl_i": True, "use_acl_f": False, "use_reg": True}),
    ("E", {"use_acl_i": False, "use_acl_f": True, "use_reg": True}),
    ("F", {"use_acl_i": True, "use_acl_f": True, "use_reg": True}),
)


def run_ablation(
    base: Config,
    seeds: list[int],
    out_dir: str | Path,
    dataset: PairDataset | None = None,
    manifest: list[dict] | None = None,
) -> list[dict]:
    """Train each loss-flag combination per seed; report median test scores.

    Returns one table row per combination; also writes ablation.csv and
    ablation.json under out_dir.
    """
    from statistics import median

    from .evaluate import evaluate_task
    from .reporting import write_csv, write_json

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if manifest is None:
        manifest = load_manifest(base.data.root)
    if dataset is None:
        records = split_records(manifest, split="train", variant="matched")
        dataset = PairDataset(base.data.root, records, build_model(base).bank)

    table = []
    for row_name, flags in ABLATION_ROWS:
        per_seed = {"ciou": [], "ciou_adaptive": [], "auc": [], "auc_adaptive": []}
        for seed in seeds:
            cfg = Config.from_dict(base.to_dict())
            for key, value in flags.items():
                setattr(cfg.loss, key, value)
            cfg.train.seed = seed
            cfg.train.llm_enabled = False
            cfg.train.checkpoint_path = str(out_dir / f"row{row_name}-seed{seed}.pt")
            cfg.train.log_path = str(out_dir / f"row{row_name}-seed{seed}.jsonl")
            result = train(cfg, dataset=dataset)
            scores = evaluate_task(result["model"], cfg, "single", manifest=manifest)
            for key in per_seed:
                per_seed[key].append(scores["metrics"][key])
        table.append({
            "row": row_name,
            **flags,
            **{key: median(values) for key, values in per_seed.items()},
            "per_seed_ciou": per_seed["ciou"],
        })
    write_json(out_dir / "ablation.json", {"rows": table, "seeds": seeds})
    write_csv(
        out_dir / "ablation.csv",
        ["row", "use_acl_i", "use_acl_f", "use_reg",
         "ciou", "ciou_adaptive", "auc", "auc_adaptive"],
        [[r["row"], r["use_acl_i"], r["use_acl_f"], r["use_reg"],
          r["ciou"], r["ciou_adaptive"], r["auc"], r["auc_adaptive"]] for r in table],
    )
    return table
