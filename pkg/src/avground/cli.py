"""Command-line interface.

Subcommands: gen-data, precompute-captions, train, evaluate, localize,
multisource, ablation.  Every command reads an optional JSON config
(``--config``) with environment overrides (prefix ``AVGROUND_``), prints a
one-line JSON result on success, and on failure prints a machine-parsable
``{"error": code, "message": ...}`` line to stderr and exits nonzero.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import torch

from .captions import caption_embedding, precompute_captions
from .config import Config, load_config
from .dataset import PairDataset, split_records
from .encoders import center_image
from .errors import AVGroundError, InputError
from .evaluate import TASKS, evaluate_task, localize_pair
from .heatmap_io import write_heatmap, write_overlay
from .model import AudioVisualGrounder
from .synthdata import CLASS_NAMES, load_manifest, make_dataset, read_image, read_wav
from .train import build_model, restore, run_ablation, train


def _load_model(args, cfg: Config) -> tuple[AudioVisualGrounder, Config]:
    if getattr(args, "checkpoint", None):
        model, _opt, _gen, _step, ckpt_cfg = restore(args.checkpoint)
        # the stored config governs the model; CLI config still governs data/eval paths
        ckpt_cfg.data = cfg.data
        ckpt_cfg.eval = cfg.eval
        return model, ckpt_cfg
    if getattr(args, "untrained", False):
        return build_model(cfg), cfg
    raise InputError("provide --checkpoint PATH or --untrained")


def cmd_gen_data(args) -> int:
    cfg = load_config(args.config)
    records = make_dataset(cfg.data)
    counts: dict[str, int] = {}
    for record in records:
        key = f"{record['split']}/{record['variant']}"
        counts[key] = counts.get(key, 0) + 1
    print(json.dumps({"root": cfg.data.root, "records": len(records), "counts": counts},
                     sort_keys=True))
    return 0


def cmd_precompute_captions(args) -> int:
    cfg = load_config(args.config)
    records = split_records(load_manifest(cfg.data.root), split=args.split)
    bank = build_model(cfg).bank
    _records, stats = precompute_captions(records, bank, cfg.caption)
    print(json.dumps({"cache": cfg.caption.cache_path, **stats}, sort_keys=True))
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    if args.resume and not Path(args.resume).exists():
        raise InputError(f"resume checkpoint not found: {args.resume}")
    result = train(cfg, resume_from=args.resume)
    last = result["log_rows"][-1] if result["log_rows"] else {}
    print(json.dumps({
        "steps": result["steps"],
        "checkpoint": result["checkpoint"],
        "final_total": last.get("total"),
    }, sort_keys=True))
    return 0


def cmd_evaluate(args) -> int:
    cfg = load_config(args.config)
    model, cfg = _load_model(args, cfg)
    payload = evaluate_task(model, cfg, args.task, out_dir=args.out_dir)
    print(json.dumps({"task": args.task, "metrics": payload["metrics"],
                      "out_dir": args.out_dir}, sort_keys=True))
    return 0


def cmd_localize(args) -> int:
    cfg = load_config(args.config)
    model, _cfg = _load_model(args, cfg)
    result = localize_pair(model, args.image, args.audio, args.out)
    print(json.dumps(result, sort_keys=True))
    return 0


def cmd_multisource(args) -> int:
    cfg = load_config(args.config)
    model, cfg = _load_model(args, cfg)
    class_names = args.classes.split(",") if args.classes else list(CLASS_NAMES)
    class_names = [name.strip() for name in class_names if name.strip()]
    k = args.k if args.k is not None else cfg.eval.multisource_k
    try:
        image = read_image(Path(args.image))
        samples, _rate = read_wav(Path(args.audio))
    except FileNotFoundError as exc:
        raise InputError(f"cannot read input: {exc}") from exc
    frames = model.bank.encode_audio_frames(model.bank.compute_spectrogram(samples))
    embeddings = torch.stack([caption_embedding(model.bank, name) for name in class_names])
    ranked = model.multisource_localize(center_image(image), frames, embeddings, k)
    out_prefix = Path(args.out)
    results = []
    rgb = (image.permute(1, 2, 0).numpy() * 255).astype("uint8")
    for rank, (class_index, score, heatmap) in enumerate(ranked):
        heat = heatmap.numpy()
        raw = out_prefix.with_name(f"{out_prefix.name}-rank{rank}-c{class_index}.avh1")
        overlay = raw.with_suffix(".png")
        write_heatmap(raw, heat)
        write_overlay(overlay, rgb, heat)
        results.append({"rank": rank, "class_index": class_index,
                        "class": class_names[class_index], "score": score,
                        "heatmap": str(raw), "overlay": str(overlay)})
    print(json.dumps({"results": results}, sort_keys=True))
    return 0


def cmd_ablation(args) -> int:
    cfg = load_config(args.config)
    seeds = [int(s) for s in args.seeds.split(",")]
    table = run_ablation(cfg, seeds, args.out_dir)
    print(json.dumps({"rows": [r["row"] for r in table],
                      "ciou": {r["row"]: r["ciou"] for r in table},
                      "out_dir": args.out_dir}, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="avground",
        description="Self-supervised audio-visual localization toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", default=None, help="JSON config path")

    p = sub.add_parser("gen-data", help="generate the synthetic dataset")
    common(p)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("precompute-captions", help="build the caption/LLM cache")
    common(p)
    p.add_argument("--split", default="train")
    p.set_defaults(func=cmd_precompute_captions)

    p = sub.add_parser("train", help="train the projector and mask head")
    common(p)
    p.add_argument("--resume", default=None, help="checkpoint to resume from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a checkpoint on a test task")
    common(p)
    p.add_argument("--task", required=True, choices=TASKS)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--untrained", action="store_true",
                   help="evaluate a freshly initialized model")
    p.add_argument("--out-dir", default="reports")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("localize", help="heatmap for one image/audio pair")
    common(p)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--untrained", action="store_true")
    p.add_argument("--image", required=True)
    p.add_argument("--audio", required=True)
    p.add_argument("--out", required=True, help="output path prefix")
    p.set_defaults(func=cmd_localize)

    p = sub.add_parser("multisource", help="top-k per-class heatmaps for a mixture")
    common(p)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--untrained", action="store_true")
    p.add_argument("--image", required=True)
    p.add_argument("--audio", required=True)
    p.add_argument("--out", required=True, help="output path prefix")
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--classes", default=None,
                   help="comma-separated class phrases (default: built-in classes)")
    p.set_defaults(func=cmd_multisource)

    p = sub.add_parser("ablation", help="train/evaluate every loss combination")
    common(p)
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--out-dir", default="reports/ablation")
    p.set_defaults(func=cmd_ablation)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        code = exc.code if isinstance(exc.code, int) else 1
        if code == 0:  # --help and friends
            return 0
        print(json.dumps({"error": "usage", "message": "invalid arguments; see --help"}),
              file=sys.stderr)
        return code
    try:
        return args.func(args)
    except AVGroundError as err:
        print(json.dumps({"error": err.code, "message": str(err)}), file=sys.stderr)
        return 1
    except OSError as err:
        print(json.dumps({"error": "io", "message": str(err)}), file=sys.stderr)
        return 1
    except Exception as err:  # contract: every failure emits one parsable line
        print(json.dumps({"error": "internal", "message": f"{type(err).__name__}: {err}"}),
              file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
