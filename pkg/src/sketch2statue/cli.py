"""Command-line entry point: ``sketch2statue <command> [flags]``.

Exit codes: 0 success, 2 bad arguments or refused request, 3 data or
checkpoint problem, 4 runtime failure. Errors are reported on stderr as one
JSON object.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np
import torch

from . import __version__
from .config import load_config, section
from .dataset import (DatasetIndex, GenDataConfig, SplitSpec, depth_scale_for,
                      generate_dataset, split_by_statue)
from .errors import (CheckpointError, DataError, InvalidInputError, MeshParseError,
                     Sketch2StatueError)
from .net import LossWeights, NetConfig
from .sketch import external_translate, load_gray, save_gray, sketchify

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 0, 2, 3, 4


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        _report("arguments", "UsageError", message)
        sys.exit(EXIT_USAGE)


def _report(command, kind, message, **extra):
    print(json.dumps({"command": command, "error": kind, "message": message, **extra}),
          file=sys.stderr)


def _emit(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True, default=str))


def _pick(flag, cfg: dict, key, default=None):
    """Flag value if given, else config value, else default."""
    if flag is not None:
        return flag
    return cfg.get(key, default)


def _ids(text):
    if text is None:
        return None
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise InvalidInputError(f"statue ids must be comma-separated integers, got {text!r}") from None


# ----------------------------------------------------------------- commands

def cmd_gen_data(args, doc) -> int:
    cfg = section(doc, "gen_data")
    meshes = list(cfg.get("meshes", []))
    if args.mesh:
        meshes = list(args.mesh)
    if args.placeholders is not None:
        meshes = [f"placeholder:{k}" for k in range(args.placeholders)]
    out = _pick(args.out, cfg, "out")
    if out is None:
        raise InvalidInputError("gen-data needs --out (or gen_data.out in the config)")
    fields = {k: v for k, v in cfg.items() if k not in ("out", "workers")}
    fields.update(meshes=meshes)
    for key, flag in (("views", args.views), ("resolution", args.resolution),
                      ("elevation_deg", args.elevation), ("half_extent", args.half_extent),
                      ("sketch_method", args.sketch_method),
                      ("placeholder_subdivisions", args.subdivisions), ("seed", args.seed)):
        if flag is not None:
            fields[key] = flag
    gen = GenDataConfig(**fields)
    written = generate_dataset(gen, out, workers=_pick(args.workers, cfg, "workers"))
    index = DatasetIndex.load(out)
    _emit({"dataset": str(out), "files_written": written, "samples": len(index),
           "statues": len(index.statue_ids)})
    return EXIT_OK


def cmd_sketchify(args, doc) -> int:
    cfg = section(doc, "sketchify")
    command = _pick(args.external, cfg, "external_command")
    if command:
        sk = external_translate(args.input, command)
    else:
        method = _pick(args.method, cfg, "method", "canny")
        params = dict(cfg.get("params", {}))
        for key in ("low", "high", "sigma", "k", "tau"):
            value = getattr(args, key)
            if value is not None:
                params[key] = value
        try:
            sk = sketchify(load_gray(args.input), method, **params)
        except TypeError as exc:  # parameter not accepted by this method
            raise InvalidInputError(str(exc)) from exc
    save_gray(sk.pixels, args.output)
    _emit({"output": str(args.output), "method": sk.method_tag, "blank": sk.is_blank()})
    return EXIT_OK


def _train_config(args, doc, index: DatasetIndex):
    from .train import TrainConfig, desk_profile

    cfg = section(doc, "train")
    profile = _pick(args.profile, cfg, "profile", "full")
    base = desk_profile() if profile == "desk" else TrainConfig()
    fields = {k: v for k, v in cfg.items() if k not in ("profile", "net", "loss_weights")}
    net = asdict(base.net)
    net.update(cfg.get("net", {}))
    if "image_size" not in cfg.get("net", {}):
        net["image_size"] = index.resolution
    weights = asdict(base.loss_weights)
    weights.update(cfg.get("loss_weights", {}))
    for key, flag in (("max_steps", args.max_steps), ("batch_size", args.batch_size),
                      ("learning_rate", args.lr), ("warmup_samples", args.warmup_samples),
                      ("checkpoint_every", args.checkpoint_every), ("seed", args.seed)):
        if flag is not None:
            fields[key] = flag
    if args.flip:
        fields["flip_augment"] = True
    return replace(base, **fields, net=NetConfig(**net), loss_weights=LossWeights(**weights))


def _split(args, doc, index: DatasetIndex) -> SplitSpec:
    cfg = section(doc, "split")
    explicit = _ids(args.train_statues)
    seed = _pick(args.split_seed, cfg, "seed", 0)
    if explicit is not None:
        return SplitSpec(tuple(sorted(explicit)), tuple(_ids(args.val_statues) or ()),
                         tuple(_ids(args.test_statues) or ()), seed)
    fractions = cfg.get("fractions", (0.827, 0.091, 0.082))
    if args.fractions:
        fractions = [float(f) for f in args.fractions.split(",")]
    return split_by_statue(index, fractions, seed)


def cmd_train(args, doc) -> int:
    from .train import train

    index = DatasetIndex.load(args.dataset)
    split = _split(args, doc, index)
    config = _train_config(args, doc, index)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "split.json").write_text(json.dumps(split.to_dict(), indent=2) + "\n")
    result = train(index, split, config, out, resume_from=args.resume)
    _emit({"checkpoint": str(result.checkpoint), "metrics_log": str(result.log_path),
           "steps": result.steps, "train_statues": list(split.train_statues),
           "val_statues": list(split.val_statues), "test_statues": list(split.test_statues)})
    return EXIT_OK


def cmd_eval(args, doc) -> int:
    from .train import evaluate, load_checkpoint

    index = DatasetIndex.load(args.dataset)
    ck = load_checkpoint(args.checkpoint)
    statues = _ids(args.statues)
    if statues is None:
        key = f"{args.split}_statues"
        statues = list(ck.header.get("split", {}).get(key, []))
    metrics = evaluate(ck, index, statues, allow_train=args.allow_train,
                       max_views=args.max_views or 0)
    if args.out:
        Path(args.out).write_text(json.dumps(metrics, indent=2, sort_keys=True, default=str) + "\n")
    _emit(metrics)
    return EXIT_OK


def _save_predictions(pred, out: Path, depth_scale: float) -> list[str]:
    from PIL import Image

    out.mkdir(parents=True, exist_ok=True)
    u8 = lambda a: np.round(np.clip(a, 0, 1) * 255).astype(np.uint8)  # noqa: E731
    depth = np.round(np.clip(pred.depth * depth_scale, 0, 65535)).astype(np.uint16)
    images = {"rgb": u8(pred.rgb), "depth": depth, "normals": u8((pred.normals + 1) / 2),
              "mask": u8(pred.mask)}
    for name, arr in images.items():
        Image.fromarray(arr).save(out / f"{name}.png")
    (out / "class_logits.json").write_text(json.dumps(pred.class_logits.tolist()) + "\n")
    return [f"{n}.png" for n in images] + ["class_logits.json"]


def cmd_infer(args, doc) -> int:
    from .recon import infer, save_panel
    from .train import load_checkpoint

    torch.manual_seed(args.seed or 0)
    ck = load_checkpoint(args.checkpoint)
    sketch = load_gray(args.sketch)
    pred = infer(sketch, ck)
    out = Path(args.out)
    scale = ck.header.get("depth_scale", depth_scale_for(2.0))
    files = _save_predictions(pred, out, scale)
    if args.panel:
        save_panel(sketch, pred, out / "panel.png")
        files.append("panel.png")
    _emit({"out": str(out), "files": files, "image_size": ck.model.config.image_size})
    return EXIT_OK


def cmd_reconstruct(args, doc) -> int:
    from .recon import export_ply, frontal_camera, infer, reconstruct_from_predictions, save_panel
    from .train import load_checkpoint

    cfg = section(doc, "reconstruct")
    torch.manual_seed(args.seed or 0)
    ck = load_checkpoint(args.checkpoint)
    sketch = load_gray(args.sketch)
    pred = infer(sketch, ck)
    camera = frontal_camera(ck.model.config.image_size,
                            azimuth_deg=_pick(args.azimuth, cfg, "azimuth_deg", 0.0),
                            elevation_deg=_pick(args.elevation, cfg, "elevation_deg", 0.0),
                            ortho_half_extent=_pick(args.half_extent, cfg, "half_extent", 1.1))
    threshold = _pick(args.threshold, cfg, "mask_threshold", 0.5)
    rec = reconstruct_from_predictions(pred, camera, threshold)
    result = {"status": rec.status, "points": len(rec.cloud), "threshold": rec.threshold}
    if rec.status == "ok":
        result["ply"] = str(export_ply(rec.cloud, args.out))
    if args.panel:
        result["panel"] = str(save_panel(sketch, pred, args.panel, rec.threshold))
    _emit(result)
    return EXIT_OK


# ------------------------------------------------------------------- parser

def _common(p):
    p.add_argument("--config", help="JSON run configuration; flags override its values")
    p.add_argument("--seed", type=int, help="random seed (generation or training seed)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sketch2statue",
                     description="Statue point clouds from single line-drawing sketches.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="render turntable views and sketches into a dataset")
    _common(p)
    p.add_argument("--out", help="dataset root directory")
    p.add_argument("--mesh", action="append", help="OBJ/PLY mesh path (repeatable)")
    p.add_argument("--placeholders", type=int,
                   help="use N seeded synthetic figures instead of mesh files")
    p.add_argument("--views", type=int, help="turntable views per statue")
    p.add_argument("--resolution", type=int, help="image size in pixels")
    p.add_argument("--elevation", type=float, help="camera elevation in degrees")
    p.add_argument("--half-extent", type=float, help="orthographic half extent (world units)")
    p.add_argument("--sketch-method", choices=["canny", "dog", "laplacian"],
                   help="filter producing the training sketches")
    p.add_argument("--subdivisions", type=int, help="icosphere level of synthetic figures")
    p.add_argument("--workers", type=int, help="render processes (default: CPU count)")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("sketchify", help="turn an image into a line drawing")
    _common(p)
    p.add_argument("--input", required=True, help="input image")
    p.add_argument("--output", required=True, help="output sketch PNG")
    p.add_argument("--method", choices=["canny", "dog", "laplacian"], help="filter (default canny)")
    p.add_argument("--low", type=float, help="canny low threshold")
    p.add_argument("--high", type=float, help="canny high threshold")
    p.add_argument("--sigma", type=float, help="canny/dog blur sigma")
    p.add_argument("--k", type=float, help="dog sigma ratio")
    p.add_argument("--tau", type=float, help="dog/laplacian threshold")
    p.add_argument("--external", help="external translator command with {in} and {out}")
    p.set_defaults(func=cmd_sketchify)

    p = sub.add_parser("train", help="train the network on a dataset")
    _common(p)
    p.add_argument("--dataset", required=True, help="dataset root")
    p.add_argument("--out", required=True, help="run directory (log, checkpoints)")
    p.add_argument("--profile", choices=["full", "desk"], help="base settings (default full)")
    p.add_argument("--max-steps", type=int, help="optimizer steps")
    p.add_argument("--batch-size", type=int, help="samples per step")
    p.add_argument("--lr", type=float, help="learning rate")
    p.add_argument("--warmup-samples", type=int, help="samples trained on RGB loss only")
    p.add_argument("--checkpoint-every", type=int, help="steps between checkpoints")
    p.add_argument("--flip", action="store_true", help="random horizontal flips")
    p.add_argument("--fractions", help="train,val,test statue fractions")
    p.add_argument("--split-seed", type=int, help="seed of the statue shuffle")
    p.add_argument("--train-statues", help="explicit comma-separated training statue ids")
    p.add_argument("--val-statues", help="explicit validation ids (with --train-statues)")
    p.add_argument("--test-statues", help="explicit test ids (with --train-statues)")
    p.add_argument("--resume", help="checkpoint to resume from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="metrics of a checkpoint on held-out statues")
    _common(p)
    p.add_argument("--checkpoint", required=True, help="checkpoint file")
    p.add_argument("--dataset", required=True, help="dataset root")
    p.add_argument("--statues", help="comma-separated statue ids (default: --split)")
    p.add_argument("--split", choices=["val", "test"], default="test",
                   help="split stored in the checkpoint to evaluate (default test)")
    p.add_argument("--allow-train", action="store_true",
                   help="permit statues seen in training (overfit diagnostics)")
    p.add_argument("--max-views", type=int, help="views per statue (default all)")
    p.add_argument("--out", help="write metrics JSON here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="predict rgb/depth/normals/mask images from a sketch")
    _common(p)
    p.add_argument("--checkpoint", required=True, help="checkpoint file")
    p.add_argument("--sketch", required=True, help="sketch image")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--panel", action="store_true", help="also write panel.png")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("reconstruct", help="sketch to point cloud (PLY)")
    _common(p)
    p.add_argument("--checkpoint", required=True, help="checkpoint file")
    p.add_argument("--sketch", required=True, help="sketch image")
    p.add_argument("--out", required=True, help="output PLY path")
    p.add_argument("--threshold", type=float, help="mask probability threshold (default 0.5)")
    p.add_argument("--azimuth", type=float, help="camera azimuth in degrees (default 0)")
    p.add_argument("--elevation", type=float, help="camera elevation in degrees (default 0)")
    p.add_argument("--half-extent", type=float, help="orthographic half extent (default 1.1)")
    p.add_argument("--panel", help="write a diagnostic panel PNG here")
    p.set_defaults(func=cmd_reconstruct)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        doc = load_config(args.config)
        return args.func(args, doc)
    except InvalidInputError as exc:
        _report(args.command, type(exc).__name__, str(exc))
        return EXIT_USAGE
    except (DataError, MeshParseError, CheckpointError, FileNotFoundError) as exc:
        _report(args.command, type(exc).__name__, str(exc))
        return EXIT_DATA
    except Sketch2StatueError as exc:
        _report(args.command, type(exc).__name__, str(exc),
                diagnostics=getattr(exc, "diagnostics", None))
        return EXIT_RUNTIME
    except OSError as exc:
        _report(args.command, type(exc).__name__, str(exc))
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
