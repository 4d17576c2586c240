"""Training loop (RGB-only warm-up, then the full loss), checkpoints and evaluation.

Every random choice is a pure function of ``(seed, step)`` or
``(seed, epoch)``, so a run resumed from a checkpoint retraces the
uninterrupted run exactly.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import torch

from .dataset import DatasetIndex, SplitSpec, ViewRecord, ViewSample
from .errors import CheckpointError, DisjointnessError, InvalidInputError, TrainingError
from .geometry import backproject, chamfer_distance
from .net import LossWeights, NetConfig, PredictionSet, SketchNet, total_loss

CHECKPOINT_FORMAT = "sketch2statue-checkpoint"
CHECKPOINT_VERSION = 1
_HEAD_GROUPS = ("rgb", "depth", "normals", "mask", "classifier")


@dataclass
class TrainConfig:
    batch_size: int = 12
    learning_rate: float = 1e-5
    betas: tuple = (0.9, 0.999)
    warmup_samples: int = 60000
    max_steps: int = 1000
    checkpoint_every: int = 100
    seed: int = 0
    flip_augment: bool = False
    val_every_epochs: int = 1
    # cap on validation views per statue (0 = all)
    val_max_views: int = 8
    # decoded samples kept in memory (0 disables the cache)
    cache_samples: int = 4096
    loss_weights: LossWeights = field(default_factory=LossWeights)
    net: NetConfig = field(default_factory=NetConfig)

    def __post_init__(self):
        if isinstance(self.loss_weights, dict):
            self.loss_weights = LossWeights(**self.loss_weights)
        if isinstance(self.net, dict):
            self.net = NetConfig(**self.net)
        self.betas = tuple(self.betas)
        if self.batch_size < 1:
            raise InvalidInputError("batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise InvalidInputError("learning_rate must be > 0")
        if self.warmup_samples < 0 or self.max_steps < 0 or self.checkpoint_every < 1:
            raise InvalidInputError("warmup_samples, max_steps must be >= 0 and checkpoint_every >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d


def desk_profile(**overrides) -> TrainConfig:
    """CPU-sized settings: 64 px inputs, a slim network, short warm-up.

    Dropout is lowered to 0.1: at 0.5 after every trunk block the slim
    network cannot overfit two statues within a desk budget.
    """
    net = NetConfig(image_size=64, base_channels=8, max_channels=64, latent_dim=2050,
                    num_statue_classes=2, dropout_p=0.1)
    cfg = dict(batch_size=8, learning_rate=1e-3, warmup_samples=800, max_steps=500,
               checkpoint_every=100, net=net)
    cfg.update(overrides)
    return TrainConfig(**cfg)


# ------------------------------------------------------------------- seeding

def _derive_seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


def _torch_generator(*parts: int) -> torch.Generator:
    return torch.Generator().manual_seed(_derive_seed(*parts))


# ------------------------------------------------------------------- loading

class _SampleSource:
    """Decodes views of an allowed statue set and logs which statues it served."""

    def __init__(self, index: DatasetIndex, allowed, cache_size: int):
        self.index = index
        self.allowed = frozenset(allowed)
        self.cache_size = cache_size
        self._cache: dict = {}
        self.consumed: set = set()

    def get(self, record: ViewRecord) -> ViewSample:
        if record.statue_id not in self.allowed:
            raise DisjointnessError(f"statue {record.statue_id} is not in the allowed split")
        self.consumed.add(record.statue_id)
        key = (record.statue_id, record.view_index)
        sample = self._cache.get(key)
        if sample is None:
            sample = self.index.load_sample(record)
            if len(self._cache) < self.cache_size:
                self._cache[key] = sample
        return sample


def _to_batch(samples: list[ViewSample], labels: list[int], flips=None):
    sk = np.stack([s.sketch for s in samples])
    rgb = np.stack([s.rgb for s in samples])
    depth = np.stack([s.depth for s in samples])
    normals = np.stack([s.normals for s in samples])
    mask = np.stack([s.mask for s in samples]).astype(np.float64)
    if flips is not None and np.any(flips):
        f = np.asarray(flips, bool)
        sk[f], rgb[f], depth[f], mask[f] = (sk[f][:, :, ::-1], rgb[f][:, :, ::-1],
                                            depth[f][:, :, ::-1], mask[f][:, :, ::-1])
        nf = normals[f][:, :, ::-1].copy()
        nf[..., 0] *= -1  # mirroring x flips the normal's x component
        normals[f] = nf
    t = lambda a: torch.from_numpy(np.ascontiguousarray(a)).float()  # noqa: E731
    target = {"rgb": t(rgb).permute(0, 3, 1, 2), "depth": t(depth),
              "normals": t(normals).permute(0, 3, 1, 2), "mask": t(mask)}
    return t(sk), target, torch.tensor(labels, dtype=torch.long)


# --------------------------------------------------------------- checkpoints

def _atomic_save(obj, path: Path) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(obj, tmp)
    os.replace(tmp, path)


def save_checkpoint(path, model: SketchNet, header: dict, optimizer=None, step: int = 0,
                    samples_seen: int = 0) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    _atomic_save({"header": json.dumps(header, sort_keys=True),
                  "model": model.state_dict(),
                  "optimizer": None if optimizer is None else optimizer.state_dict(),
                  "step": step, "samples_seen": samples_seen}, path)
    return path


@dataclass
class LoadedCheckpoint:
    model: SketchNet
    header: dict
    step: int
    samples_seen: int
    optimizer_state: Optional[dict]

    @property
    def train_statues(self) -> list[int]:
        return list(self.header.get("split", {}).get("train_statues", []))


def load_checkpoint(path) -> LoadedCheckpoint:
    """Load a checkpoint written by :func:`train`; the model is in eval mode."""
    if isinstance(path, LoadedCheckpoint):
        return path
    try:
        blob = torch.load(path, map_location="cpu", weights_only=False)
        header = json.loads(blob["header"])
    except FileNotFoundError as exc:
        raise CheckpointError(f"checkpoint not found: {path}") from exc
    except Exception as exc:  # torch raises a variety of unpickling errors
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if header.get("format") != CHECKPOINT_FORMAT or header.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path} is not a version-{CHECKPOINT_VERSION} checkpoint")
    model = SketchNet(NetConfig(**header["net_config"]))
    try:
        model.load_state_dict(blob["model"])
    except RuntimeError as exc:
        raise CheckpointError(f"{path}: parameters do not match the stored config: {exc}") from exc
    model.eval()
    return LoadedCheckpoint(model, header, int(blob["step"]), int(blob["samples_seen"]),
                            blob.get("optimizer"))


# ------------------------------------------------------------------ training

@dataclass
class TrainResult:
    checkpoint: Path
    log_path: Path
    steps: int
    consumed_statues: list


def _grad_norms(model: SketchNet) -> dict:
    out = {}
    for name in _HEAD_GROUPS:
        sq = 0.0
        for p in model.head_parameters(name):
            if p.grad is not None:
                sq += float((p.grad.double() ** 2).sum())
        out[name] = math.sqrt(sq)
    return out


def _json_line(obj) -> str:
    return json.dumps(obj, sort_keys=True) + "\n"


def _truncate_log(log_path: Path, step: int) -> None:
    if not log_path.is_file():
        return
    keep = [ln for ln in log_path.read_text().splitlines(keepends=True)
            if ln.strip() and json.loads(ln)["step"] <= step]
    log_path.write_text("".join(keep))


def train(index: DatasetIndex, split: SplitSpec, config: TrainConfig, out_dir,
          resume_from=None, progress: Optional[Callable[[dict], None]] = None) -> TrainResult:
    """Train a :class:`SketchNet` on the training statues of ``split``.

    Writes ``metrics.jsonl`` (one line per step plus one per validation
    pass), ``checkpoints/step_<k>.pt`` every ``checkpoint_every`` steps and
    at the end, and ``access.json`` listing the statues the loop read.
    """
    out_dir = Path(out_dir)
    train_ids = sorted(split.train_statues)
    missing = set(train_ids) - set(index.statue_ids)
    if missing or not train_ids:
        raise InvalidInputError(f"training statues missing from the dataset: {sorted(missing)}")
    if config.net.image_size != index.resolution:
        raise InvalidInputError(f"net image_size {config.net.image_size} != dataset resolution "
                                f"{index.resolution}")
    net_cfg = replace(config.net, num_statue_classes=len(train_ids))
    config = replace(config, net=net_cfg)
    label_of = {s: i for i, s in enumerate(train_ids)}

    header = {"format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION,
              "net_config": net_cfg.to_dict(), "train_config": config.to_dict(),
              "metadata_hash": index.metadata_hash(), "split": split.to_dict(),
              "depth_scale": index.metadata["depth_scale"]}

    torch.manual_seed(_derive_seed(config.seed, 0))
    model = SketchNet(net_cfg, _torch_generator(config.seed, 1))
    optim = torch.optim.Adam(model.parameters(), lr=config.learning_rate, betas=config.betas)
    step, samples_seen = 0, 0

    ckpt_dir = out_dir / "checkpoints"
    log_path = out_dir / "metrics.jsonl"
    out_dir.mkdir(parents=True, exist_ok=True)
    if resume_from is not None:
        ck = load_checkpoint(resume_from)
        stored = dict(ck.header)
        if (stored["net_config"] != header["net_config"]
                or stored["metadata_hash"] != header["metadata_hash"]
                or stored["split"] != header["split"]
                or stored["train_config"]["seed"] != config.seed):
            raise CheckpointError("checkpoint was produced by a different config, dataset or split")
        model.load_state_dict(ck.model.state_dict())
        optim.load_state_dict(ck.optimizer_state)
        step, samples_seen = ck.step, ck.samples_seen
        source_log = Path(resume_from).parent.parent / "metrics.jsonl"
        if not log_path.exists() and source_log.is_file():
            log_path.write_bytes(source_log.read_bytes())
        _truncate_log(log_path, step)
    elif log_path.exists():
        log_path.unlink()

    records = index.records_for(train_ids)
    source = _SampleSource(index, train_ids, config.cache_samples)
    val_ids = sorted(split.val_statues)
    val_source = _SampleSource(index, val_ids, config.cache_samples) if val_ids else None
    bpe = math.ceil(len(records) / config.batch_size)
    last_good = None

    with log_path.open("a") as log:
        while step < config.max_steps:
            epoch, b = divmod(step, bpe)
            order = np.random.default_rng([config.seed, 3, epoch]).permutation(len(records))
            picked = [records[i] for i in order[b * config.batch_size:(b + 1) * config.batch_size]]
            flips = None
            if config.flip_augment:
                flips = np.random.default_rng([config.seed, 4, step]).random(len(picked)) < 0.5
            sk, target, labels = _to_batch([source.get(r) for r in picked],
                                           [label_of[r.statue_id] for r in picked], flips)

            phase = 1 if samples_seen < config.warmup_samples else 2
            weights = LossWeights.rgb_only(config.loss_weights.w_rgb) if phase == 1 \
                else config.loss_weights
            model.train()
            model.grl_lambda = net_cfg.grl_lambda_at(step)
            optim.zero_grad(set_to_none=True)
            pred = model(sk, generator=_torch_generator(config.seed, 2, step))
            loss, terms = total_loss(pred, target, labels, weights)
            if not torch.isfinite(loss):
                raise TrainingError(f"non-finite loss at step {step + 1}; last good checkpoint: "
                                    f"{last_good or 'none written'}")
            loss.backward()
            grads = _grad_norms(model)
            optim.step()
            step += 1
            samples_seen += len(picked)
            entry = {"step": step, "epoch": epoch, "phase": phase, "samples_seen": samples_seen,
                     "loss": float(loss.detach()), "grl_lambda": model.grl_lambda,
                     "terms": {k: terms[k] for k in ("rgb", "depth", "normals", "mask", "adv")},
                     "active": terms["active"], "head_grad_norms": grads}
            log.write(_json_line(entry))
            if progress:
                progress(entry)

            epoch_done = step % bpe == 0
            if (val_source is not None and config.val_every_epochs > 0 and epoch_done
                    and (epoch + 1) % config.val_every_epochs == 0):
                val = _validate(model, index, val_source, val_ids, config.val_max_views)
                log.write(_json_line({"step": step, "epoch": epoch, "val": val}))
            log.flush()
            if step % config.checkpoint_every == 0 or step == config.max_steps:
                last_good = save_checkpoint(ckpt_dir / f"step_{step:07d}.pt", model, header,
                                            optim, step, samples_seen)

    final = ckpt_dir / f"step_{step:07d}.pt"
    if not final.is_file():
        save_checkpoint(final, model, header, optim, step, samples_seen)
    consumed = sorted(source.consumed)
    (out_dir / "access.json").write_text(json.dumps(
        {"train_statues_consumed": consumed, "val_statues_consumed":
         sorted(val_source.consumed) if val_source else []}, indent=2) + "\n")
    return TrainResult(final, log_path, step, consumed)


# ---------------------------------------------------------------- evaluation

def _subsample(points: np.ndarray, cap: int, seed: int) -> np.ndarray:
    if cap <= 0 or len(points) <= cap:
        return points
    idx = np.random.default_rng(seed).choice(len(points), cap, replace=False)
    return points[np.sort(idx)]


def view_metrics(pred: PredictionSet, sample: ViewSample, threshold: float = 0.5,
                 chamfer_points: int = 2000) -> dict:
    """Mask IoU, masked depth RMSE, masked normal angle (deg), RGB PSNR and chamfer."""
    gt = sample.mask > 0
    pm = pred.mask >= threshold
    union = np.count_nonzero(gt | pm)
    iou = 1.0 if union == 0 else np.count_nonzero(gt & pm) / union
    if gt.any():
        rmse = float(np.sqrt(np.mean((pred.depth[gt] - sample.depth[gt]) ** 2)))
        pn = pred.normals[gt]
        pn = pn / np.maximum(np.linalg.norm(pn, axis=1, keepdims=True), 1e-12)
        cos = np.clip(np.sum(pn * sample.normals[gt], axis=1), -1.0, 1.0)
        angle = float(np.degrees(np.arccos(cos)).mean())
    else:
        rmse, angle = 0.0, 0.0
    mse = float(np.mean((pred.rgb - sample.rgb) ** 2))
    psnr = math.inf if mse == 0 else 10 * math.log10(1.0 / mse)
    a = backproject(pred.depth, pm, sample.camera).points
    b = backproject(sample.depth, gt, sample.camera).points
    if len(a) and len(b):
        chamfer = chamfer_distance(_subsample(a, chamfer_points, 0),
                                   _subsample(b, chamfer_points, 1))
    else:
        chamfer = 0.0 if len(a) == len(b) else math.inf
    return {"mask_iou": float(iou), "depth_rmse": rmse, "normal_angle_deg": angle,
            "rgb_psnr": psnr, "chamfer": chamfer}


def _mean_metrics(rows: list[dict]) -> dict:
    return {k: float(np.mean([r[k] for r in rows])) for k in rows[0]}


@torch.no_grad()
def _predict(model: SketchNet, samples: list[ViewSample]) -> list[PredictionSet]:
    model.eval()
    sk = torch.from_numpy(np.stack([s.sketch for s in samples])).float()
    return model(sk).to_sets()


def _validate(model, index, source, statues, max_views) -> dict:
    rows = []
    for s in statues:
        recs = [r for r in index.records if r.statue_id == s]
        if max_views > 0:
            recs = recs[::max(1, math.ceil(len(recs) / max_views))]
        samples = [source.get(r) for r in recs]
        rows += [view_metrics(p, smp, chamfer_points=500)
                 for p, smp in zip(_predict(model, samples), samples)]
    model.train()
    return _mean_metrics(rows)


def evaluate(checkpoint, index: DatasetIndex, statues, allow_train: bool = False,
             predictor: Optional[Callable[[ViewSample], PredictionSet]] = None,
             max_views: int = 0, batch_size: int = 16, threshold: float = 0.5) -> dict:
    """Per-statue and aggregate metrics on ``statues``.

    Refuses statues the checkpoint was trained on unless ``allow_train``.
    ``predictor`` replaces the network (used to inject known predictions);
    ``checkpoint`` may then be ``None``.
    """
    statues = sorted(set(int(s) for s in statues))
    if not statues:
        raise InvalidInputError("evaluate needs at least one statue")
    unknown = set(statues) - set(index.statue_ids)
    if unknown:
        raise InvalidInputError(f"unknown statue ids: {sorted(unknown)}")
    model = None
    if checkpoint is not None:
        ck = load_checkpoint(checkpoint)
        overlap = set(statues) & set(ck.train_statues)
        if overlap and not allow_train:
            raise DisjointnessError(f"statues {sorted(overlap)} were used for training")
        if ck.header.get("net_config", {}).get("image_size") != index.resolution:
            raise CheckpointError("checkpoint image_size does not match the dataset resolution")
        model = ck.model
    elif predictor is None:
        raise InvalidInputError("need a checkpoint or a predictor")

    per_statue = {}
    for s in statues:
        recs = index.records_for([s])
        if max_views > 0:
            recs = recs[::max(1, math.ceil(len(recs) / max_views))]
        rows = []
        for i in range(0, len(recs), batch_size):
            samples = [index.load_sample(r) for r in recs[i:i + batch_size]]
            preds = [predictor(x) for x in samples] if predictor else _predict(model, samples)
            rows += [view_metrics(p, x, threshold) for p, x in zip(preds, samples)]
        per_statue[s] = _mean_metrics(rows)
    return {"per_statue": per_statue, "aggregate": _mean_metrics(list(per_statue.values())),
            "statues": statues}
