"""Residual sketch encoder, shared decoder trunk, modality heads and the
gradient-reversed statue classifier, plus the multi-term training loss."""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import InvalidInputError, ShapeMismatchError

_PROB_EPS = 1e-7
_NORM_EPS = 1e-8


@dataclass
class NetConfig:
    image_size: int = 640
    latent_dim: int = 2050
    base_channels: int = 32
    max_channels: int = 256
    num_res_blocks_per_stage: int = 2
    num_statue_classes: int = 91
    dropout_p: float = 0.5
    grl_lambda: float = 0.1
    # "constant" or "linear" (ramps from 0 to grl_lambda over grl_ramp_steps)
    grl_schedule: str = "constant"
    grl_ramp_steps: int = 0
    # bottom feature map is at most this many pixels across
    bottom_size: int = 5

    def __post_init__(self):
        if self.latent_dim <= 0:
            raise InvalidInputError("latent_dim must be > 0")
        if not 0 <= self.dropout_p < 1:
            raise InvalidInputError("dropout_p must lie in [0, 1)")
        if self.grl_lambda < 0:
            raise InvalidInputError("grl_lambda must be >= 0")
        if self.num_statue_classes < 1 or self.num_res_blocks_per_stage < 1:
            raise InvalidInputError("need >= 1 statue class and >= 1 residual block per stage")
        if self.grl_schedule not in ("constant", "linear"):
            raise InvalidInputError(f"unknown grl_schedule {self.grl_schedule!r}")
        if self.image_size % (2 ** self.num_downsample_stages):
            raise InvalidInputError("image_size must be a multiple of 2**num_downsample_stages")

    @property
    def num_downsample_stages(self) -> int:
        """Halvings until the feature map is at most ``bottom_size`` wide (or odd)."""
        size, stages = self.image_size, 0
        while size > self.bottom_size and size % 2 == 0:
            size //= 2
            stages += 1
        return stages

    @property
    def bottom(self) -> int:
        return self.image_size // 2 ** self.num_downsample_stages

    def channels(self, stage: int) -> int:
        return min(self.base_channels * 2 ** stage, self.max_channels)

    def grl_lambda_at(self, step: int) -> float:
        if self.grl_schedule == "linear" and self.grl_ramp_steps > 0:
            return self.grl_lambda * min(1.0, step / self.grl_ramp_steps)
        return self.grl_lambda

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class LossWeights:
    w_rgb: float = 1.0
    w_depth: float = 1.0
    w_normals: float = 1.0
    w_mask: float = 1.0
    w_adv: float = 0.1

    def __post_init__(self):
        for k, v in asdict(self).items():
            if not (math.isfinite(v) and v >= 0):
                raise InvalidInputError(f"loss weight {k} must be finite and >= 0, got {v}")

    @classmethod
    def rgb_only(cls, w_rgb: float = 1.0) -> "LossWeights":
        return cls(w_rgb, 0.0, 0.0, 0.0, 0.0)


# --------------------------------------------------------- gradient reversal

class _GradReverse(torch.autograd.Function):
    @staticmethod
    def forward(ctx, x, lam):
        ctx.lam = lam
        return x.view_as(x)

    @staticmethod
    def backward(ctx, grad):
        return -ctx.lam * grad, None


def grl(x: torch.Tensor, lam: float) -> torch.Tensor:
    """Identity forward; multiplies the incoming gradient by ``-lam`` backward."""
    if lam < 0:
        raise InvalidInputError("gradient reversal lambda must be >= 0")
    return _GradReverse.apply(x, float(lam))


# ------------------------------------------------------------------ building blocks

def _init_(module: nn.Module, generator: torch.Generator, gain: float = 1.0):
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.Linear)):
            nn.init.kaiming_uniform_(m.weight, a=math.sqrt(5), generator=generator)
            if gain != 1.0:
                with torch.no_grad():
                    m.weight.mul_(gain)
            if m.bias is not None:
                fan_in = m.weight[0].numel()
                bound = 1 / math.sqrt(fan_in)
                nn.init.uniform_(m.bias, -bound, bound, generator=generator)


def feature_norm(x: torch.Tensor) -> torch.Tensor:
    """Per-sample normalization over (C, H, W) with no learnable parameters."""
    return F.group_norm(x, 1, eps=1e-5)


class FeatureNorm(nn.Module):
    def forward(self, x):
        return feature_norm(x)


class ResBlock(nn.Module):
    """Pre-activation residual block (norm, SiLU, conv twice), optional
    stride-2 down- or 2x up-sampling."""

    def __init__(self, cin, cout, resample=None):
        super().__init__()
        self.resample = resample
        stride = 2 if resample == "down" else 1
        self.conv1 = nn.Conv2d(cin, cout, 3, stride, 1)
        self.conv2 = nn.Conv2d(cout, cout, 3, 1, 1)
        self.skip = None
        if cin != cout or resample == "down":
            self.skip = nn.Conv2d(cin, cout, 1, stride)

    def forward(self, x):
        if self.resample == "up":
            x = F.interpolate(x, scale_factor=2, mode="nearest")
        h = self.conv1(F.silu(feature_norm(x)))
        h = self.conv2(F.silu(feature_norm(h)))
        return h + (x if self.skip is None else self.skip(x))


def seeded_dropout(x, p, generator, training):
    if not training or p == 0:
        return x
    if generator is None:
        raise InvalidInputError("training-mode dropout needs an explicit torch.Generator")
    keep = torch.rand(x.shape, generator=generator, dtype=x.dtype) >= p
    return x * keep / (1 - p)


@dataclass
class PredictionBatch:
    """Network outputs for a batch, channels first."""

    rgb: torch.Tensor           # (B, 3, H, W) in [0, 1]
    depth: torch.Tensor         # (B, H, W) >= 0
    normals: torch.Tensor       # (B, 3, H, W) unit length
    mask: torch.Tensor          # (B, H, W) probability
    class_logits: torch.Tensor  # (B, K)

    def to_sets(self) -> list["PredictionSet"]:
        out = []
        for i in range(self.rgb.shape[0]):
            out.append(PredictionSet(
                rgb=self.rgb[i].detach().permute(1, 2, 0).double().numpy(),
                depth=self.depth[i].detach().double().numpy(),
                normals=self.normals[i].detach().permute(1, 2, 0).double().numpy(),
                mask=self.mask[i].detach().double().numpy(),
                class_logits=self.class_logits[i].detach().double().numpy()))
        return out


@dataclass(eq=False)
class PredictionSet:
    """One view's predictions, channels last, as numpy arrays."""

    rgb: np.ndarray
    depth: np.ndarray
    normals: np.ndarray
    mask: np.ndarray
    class_logits: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        h, w = np.shape(self.depth)
        for name, shape in (("rgb", (h, w, 3)), ("normals", (h, w, 3)), ("mask", (h, w))):
            if np.shape(getattr(self, name)) != shape:
                raise ShapeMismatchError(f"{name} has shape {np.shape(getattr(self, name))}, "
                                         f"expected {shape}")


class SketchNet(nn.Module):
    """Sketch -> latent -> shared trunk -> {rgb, depth, normals, mask} heads
    plus a statue classifier fed through gradient reversal."""

    HEADS = {"rgb": 3, "depth": 1, "normals": 3, "mask": 1}

    def __init__(self, config: NetConfig, generator: Optional[torch.Generator] = None):
        super().__init__()
        self.config = c = config
        self.grl_lambda = c.grl_lambda
        stages = c.num_downsample_stages
        bottom_ch = c.channels(stages)

        self.stem = nn.Conv2d(1, c.base_channels, 3, 1, 1)
        enc = []
        for s in range(stages):
            enc.append(ResBlock(c.channels(s), c.channels(s + 1), "down"))
            enc += [ResBlock(c.channels(s + 1), c.channels(s + 1))
                    for _ in range(c.num_res_blocks_per_stage - 1)]
        self.encoder_blocks = nn.ModuleList(enc)
        self.to_latent = nn.Linear(bottom_ch * c.bottom ** 2, c.latent_dim)

        self.from_latent = nn.Linear(c.latent_dim, bottom_ch * c.bottom ** 2)
        trunk = []
        for s in reversed(range(stages)):
            trunk.append(ResBlock(c.channels(s + 1), c.channels(s), "up"))
            trunk += [ResBlock(c.channels(s), c.channels(s))
                      for _ in range(c.num_res_blocks_per_stage - 1)]
        self.trunk_blocks = nn.ModuleList(trunk)

        self.heads = nn.ModuleDict({
            name: nn.Sequential(FeatureNorm(), ResBlock(c.base_channels, c.base_channels), nn.SiLU(),
                                nn.Conv2d(c.base_channels, k, 1))
            for name, k in self.HEADS.items()})
        self.classifier = nn.Linear(bottom_ch, c.num_statue_classes)

        if generator is None:
            generator = torch.Generator().manual_seed(0)
        _init_(self, generator)
        for block in self.modules():
            if isinstance(block, ResBlock):
                with torch.no_grad():
                    block.conv2.weight.mul_(0.1)
        with torch.no_grad():
            # start depth near the depth-zero plane distance of a normalized mesh
            self.heads["depth"][-1].bias.fill_(math.log(math.expm1(2.0)))

    # -- parameter groups -----------------------------------------------------
    def trunk_parameters(self):
        yield from self.from_latent.parameters()
        yield from self.trunk_blocks.parameters()

    def head_parameters(self, name: str):
        return self.classifier.parameters() if name == "classifier" else self.heads[name].parameters()

    def encoder_parameters(self):
        yield from self.stem.parameters()
        yield from self.encoder_blocks.parameters()
        yield from self.to_latent.parameters()

    # -- forward --------------------------------------------------------------
    def _check_input(self, sketch: torch.Tensor) -> torch.Tensor:
        n = self.config.image_size
        if sketch.ndim == 2:
            sketch = sketch[None, None]
        elif sketch.ndim == 3:
            sketch = sketch[:, None]
        if sketch.shape[1:] != (1, n, n):
            raise ShapeMismatchError(f"sketch batch {tuple(sketch.shape)} does not match "
                                     f"image_size {n}")
        return sketch

    def encode(self, sketch: torch.Tensor) -> torch.Tensor:
        """(B, H, W) or (B, 1, H, W) sketches in [0, 1] -> (B, latent_dim)."""
        x = self._check_input(sketch.to(self.stem.weight.dtype))
        h = self.stem(1.0 - x)  # lines become positive activations
        for block in self.encoder_blocks:
            h = block(h)
        return self.to_latent(F.silu(feature_norm(h)).flatten(1))

    def decode(self, latent: torch.Tensor, generator: Optional[torch.Generator] = None,
               reverse_gradient: bool = True) -> PredictionBatch:
        c = self.config
        if latent.ndim != 2 or latent.shape[1] != c.latent_dim:
            raise ShapeMismatchError(f"latent {tuple(latent.shape)} != (B, {c.latent_dim})")
        bottom_ch = c.channels(c.num_downsample_stages)
        t = self.from_latent(latent).view(-1, bottom_ch, c.bottom, c.bottom)

        cls_in = grl(t, self.grl_lambda) if reverse_gradient else t
        # normalized so the encoder cannot raise the classifier loss by scaling alone
        logits = self.classifier(F.silu(feature_norm(cls_in)).mean(dim=(2, 3)))

        for block in self.trunk_blocks:
            t = seeded_dropout(block(t), c.dropout_p, generator, self.training)

        out = {name: head(t) for name, head in self.heads.items()}
        n = out["normals"]
        n = n / torch.sqrt((n * n).sum(1, keepdim=True) + _NORM_EPS ** 2)
        return PredictionBatch(
            rgb=torch.sigmoid(out["rgb"]),
            depth=F.softplus(out["depth"][:, 0]),
            normals=n,
            mask=torch.sigmoid(out["mask"][:, 0]),
            class_logits=logits)

    def forward(self, sketch, generator=None, reverse_gradient=True) -> PredictionBatch:
        return self.decode(self.encode(sketch), generator, reverse_gradient)


def count_parameters(params) -> int:
    return sum(p.numel() for p in params)


# ---------------------------------------------------------------------- loss

def _masked_mean(values, mask, denom):
    return (values * mask).sum() / denom


def total_loss(pred: PredictionBatch, target: dict, labels: torch.Tensor,
               weights: LossWeights):
    """Weighted multi-task loss and its unweighted per-term breakdown.

    ``target`` holds ``rgb`` (B,3,H,W), ``depth`` (B,H,W), ``normals``
    (B,3,H,W) and ``mask`` (B,H,W). Depth and normal terms average over
    ground-truth foreground pixels only. Terms with zero weight are reported
    but contribute no gradient.
    """
    gt_mask = target["mask"].to(pred.depth.dtype)
    if pred.depth.shape != gt_mask.shape or pred.rgb.shape != target["rgb"].shape:
        raise ShapeMismatchError("prediction and target shapes differ")
    if labels.max() >= pred.class_logits.shape[1] or labels.min() < 0:
        raise InvalidInputError("statue label out of range for the classifier")
    fg = gt_mask.sum()
    empty = bool(fg == 0)
    denom = fg.clamp(min=1)

    terms = {"rgb": (pred.rgb - target["rgb"]).abs().mean()}
    terms["depth"] = _masked_mean((pred.depth - target["depth"]).abs(), gt_mask, denom)
    pn, tn = pred.normals, target["normals"].to(pred.normals.dtype)
    cos = (pn * tn).sum(1) / (pn.norm(dim=1) * tn.norm(dim=1)).clamp(min=_NORM_EPS)
    cos = cos.clamp(-1.0, 1.0)
    terms["normals"] = _masked_mean(1 - cos, gt_mask, denom)
    p = pred.mask.clamp(_PROB_EPS, 1 - _PROB_EPS)
    terms["mask"] = -(gt_mask * torch.log(p) + (1 - gt_mask) * torch.log(1 - p)).mean()
    terms["adv"] = F.cross_entropy(pred.class_logits, labels)

    w = {"rgb": weights.w_rgb, "depth": weights.w_depth, "normals": weights.w_normals,
         "mask": weights.w_mask, "adv": weights.w_adv}
    total = sum(w[k] * v for k, v in terms.items() if w[k] > 0)
    if not torch.is_tensor(total):
        total = torch.zeros((), dtype=pred.rgb.dtype)
    breakdown = {k: float(v.detach()) for k, v in terms.items()}
    breakdown["active"] = [k for k in terms if w[k] > 0]
    breakdown["empty_mask"] = empty
    if empty:
        warnings.warn("ground-truth mask is empty; masked loss terms set to 0", RuntimeWarning)
    return total, breakdown
