"""End-to-end acceptance checks, one test per criterion.

Each test records a one-line PASS/FAIL verdict that is repeated in the
terminal summary. The dataset-arithmetic and overfit checks take minutes.
"""

import json
import math
import os
import time

import numpy as np
import pytest
import torch

from conftest import record
from test_net import _micro_net, random_target, sampled_gradient_check
from sketch2statue.cli import main as cli_main
from sketch2statue.dataset import (DatasetIndex, GenDataConfig, SplitSpec, generate_dataset,
                                   resolve_mesh, split_by_statue)
from sketch2statue.geometry import (OrthoCamera, PointCloud, backproject, box, chamfer_distance,
                                    icosphere, load_point_cloud, normalize_mesh,
                                    placeholder_statue, point_mesh_distance, rasterize,
                                    sample_surface)
from sketch2statue.net import LossWeights, PredictionBatch, grl, total_loss
from sketch2statue.recon import export_ply, reconstruct
from sketch2statue.train import TrainConfig, desk_profile, evaluate, train

DEFAULT_FRACTIONS = (0.827, 0.091, 0.082)


def tree_bytes(root):
    out = {}
    for dirpath, _, files in os.walk(root):
        for f in files:
            p = os.path.join(dirpath, f)
            with open(p, "rb") as fh:
                out[os.path.relpath(p, root)] = fh.read()
    return out


# -------------------------------------------------------------- criterion 1

@pytest.mark.criterion(1)
def test_c01_dataset_arithmetic(tmp_path):
    full = tmp_path / "full"
    # cheapest meshes and 8 px images: this checks counting, not image quality
    code = cli_main(["gen-data", "--out", str(full), "--placeholders", "110", "--views", "360",
                     "--resolution", "8", "--subdivisions", "0", "--workers", "1"])
    index = DatasetIndex.load(full)
    split = split_by_statue(index, DEFAULT_FRACTIONS, seed=0)
    statues = (len(split.train_statues), len(split.val_statues), len(split.test_statues))
    samples = split.sample_counts(index)

    t0 = time.perf_counter()
    smoke = GenDataConfig(meshes=[f"placeholder:{k}" for k in range(4)], views=8, resolution=64)
    generate_dataset(smoke, tmp_path / "smoke", workers=1)
    smoke_s = time.perf_counter() - t0
    smoke_n = len(DatasetIndex.load(tmp_path / "smoke"))

    ok = (code == 0 and len(index) == 39600 and statues == (91, 10, 9)
          and samples == (32760, 3600, 3240) and smoke_n == 32 and smoke_s < 300)
    record(1, ok, f"samples={len(index)} statues={statues} images={samples} "
                  f"smoke={smoke_n} in {smoke_s:.1f}s")
    assert ok


# -------------------------------------------------------------- criterion 2

@pytest.mark.criterion(2)
def test_c02_geometry_round_trip():
    bound = 2 * 1.1 / 128 + 1e-6
    rng = np.random.default_rng(2)
    worst = {}
    for name, mesh in (("sphere", icosphere(4)), ("cube", normalize_mesh(box()))):
        d_max = 0.0
        for az, el in [(0, 0), (90, 0)] + [(rng.uniform(0, 360), rng.uniform(-60, 60))
                                           for _ in range(3)]:
            cam = OrthoCamera(az, el, 1.1, 2.0, 128)
            s = rasterize(mesh, cam)
            pts = backproject(s.depth, s.mask, cam).points
            d_max = max(d_max, float(point_mesh_distance(pts, mesh).max()))
        worst[name] = d_max
    ok = all(v <= bound for v in worst.values())
    record(2, ok, f"max dist sphere={worst['sphere']:.2e} cube={worst['cube']:.2e} "
                  f"bound={bound:.2e}")
    assert ok


# -------------------------------------------------------------- criterion 3

def _rot_y(deg):
    t = np.radians(deg)
    c, s = np.cos(t), np.sin(t)
    return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]])


@pytest.mark.criterion(3)
def test_c03_rotation_equivariance():
    mesh = placeholder_statue(3)
    angles = np.random.default_rng(3).uniform(0, 360, 8)
    agreement = []
    for a in angles:
        by_mesh = rasterize(mesh.transformed(_rot_y(a)), OrthoCamera(0.0, resolution=256))
        by_cam = rasterize(mesh, OrthoCamera(a, resolution=256))
        agreement.append(float(np.mean(by_mesh.mask == by_cam.mask)))
    ok = min(agreement) >= 0.99
    record(3, ok, f"min mask agreement {min(agreement):.5f} over 8 angles at 256 px")
    assert ok


# -------------------------------------------------------------- criterion 4

@pytest.mark.criterion(4)
def test_c04_gradient_reversal():
    x = torch.randn(40, dtype=torch.float64, generator=torch.Generator().manual_seed(4))
    f = lambda v: (torch.sin(v) * v ** 2).sum()  # noqa: E731
    worst, identity = 0.0, True
    for lam in (0.0, 0.1, 1.0):
        xr = x.clone().requires_grad_(True)
        y = grl(xr, lam)
        identity &= bool(torch.equal(y, x))
        f(y).backward()
        analytic = xr.grad
        h = 1e-6
        fd = torch.stack([(f(x + h * e) - f(x - h * e)) / (2 * h)
                          for e in torch.eye(len(x), dtype=torch.float64)])
        expected = -lam * fd
        if lam == 0:
            worst = max(worst, float(analytic.abs().max()))
        else:
            worst = max(worst, float(((analytic - expected).abs()
                                      / expected.abs().clamp(min=1e-12)).max()))
    ok = identity and worst <= 1e-5
    record(4, ok, f"forward identity={identity}, worst relative backward error {worst:.2e}")
    assert ok


# -------------------------------------------------------------- criterion 5

@pytest.mark.criterion(5)
def test_c05_full_loss_gradient_check():
    net, x, target, labels = _micro_net()
    errors = sampled_gradient_check(net, x, target, labels, LossWeights(1, 1, 1, 1, 0.5),
                                    count=150, seed=5)
    ok = len(errors) >= 100 and errors.max() <= 1e-3
    record(5, ok, f"{len(errors)} parameters, max relative error {errors.max():.2e}")
    assert ok


# -------------------------------------------------------------- criterion 6

def _batch(t, logits):
    return PredictionBatch(rgb=t["rgb"], depth=t["depth"], normals=t["normals"],
                           mask=t["mask"], class_logits=logits)


@pytest.mark.criterion(6)
def test_c06_loss_identities():
    t = random_target(2, 8, seed=6)
    labels = torch.tensor([0, 2])
    saturated = torch.full((2, 3), -50.0, dtype=torch.float64)
    saturated[0, 0] = saturated[1, 2] = 50.0
    _, perfect = total_loss(_batch(t, saturated), t, labels, LossWeights())
    worst = max(perfect[k] for k in ("rgb", "depth", "normals", "mask", "adv"))

    half = dict(t, mask=torch.full_like(t["mask"], 0.5))
    _, b = total_loss(_batch(half, saturated), t, labels, LossWeights())
    bce_err = abs(b["mask"] - math.log(2))

    anti = dict(t, normals=-t["normals"])
    _, n = total_loss(_batch(anti, saturated), t, labels, LossWeights())
    cos_err = abs(n["normals"] - 2.0)
    ok = worst <= 1e-6 and bce_err <= 1e-6 and cos_err <= 1e-6
    record(6, ok, f"perfect max term {worst:.1e}, |BCE-ln2|={bce_err:.1e}, "
                  f"|cos term-2|={cos_err:.1e}")
    assert ok


# ---------------------------------------------------------- criteria 7 and 8

OVERFIT_STEPS = 1000


@pytest.fixture(scope="module")
def overfit(tmp_path_factory):
    root = tmp_path_factory.mktemp("overfit")
    gen = GenDataConfig(meshes=["placeholder:0", "placeholder:1", "placeholder:2"], views=16,
                        resolution=64)
    generate_dataset(gen, root / "ds", workers=1)
    index = DatasetIndex.load(root / "ds")
    split = SplitSpec((0, 1), (), (2,), 0)
    config = desk_profile(max_steps=OVERFIT_STEPS, checkpoint_every=500, seed=0)
    t0 = time.perf_counter()
    result = train(index, split, config, root / "run")
    return index, result, time.perf_counter() - t0, gen, root


@pytest.mark.criterion(7)
def test_c07_overfit(overfit):
    index, result, seconds, _, _ = overfit
    steps = [json.loads(line) for line in open(result.log_path)]
    steps = [e for e in steps if "terms" in e]
    rgb0, rgb1 = steps[0]["terms"]["rgb"], steps[-1]["terms"]["rgb"]
    warm = [e for e in steps if e["phase"] == 1]
    isolated = bool(warm) and all(
        e["head_grad_norms"][h] == 0.0
        for e in warm for h in ("depth", "normals", "mask", "classifier"))
    iou = evaluate(result.checkpoint, index, [0, 1], allow_train=True)["aggregate"]["mask_iou"]
    ok = (iou >= 0.9 and rgb1 <= 0.5 * rgb0 and isolated and len(steps) <= 2000
          and seconds <= 1800)
    record(7, ok, f"train mask IoU {iou:.3f}, RGB L1 {rgb0:.3f} -> {rgb1:.3f}, "
                  f"{len(warm)} warm-up steps isolated={isolated}, {len(steps)} steps "
                  f"in {seconds / 60:.1f} min")
    assert ok


@pytest.mark.criterion(8)
def test_c08_unseen_statue(overfit, tmp_path):
    index, result, _, gen, _ = overfit
    metrics = evaluate(result.checkpoint, index, [2])["aggregate"]
    finite = all(math.isfinite(v) for v in metrics.values())
    sample = index.load_sample(index.records_for([2])[0])
    rec = reconstruct(sample.sketch, result.checkpoint, camera=sample.camera)
    ply = tmp_path / "held_out.ply"
    if len(rec.cloud):
        export_ply(rec.cloud, ply)
    cloud = load_point_cloud(ply) if ply.is_file() else PointCloud.empty()
    mesh = resolve_mesh(gen.meshes[2], gen.seed, gen.placeholder_subdivisions)
    truth = sample_surface(mesh, 2000, np.random.default_rng(8))
    chamfer = chamfer_distance(cloud.points, truth) if len(cloud) else math.inf
    ok = finite and len(cloud) > 0 and math.isfinite(chamfer)
    record(8, ok, f"held-out metrics {json.dumps({k: round(v, 4) for k, v in metrics.items()})}, "
                  f"PLY points {len(cloud)}, chamfer to mesh samples {chamfer:.4f}")
    assert ok


# -------------------------------------------------------------- criterion 9

@pytest.mark.criterion(9)
def test_c09_determinism(tmp_path):
    args = ["--placeholders", "3", "--views", "6", "--resolution", "32", "--subdivisions", "1",
            "--workers", "1", "--seed", "9"]
    cli_main(["gen-data", "--out", str(tmp_path / "a"), *args])
    cli_main(["gen-data", "--out", str(tmp_path / "b"), *args])
    data_same = tree_bytes(tmp_path / "a") == tree_bytes(tmp_path / "b")

    index = DatasetIndex.load(tmp_path / "a")
    split = SplitSpec((0, 1), (2,), (), 0)
    cfg = desk_profile(max_steps=12, checkpoint_every=6, warmup_samples=24, batch_size=4, seed=9)
    cfg = TrainConfig(**{**cfg.__dict__, "net": type(cfg.net)(**{**cfg.net.__dict__,
                                                                 "image_size": 32})})
    r1 = train(index, split, cfg, tmp_path / "r1")
    r2 = train(index, split, cfg, tmp_path / "r2")
    logs_same = r1.log_path.read_bytes() == r2.log_path.read_bytes()
    ok = data_same and logs_same
    record(9, ok, f"gen-data byte-identical={data_same}, training logs identical={logs_same}")
    assert ok


# ------------------------------------------------------------- criterion 10

@pytest.mark.criterion(10)
def test_c10_chamfer_oracle():
    rng = np.random.default_rng(10)
    mismatches = 0
    for _ in range(20):
        a = rng.normal(size=(100, 3)) * rng.uniform(0.1, 10)
        b = rng.normal(size=(100, 3)) * rng.uniform(0.1, 10) + rng.normal(size=3)
        d = ((a[:, None, :] - b[None, :, :]) ** 2).sum(-1)
        brute = float(np.mean(d.min(1)) + np.mean(d.min(0)))
        mismatches += chamfer_distance(a, b) != brute
    ok = mismatches == 0
    record(10, ok, f"{20 - mismatches}/20 clouds equal brute force exactly")
    assert ok
