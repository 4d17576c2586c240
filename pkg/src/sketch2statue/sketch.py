"""Line-drawing extraction from rendered images.

Sketches are grayscale in [0, 1] with 1 = white paper and 0 = black line.
The convolution helpers below accumulate mirrored taps pairwise, which makes
every filter bit-exactly equivariant to horizontal and vertical flips.
"""

from __future__ import annotations

import os
import shlex
import subprocess
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .errors import ExternalToolError, InvalidInputError, ShapeMismatchError

DEFAULT_CANNY = {"low": 0.1, "high": 0.2, "sigma": 1.0}
DEFAULT_DOG = {"sigma": 1.0, "k": 1.6, "tau": 0.02}
DEFAULT_LAPLACIAN = {"tau": 0.05}


@dataclass(frozen=True, eq=False)
class SketchImage:
    pixels: np.ndarray
    method_tag: str

    def __post_init__(self):
        px = np.array(self.pixels, dtype=np.float64)
        if px.ndim != 2:
            raise InvalidInputError(f"sketch must be 2-D, got shape {px.shape}")
        if px.size and (px.min() < 0 or px.max() > 1):
            raise InvalidInputError("sketch pixels must lie in [0, 1]")
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def shape(self):
        return self.pixels.shape

    def is_blank(self) -> bool:
        return bool(np.all(self.pixels == 1.0))


def _as_gray(image) -> np.ndarray:
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 3:
        img = img.mean(axis=2)
    if img.ndim != 2:
        raise InvalidInputError(f"expected a grayscale image, got shape {img.shape}")
    return img


def _symmetric_filter1d(img, half_kernel, axis, mode="symmetric"):
    """Correlate with an even kernel given as [w0, w1, ..., wr]."""
    r = len(half_kernel) - 1
    pad = [(0, 0), (0, 0)]
    pad[axis] = (r, r)
    p = np.pad(img, pad, mode=mode) if mode != "odd" else np.pad(img, pad, "reflect", reflect_type="odd")
    n = img.shape[axis]

    def take(offset):
        return np.take(p, np.arange(r + offset, r + offset + n), axis=axis)

    out = half_kernel[0] * take(0)
    for k in range(1, r + 1):
        out = out + half_kernel[k] * (take(-k) + take(k))
    return out


def _derivative(img, axis):
    """Central difference along ``axis`` (antisymmetric, so flips negate it exactly)."""
    p = np.pad(img, [(1, 1) if a == axis else (0, 0) for a in range(2)], mode="symmetric")
    n = img.shape[axis]
    hi = np.take(p, np.arange(2, n + 2), axis=axis)
    lo = np.take(p, np.arange(0, n), axis=axis)
    return (hi - lo) / 2


def gaussian_blur(img, sigma: float) -> np.ndarray:
    if not sigma > 0:
        raise InvalidInputError("sigma must be > 0")
    r = max(1, int(np.ceil(4 * sigma)))
    w = np.exp(-0.5 * (np.arange(r + 1) / sigma) ** 2)
    w /= w[0] + 2 * w[1:].sum()
    return _symmetric_filter1d(_symmetric_filter1d(img, w, 0), w, 1)


def sobel(img):
    """Normalized Sobel gradients (gx toward +column, gy toward +row)."""
    smooth = np.array([0.5, 0.25])
    gx = _symmetric_filter1d(_derivative(img, 1), smooth, 0)
    gy = _symmetric_filter1d(_derivative(img, 0), smooth, 1)
    return gx, gy


def _step_peak(sigma: float) -> float:
    """Gradient magnitude the blur + Sobel pipeline reports on a unit step."""
    r = max(1, int(np.ceil(4 * sigma)))
    step = np.zeros((3, 4 * r + 4))
    step[:, 2 * r + 2:] = 1.0
    gx, _ = sobel(gaussian_blur(step, sigma))
    return float(np.abs(gx).max())


def _non_max_suppression(mag, gx, gy):
    """Keep pixels that are not smaller than both neighbors across the edge."""
    ax, ay = np.abs(gx), np.abs(gy)
    tan22 = np.tan(np.pi / 8)
    horizontal = ay < tan22 * ax   # gradient along columns
    vertical = ax < tan22 * ay
    diag = ~(horizontal | vertical)
    same_sign = (gx * gy) > 0

    p = np.pad(mag, 1)
    h, w = mag.shape

    def nb(dr, dc):
        return p[1 + dr:1 + dr + h, 1 + dc:1 + dc + w]

    keep = np.zeros(mag.shape, bool)
    keep |= horizontal & (mag >= nb(0, -1)) & (mag >= nb(0, 1))
    keep |= vertical & (mag >= nb(-1, 0)) & (mag >= nb(1, 0))
    # gx, gy same sign: gradient points down-right in (row, col)
    keep |= diag & same_sign & (mag >= nb(-1, -1)) & (mag >= nb(1, 1))
    keep |= diag & ~same_sign & (mag >= nb(-1, 1)) & (mag >= nb(1, -1))
    return keep & (mag > 0)


def _lines_to_sketch(lines: np.ndarray, tag: str) -> SketchImage:
    return SketchImage(np.where(lines, 0.0, 1.0), tag)


def canny_sketch(image, low: float = 0.1, high: float = 0.2, sigma: float = 1.0) -> SketchImage:
    """Canny edges (blur, Sobel, non-max suppression, hysteresis) as black lines.

    Thresholds are fractions of the magnitude a full-contrast (0 to 1) step
    edge produces at the same ``sigma``.
    """
    if not 0 <= low <= high <= 1:
        raise InvalidInputError(f"need 0 <= low <= high <= 1, got low={low}, high={high}")
    img = gaussian_blur(_as_gray(image), sigma)
    gx, gy = sobel(img)
    mag = np.hypot(gx, gy) / _step_peak(sigma)
    thin = _non_max_suppression(mag, gx, gy)
    strong = thin & (mag >= high)
    weak = thin & (mag >= low)
    labels, count = ndimage.label(weak, structure=np.ones((3, 3), bool))
    if count:
        keep_label = np.zeros(count + 1, bool)
        keep_label[np.unique(labels[strong])] = True
        keep_label[0] = False
        edges = keep_label[labels]
    else:
        edges = np.zeros_like(weak)
    return _lines_to_sketch(edges, f"canny(low={low},high={high},sigma={sigma})")


def dog_sketch(image, sigma: float = 1.0, k: float = 1.6, tau: float = 0.02) -> SketchImage:
    """Difference of Gaussians G(sigma) - G(k*sigma); |response| > tau is a line."""
    if not sigma > 0 or not k > 1:
        raise InvalidInputError(f"need sigma > 0 and k > 1, got sigma={sigma}, k={k}")
    if not tau >= 0:
        raise InvalidInputError("tau must be >= 0")
    img = _as_gray(image)
    response = gaussian_blur(img, sigma) - gaussian_blur(img, k * sigma)
    return _lines_to_sketch(np.abs(response) > tau, f"dog(sigma={sigma},k={k},tau={tau})")


def laplacian_sketch(image, tau: float = 0.05) -> SketchImage:
    """4-neighbor 3x3 Laplacian; |response| > tau is a line.

    Borders are extended by odd reflection so affine ramps give a zero
    response everywhere.
    """
    if not 0 <= tau <= 1:
        raise InvalidInputError(f"tau must lie in [0, 1], got {tau}")
    img = _as_gray(image)
    second = np.array([-2.0, 1.0])
    lap = (_symmetric_filter1d(img, second, 0, mode="odd")
           + _symmetric_filter1d(img, second, 1, mode="odd"))
    # round off float noise from the odd-reflected borders
    lap = np.where(np.abs(lap) < 1e-12, 0.0, lap)
    return _lines_to_sketch(np.abs(lap) > tau, f"laplacian(tau={tau})")


FILTERS = {"canny": canny_sketch, "dog": dog_sketch, "laplacian": laplacian_sketch}


def sketchify(image, method: str = "canny", **params) -> SketchImage:
    """Dispatch to a named deterministic filter."""
    try:
        fn = FILTERS[method]
    except KeyError:
        raise InvalidInputError(f"unknown sketch method {method!r}; choose from {sorted(FILTERS)}") from None
    return fn(image, **params)


# ------------------------------------------------------------------------ io

def load_gray(path) -> np.ndarray:
    with Image.open(path) as im:
        if im.mode in ("I;16", "I;16B", "I"):
            arr = np.asarray(im, dtype=np.float64) / 65535.0
        else:
            arr = np.asarray(im.convert("L"), dtype=np.float64) / 255.0
    return arr


def save_gray(pixels, path) -> None:
    arr = np.round(np.clip(np.asarray(pixels, float), 0, 1) * 255).astype(np.uint8)
    Image.fromarray(arr).save(path)


def load_sketch(path, method_tag: str = "file") -> SketchImage:
    return SketchImage(load_gray(path), method_tag)


def external_translate(image_path, command_template: str, timeout: float | None = None) -> SketchImage:
    """Run an external image translator and load its output as a sketch.

    ``command_template`` must contain ``{in}`` and ``{out}`` placeholders; it
    is split shell-style and executed without a shell. The output must have
    the input's height and width.
    """
    if "{in}" not in command_template or "{out}" not in command_template:
        raise InvalidInputError("command template needs both {in} and {out} placeholders")
    image_path = Path(image_path)
    with Image.open(image_path) as im:
        in_shape = (im.height, im.width)
    cache = os.environ.get("SKETCH2STATUE_CACHE")
    if cache:
        Path(cache).mkdir(parents=True, exist_ok=True)
    with tempfile.TemporaryDirectory(dir=cache or None) as tmp:
        out_path = Path(tmp) / "translated.png"
        argv = [tok.replace("{in}", str(image_path)).replace("{out}", str(out_path))
                for tok in shlex.split(command_template)]
        try:
            proc = subprocess.run(argv, capture_output=True, text=True, timeout=timeout)
        except (OSError, subprocess.TimeoutExpired) as exc:
            raise ExternalToolError(f"could not run {argv[0]!r}: {exc}", str(exc)) from exc
        diag = f"stdout:\n{proc.stdout}\nstderr:\n{proc.stderr}"
        if proc.returncode != 0:
            raise ExternalToolError(f"external translator exited with {proc.returncode}", diag)
        if not out_path.is_file():
            raise ExternalToolError("external translator produced no output file", diag)
        pixels = load_gray(out_path)
    if pixels.shape != in_shape:
        raise ShapeMismatchError(f"translator output {pixels.shape} != input {in_shape}")
    return SketchImage(pixels, "external")
