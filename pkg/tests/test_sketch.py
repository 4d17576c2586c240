import sys

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from PIL import Image

from sketch2statue.errors import ExternalToolError, InvalidInputError, ShapeMismatchError
from sketch2statue.geometry import OrthoCamera, icosphere, rasterize
from sketch2statue.sketch import (
    canny_sketch, dog_sketch, external_translate, laplacian_sketch, save_gray, sketchify,
)

FILTERS = [canny_sketch, dog_sketch, laplacian_sketch]


def disk(n=64, radius=18.0):
    yy, xx = np.mgrid[:n, :n] + 0.5
    return ((xx - n / 2) ** 2 + (yy - n / 2) ** 2 <= radius ** 2).astype(float)


@pytest.mark.parametrize("fn", FILTERS)
@pytest.mark.parametrize("value", [0.0, 0.37, 1.0])
def test_constant_image_is_blank(fn, value):
    assert fn(np.full((32, 40), value)).is_blank()


@pytest.mark.parametrize("fn", FILTERS)
def test_outputs_binary(fn):
    rng = np.random.default_rng(0)
    s = fn(rng.uniform(size=(32, 32)))
    assert set(np.unique(s.pixels)) <= {0.0, 1.0}


def test_canny_vertical_step():
    img = np.zeros((40, 40))
    c = 17
    img[:, c:] = 1.0
    s = canny_sketch(img, 0.1, 0.2)
    cols = np.argwhere(s.pixels == 0)[:, 1]
    assert len(cols) >= 38
    assert np.all(np.abs(cols - (c - 0.5)) <= 1)


def test_canny_invalid_thresholds():
    with pytest.raises(InvalidInputError):
        canny_sketch(np.zeros((8, 8)), 0.3, 0.2)
    with pytest.raises(InvalidInputError):
        canny_sketch(np.zeros((8, 8)), -0.1, 0.2)


def test_dog_ring_on_disk():
    n, radius = 64, 18.0
    img = disk(n, radius)
    s = dog_sketch(img, 1.0, 1.6, 0.02)
    inside = img.astype(bool)
    # boundary oracle: inside pixels with an outside 4-neighbor, and vice versa
    p = np.pad(inside, 1)
    nb_out = ~p[:-2, 1:-1] | ~p[2:, 1:-1] | ~p[1:-1, :-2] | ~p[1:-1, 2:]
    nb_in = p[:-2, 1:-1] | p[2:, 1:-1] | p[1:-1, :-2] | p[1:-1, 2:]
    boundary = (inside & nb_out) | (~inside & nb_in)
    lines = s.pixels == 0
    assert lines[boundary].mean() >= 0.95
    # lines hug the boundary: nothing far from the circle
    yy, xx = np.mgrid[:n, :n] + 0.5
    dist = np.abs(np.hypot(xx - n / 2, yy - n / 2) - radius)
    assert dist[lines].max() < 4


def test_dog_threshold_dominates_and_validation():
    assert dog_sketch(disk(), tau=1.0).is_blank()
    with pytest.raises(InvalidInputError):
        dog_sketch(disk(), k=1.0)
    with pytest.raises(InvalidInputError):
        dog_sketch(disk(), sigma=0)


def test_laplacian_single_pixel_and_ramp():
    img = np.zeros((9, 9))
    img[4, 4] = 1.0
    lines = laplacian_sketch(img, 0.5).pixels == 0
    expected = np.zeros((9, 9), bool)
    expected[4, 4] = expected[3, 4] = expected[5, 4] = expected[4, 3] = expected[4, 5] = True
    np.testing.assert_array_equal(lines, expected)
    ramp = np.tile(np.linspace(0, 1, 32), (24, 1)) * 0.7 + np.linspace(0, 0.3, 24)[:, None]
    assert laplacian_sketch(ramp, 0.0).is_blank()
    with pytest.raises(InvalidInputError):
        laplacian_sketch(img, 1.5)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31), st.sampled_from(FILTERS), st.integers(8, 40), st.integers(8, 40))
def test_flip_equivariance_and_determinism(seed, fn, h, w):
    rng = np.random.default_rng(seed)
    img = textured(rng.uniform(size=(h, w)))
    out = fn(img).pixels
    np.testing.assert_array_equal(fn(img).pixels, out)
    np.testing.assert_array_equal(fn(img[:, ::-1]).pixels, out[:, ::-1])
    np.testing.assert_array_equal(fn(img[::-1]).pixels, out[::-1])


def textured(x):
    # mild smoothing so that edges form connected structures
    return (x + np.roll(x, 1, 0) + np.roll(x, 1, 1)) / 3


def test_canny_on_rendered_sphere_nonblank():
    r = rasterize(icosphere(3), OrthoCamera(resolution=64))
    s = sketchify(r.gray, "canny", low=0.1, high=0.2)
    assert not s.is_blank()
    assert s.method_tag.startswith("canny")
    with pytest.raises(InvalidInputError):
        sketchify(r.gray, "sobel")


# ----------------------------------------------------------- external tool seam

def _py(code):
    return f"{sys.executable} -c \"{code}\""


def test_external_identity(tmp_path):
    img = np.random.default_rng(3).uniform(size=(20, 30))
    src = tmp_path / "in.png"
    save_gray(img, src)
    s = external_translate(src, _py("import shutil,sys; shutil.copy(sys.argv[1], sys.argv[2])")
                           + " {in} {out}")
    assert s.method_tag == "external"
    np.testing.assert_allclose(s.pixels, np.round(img * 255) / 255)


def test_external_failure(tmp_path):
    src = tmp_path / "in.png"
    save_gray(np.ones((8, 8)), src)
    with pytest.raises(ExternalToolError) as info:
        external_translate(src, _py("import sys; sys.stderr.write('boom'); sys.exit(3)")
                           + " {in} {out}")
    assert "boom" in info.value.diagnostics
    with pytest.raises(ExternalToolError):
        external_translate(src, _py("pass") + " {in} {out}")
    with pytest.raises(InvalidInputError):
        external_translate(src, "cp {in}")


def test_external_wrong_size(tmp_path):
    src = tmp_path / "in.png"
    save_gray(np.ones((8, 8)), src)
    code = "from PIL import Image; import sys; Image.new('L', (5, 5), 255).save(sys.argv[2])"
    with pytest.raises(ShapeMismatchError):
        external_translate(src, _py(code) + " {in} {out}")
