import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from liqd.imaging import (
    GrayParams,
    fused_intensity,
    intensity_i1,
    intensity_i2,
    mask_to_image,
    image_to_mask,
    read_image,
    to_grayscale,
    write_image,
)
from oracles import gray_scalar

pixel = st.tuples(*[st.integers(0, 255)] * 3)


@pytest.mark.parametrize("rgb, expected", [
    ((0, 0, 0), 0.0),
    ((128, 128, 128), 32.0),
])
def test_i1_trivial(rgb, expected):
    assert intensity_i1(rgb) == pytest.approx(expected, abs=1e-12)


def test_i1_saturated_red_unclamped():
    # Y = 76.245, U = -43.078425, V = 127.452315
    assert intensity_i1((255, 0, 0), clamp=False) == pytest.approx(42.3434725, abs=1e-9)


def test_i1_is_clamped():
    # pure green: Y = 149.685, U = -84.572025, V = -106.725405
    assert intensity_i1((0, 255, 0), clamp=False) == pytest.approx(-26.5743575, abs=1e-9)
    assert intensity_i1((0, 255, 0)) == 0.0


@pytest.mark.parametrize("rgb, expected", [
    ((0, 0, 0), 0.0),
    ((128, 128, 128), 128.0),
    ((255, 0, 0), 255.0),
])
def test_i2(rgb, expected):
    assert intensity_i2(rgb) == pytest.approx(expected, abs=1e-12)


def test_to_grayscale_examples():
    img = np.array([[[128, 128, 128], [255, 0, 0]]], dtype=np.uint8)
    assert to_grayscale(img).tolist() == [[80, 149]]
    only_i1 = to_grayscale(img, GrayParams(1.0, 0.0))
    assert only_i1.tolist() == [[32, 42]]


def test_to_grayscale_rejects_gray():
    with pytest.raises(ValueError):
        to_grayscale(np.zeros((4, 4), dtype=np.uint8))


@pytest.mark.parametrize("alpha, beta", [(0.5, 0.6), (1.2, -0.2)])
def test_gray_params_invalid(alpha, beta):
    with pytest.raises(ValueError):
        GrayParams(alpha, beta)


@given(pixel)
def test_achromatic_closed_form(p):
    v = p[0]
    assert intensity_i1((v, v, v)) == pytest.approx(v / 4, abs=1e-9)
    assert intensity_i2((v, v, v)) == pytest.approx(v, abs=1e-9)


@given(pixel, st.floats(0, 1))
def test_affine_in_alpha(p, alpha):
    got = fused_intensity(np.array(p), GrayParams(alpha, 1 - alpha))
    i1, i2 = intensity_i1(p), intensity_i2(p)
    assert got == pytest.approx(alpha * i1 + (1 - alpha) * i2, abs=1e-9)
    assert got == pytest.approx(gray_scalar(*p, alpha, 1 - alpha), abs=1e-9)


@settings(max_examples=50)
@given(st.integers(1, 8), st.integers(1, 8), st.integers(0, 2**32 - 1))
def test_stored_range_and_row_permutation(h, w, seed):
    rng = np.random.default_rng(seed)
    img = rng.integers(0, 256, size=(h, w, 3), dtype=np.uint8)
    gray = to_grayscale(img)
    assert gray.shape == (h, w) and gray.dtype == np.uint8
    perm = rng.permutation(h)
    assert np.array_equal(to_grayscale(img[perm]), gray[perm])


def test_mask_image_roundtrip():
    m = np.random.default_rng(0).random((7, 9)) > 0.5
    img = mask_to_image(m)
    assert set(np.unique(img).tolist()) <= {0, 255}
    assert np.array_equal(image_to_mask(img), m)


@pytest.mark.parametrize("suffix", [".png", ".ppm"])
def test_rgb_roundtrip(tmp_path, suffix):
    img = np.random.default_rng(1).integers(0, 256, (5, 6, 3), dtype=np.uint8)
    write_image(tmp_path / f"a{suffix}", img)
    assert np.array_equal(read_image(tmp_path / f"a{suffix}"), img)


def test_gray_pgm_roundtrip(tmp_path):
    img = np.random.default_rng(2).integers(0, 256, (5, 6), dtype=np.uint8)
    write_image(tmp_path / "a.pgm", img)
    assert np.array_equal(read_image(tmp_path / "a.pgm"), img)


def test_rejects_16_bit_png(tmp_path):
    from PIL import Image

    Image.fromarray(np.full((4, 4), 1000, dtype=np.uint16)).save(tmp_path / "deep.png")
    with pytest.raises(ValueError, match="8-bit"):
        read_image(tmp_path / "deep.png")


def test_rejects_16_bit_pgm(tmp_path):
    path = tmp_path / "deep.pgm"
    path.write_bytes(b"P5\n2 2\n65535\n" + bytes(8))
    with pytest.raises(ValueError, match="8-bit"):
        read_image(path)
