import numpy as np
import pytest
from PIL import Image

from froq.backend import ModelManifest
from froq.exceptions import ImageFormatError, InvalidParameter, ShapeError
from froq.imaging import (add_noise, flip_horizontal, load_and_preprocess, load_image,
                          occlusion_grid, preprocess, resize)
from conftest import random_image


def test_load_image_scales_to_unit_range(tmp_path):
    arr = np.zeros((8, 6, 3), dtype=np.uint8)
    arr[0, 0] = (255, 128, 0)
    Image.fromarray(arr).save(tmp_path / "a.png")
    x = load_image(tmp_path / "a.png")
    assert x.shape == (8, 6, 3)
    assert x[0, 0].tolist() == [1.0, 128 / 255, 0.0]


def test_load_image_converts_grayscale(tmp_path):
    Image.fromarray(np.full((5, 5), 51, dtype=np.uint8), mode="L").save(tmp_path / "g.png")
    x = load_image(tmp_path / "g.png")
    assert x.shape == (5, 5, 3) and np.allclose(x, 0.2)


def test_undecodable_image(tmp_path):
    (tmp_path / "x.png").write_bytes(b"not an image")
    with pytest.raises(ImageFormatError):
        load_image(tmp_path / "x.png")
    with pytest.raises(ImageFormatError):
        load_image(tmp_path / "missing.png")


def test_resize_keeps_constant_images_constant():
    x = np.full((40, 30, 3), 0.25)
    y = resize(x, (112, 112))
    assert y.shape == (112, 112, 3)
    assert np.allclose(y, 0.25, atol=1e-6)


def test_preprocess_layout_and_normalization(rng):
    x = random_image(rng)
    m = ModelManifest(mean=(0.5, 0.5, 0.5), std=(0.5, 0.5, 0.5))
    t = preprocess(x, m)
    assert t.shape == (1, 3, 112, 112) and t.dtype == np.float32
    np.testing.assert_allclose(t[0, 1], (x[:, :, 1] - 0.5) / 0.5, rtol=1e-6)


def test_preprocess_bgr_swaps_channels(rng):
    x = random_image(rng)
    rgb = preprocess(x, ModelManifest())
    bgr = preprocess(x, ModelManifest(channel_order="BGR"))
    assert np.array_equal(rgb[0, ::-1], bgr[0])


def test_load_and_preprocess_resizes(tmp_path, rng):
    Image.fromarray((rng.random((64, 80, 3)) * 255).astype(np.uint8)).save(tmp_path / "a.png")
    assert load_and_preprocess(tmp_path / "a.png", ModelManifest()).shape == (1, 3, 112, 112)


def test_flip_is_involution(rng):
    x = random_image(rng, 16)
    assert np.array_equal(flip_horizontal(flip_horizontal(x)), x)
    assert np.array_equal(flip_horizontal(x)[:, 0], x[:, -1])


def test_noise_formula_and_determinism(rng):
    x = random_image(rng, 8)
    n = np.random.default_rng(3).standard_normal(x.shape)
    np.testing.assert_array_equal(add_noise(x, 0.1, 3), 0.9 * x + 0.1 * n)
    assert np.array_equal(add_noise(x, 0.1, 3), add_noise(x, 0.1, 3))
    assert not np.array_equal(add_noise(x, 0.1, 3), add_noise(x, 0.1, 4))
    assert np.array_equal(add_noise(x, 0.0, 9), x)


def test_noise_is_not_clamped():
    x = np.ones((4, 4, 3))
    y = add_noise(x, 0.9, 0)
    assert y.max() > 1.0 or y.min() < 0.0


def test_noise_alpha_range():
    with pytest.raises(InvalidParameter):
        add_noise(np.zeros((2, 2, 3)), 1.5, 0)


def test_occlusion_grid_row_major():
    x = np.ones((4, 4, 3))
    variants = occlusion_grid(x, 2)
    assert len(variants) == 4
    for i, v in enumerate(variants):
        r, c = divmod(i, 2)
        blacked = np.argwhere(v[:, :, 0] == 0)
        assert {tuple(p) for p in blacked} == {(r * 2 + a, c * 2 + b) for a in range(2) for b in range(2)}
    assert np.array_equal(x, np.ones((4, 4, 3)))  # input untouched


def test_occlusion_count_default():
    assert len(occlusion_grid(np.ones((112, 112, 3)), 14)) == 64


def test_occlusion_errors():
    with pytest.raises(InvalidParameter):
        occlusion_grid(np.ones((10, 10, 3)), 3)
    with pytest.raises(InvalidParameter):
        occlusion_grid(np.ones((10, 12, 3)), 2)
    with pytest.raises(ShapeError):
        occlusion_grid(np.ones((10, 10)), 2)
