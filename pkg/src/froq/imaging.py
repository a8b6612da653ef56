"""Image I/O, model preprocessing and the perturbations used for pseudo-labels.

Images are ``(h, w, 3)`` float64 arrays with values in ``[0, 1]`` in RGB
order. Perturbations operate on that raw representation; the result is fed
through :func:`preprocess` afterwards, exactly like a clean image.
"""

import numpy as np
from PIL import Image, UnidentifiedImageError

from .exceptions import ImageFormatError, InvalidParameter, ShapeError

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff", ".webp")


def _check_image(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or x.shape[2] != 3:
        raise ShapeError(f"expected an (h, w, 3) image, got shape {x.shape}")
    return x


def resize(x, size):
    """Bilinear resize of an ``(h, w, 3)`` image to ``size = (height, width)``."""
    x = _check_image(x)
    height, width = size
    if x.shape[:2] == (height, width):
        return x.copy()
    channels = [
        np.asarray(
            Image.fromarray(x[:, :, c].astype(np.float32), mode="F").resize(
                (width, height), Image.BILINEAR
            ),
            dtype=np.float64,
        )
        for c in range(3)
    ]
    return np.clip(np.stack(channels, axis=2), 0.0, 1.0)


def load_image(path, size=None):
    """Decode ``path`` to a float RGB image, optionally resized to ``(h, w)``."""
    try:
        with Image.open(path) as img:
            img = img.convert("RGB")
            x = np.asarray(img, dtype=np.float64) / 255.0
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        raise ImageFormatError(f"cannot decode image {path}: {exc}") from exc
    if size is not None:
        x = resize(x, size)
    return x


def preprocess(x, manifest):
    """Normalize an image into the model's ``1x3xHxW`` float32 input tensor."""
    x = _check_image(x)
    size = (manifest.input_height, manifest.input_width)
    if x.shape[:2] != size:
        x = resize(x, size)
    if manifest.channel_order == "BGR":
        x = x[:, :, ::-1]
    x = (x - np.asarray(manifest.mean)) / np.asarray(manifest.std)
    return np.ascontiguousarray(x.transpose(2, 0, 1)[None], dtype=np.float32)


def load_and_preprocess(path, manifest):
    return preprocess(load_image(path, (manifest.input_height, manifest.input_width)), manifest)


def flip_horizontal(x):
    x = _check_image(x)
    return x[:, ::-1, :].copy()


def add_noise(x, alpha, seed):
    """Mix the image with standard normal noise: ``(1 - alpha) * x + alpha * n``.

    The noise field is drawn in raster order (row, column, channel) from a
    fresh generator seeded with ``seed``. The result is not clamped.
    """
    if not 0.0 <= alpha <= 1.0:
        raise InvalidParameter(f"alpha must be in [0, 1], got {alpha}")
    x = _check_image(x)
    noise = np.random.default_rng(seed).standard_normal(x.shape)
    return (1.0 - alpha) * x + alpha * noise


def occlusion_grid(x, o):
    """All ``(h/o)**2`` copies of ``x`` with one ``o x o`` square set to black.

    Squares are enumerated row-major: variant ``i`` blacks out grid cell
    ``(i // (h/o), i % (h/o))``.
    """
    x = _check_image(x)
    h, w = x.shape[:2]
    if h != w:
        raise InvalidParameter(f"occlusion grid needs a square image, got {h}x{w}")
    if o <= 0 or h % o:
        raise InvalidParameter(f"square size {o} does not divide image side {h}")
    cells = h // o
    variants = []
    for i in range(cells * cells):
        r, c = divmod(i, cells)
        v = x.copy()
        v[r * o:(r + 1) * o, c * o:(c + 1) * o, :] = 0.0
        variants.append(v)
    return variants
