"""Deterministic fixtures: a tiny random ONNX face model and toy face images.

Nothing here is needed at inference time. The generators exist so that tests
and demos run without downloading real recognition models or datasets.
"""

from pathlib import Path

import numpy as np
import onnx
from onnx import TensorProto, helper, numpy_helper
from PIL import Image, ImageDraw, ImageFilter

from .backend import ModelManifest

TINY_MODEL_NAME = "tiny_fr.onnx"
EMBEDDING_DIM = 64


def _he(rng, shape, fan_in):
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(np.float32)


def build_tiny_model(seed=0):
    """Seven-node conv net: 1x3x112x112 image -> 64-d embedding.

    Computed values in topological order: conv1, relu1, conv2, relu2, pool,
    flat, embedding. All but the last are tap candidates.
    """
    rng = np.random.default_rng(seed)
    inits = {
        "w1": _he(rng, (8, 3, 5, 5), 3 * 25),
        "b1": (0.01 * rng.standard_normal(8)).astype(np.float32),
        "w2": _he(rng, (16, 8, 3, 3), 8 * 9),
        "b2": (0.01 * rng.standard_normal(16)).astype(np.float32),
        "w3": _he(rng, (EMBEDDING_DIM, 16 * 7 * 7), 16 * 7 * 7),
        "b3": np.zeros(EMBEDDING_DIM, dtype=np.float32),
    }
    # zero-sum projection rows cancel the shared positive ReLU component,
    # otherwise every embedding points in nearly the same direction
    inits["w3"] -= inits["w3"].mean(axis=1, keepdims=True)
    nodes = [
        helper.make_node("Conv", ["input", "w1", "b1"], ["conv1"], name="conv1",
                         kernel_shape=[5, 5], strides=[4, 4], pads=[2, 2, 2, 2]),
        helper.make_node("Relu", ["conv1"], ["relu1"], name="relu1"),
        helper.make_node("Conv", ["relu1", "w2", "b2"], ["conv2"], name="conv2",
                         kernel_shape=[3, 3], strides=[2, 2], pads=[1, 1, 1, 1]),
        helper.make_node("Relu", ["conv2"], ["relu2"], name="relu2"),
        helper.make_node("MaxPool", ["relu2"], ["pool"], name="pool",
                         kernel_shape=[2, 2], strides=[2, 2]),
        helper.make_node("Flatten", ["pool"], ["flat"], name="flat", axis=1),
        helper.make_node("Gemm", ["flat", "w3", "b3"], ["embedding"], name="fc", transB=1),
    ]
    graph = helper.make_graph(
        nodes,
        "tiny_fr",
        [helper.make_tensor_value_info("input", TensorProto.FLOAT, [1, 3, 112, 112])],
        [helper.make_tensor_value_info("embedding", TensorProto.FLOAT, [1, EMBEDDING_DIM])],
        initializer=[numpy_helper.from_array(v, name=k) for k, v in inits.items()],
    )
    model = helper.make_model(graph, opset_imports=[helper.make_opsetid("", 17)],
                              producer_name="froq-synthetic")
    model.ir_version = 8
    onnx.checker.check_model(model)
    return model


def write_tiny_model(directory, seed=0):
    """Write the model and its manifest sidecar; returns the model path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / TINY_MODEL_NAME
    path.write_bytes(build_tiny_model(seed).SerializeToString())
    ModelManifest(embedding_output_name="embedding").save(path.with_suffix(".manifest"))
    return path


def bundled_model_path():
    return Path(__file__).parent / "data" / TINY_MODEL_NAME


def draw_face(identity, size=128, shift=(0, 0), seed=0):
    """Render a cartoon face whose geometry and colours depend on ``identity``."""
    g = np.random.default_rng([identity, 7919])
    img = Image.new("RGB", (size, size), tuple(int(v) for v in g.integers(20, 90, 3)))
    d = ImageDraw.Draw(img)
    s = size / 128.0
    dx, dy = shift
    cx, cy = 64 * s + dx, 66 * s + dy
    fw, fh = g.uniform(34, 46) * s, g.uniform(44, 56) * s
    skin = tuple(int(v) for v in g.integers(120, 235, 3))
    d.ellipse([cx - fw, cy - fh, cx + fw, cy + fh], fill=skin)
    eye_dx, eye_y, eye_r = g.uniform(12, 20) * s, g.uniform(10, 20) * s, g.uniform(3, 7) * s
    eye = tuple(int(v) for v in g.integers(0, 90, 3))
    for sign in (-1, 1):
        ex, ey = cx + sign * eye_dx, cy - eye_y
        d.ellipse([ex - eye_r, ey - eye_r, ex + eye_r, ey + eye_r], fill=eye)
        d.line([ex - 2 * eye_r, ey - 2.2 * eye_r, ex + 2 * eye_r, ey - 2.2 * eye_r],
               fill=eye, width=max(1, int(2 * s)))
    nose = g.uniform(6, 14) * s
    d.line([cx, cy - nose, cx - 3 * s, cy + nose], fill=eye, width=max(1, int(2 * s)))
    mw, my = g.uniform(8, 18) * s, g.uniform(18, 28) * s
    d.arc([cx - mw, cy + my - 6 * s, cx + mw, cy + my + 6 * s], 0, 180,
          fill=(150, 30, 40), width=max(1, int(3 * s)))
    # fine per-identity texture keeps high-frequency content for blur to remove
    tex = np.random.default_rng([identity, seed, 13]).normal(0.0, 10.0, (size, size, 3))
    arr = np.clip(np.asarray(img, dtype=np.float64) + tex, 0, 255)
    return Image.fromarray(arr.astype(np.uint8))


def degrade_blur(img, radius=3.0):
    return img.filter(ImageFilter.GaussianBlur(radius))


def degrade_noise(img, sigma=0.2, seed=0):
    arr = np.asarray(img, dtype=np.float64) / 255.0
    arr = arr + np.random.default_rng(seed).normal(0.0, sigma, arr.shape)
    return Image.fromarray((np.clip(arr, 0, 1) * 255).round().astype(np.uint8))


def write_calibration_set(directory, n_identities=10, size=128, seed=0):
    """Write ``3 * n_identities`` PNGs (clean, blurred, noisy per identity).

    Also writes ``pairs.txt``: every same-identity pair is mated, every
    cross-identity pair is non-mated. Returns ``(image_paths, pairs_path)``.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    paths = []
    for ident in range(n_identities):
        shifts = rng.integers(-4, 5, size=(3, 2))
        clean = draw_face(ident, size, tuple(shifts[0]), seed)
        variants = {
            "clean": clean,
            "blur": degrade_blur(draw_face(ident, size, tuple(shifts[1]), seed)),
            "noise": degrade_noise(draw_face(ident, size, tuple(shifts[2]), seed),
                                   seed=int(rng.integers(2**31))),
        }
        for kind, img in variants.items():
            p = directory / f"id{ident:02d}_{kind}.png"
            img.save(p)
            paths.append(p)
    lines = ["# image_a\timage_b\tmated"]
    for i in range(len(paths)):
        for j in range(i + 1, len(paths)):
            mated = paths[i].name[:4] == paths[j].name[:4]
            lines.append(f"{paths[i]}\t{paths[j]}\t{int(mated)}")
    pairs = directory / "pairs.txt"
    pairs.write_text("\n".join(lines) + "\n")
    return paths, pairs
