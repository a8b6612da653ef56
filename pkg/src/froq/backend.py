"""ONNX model loading, tap enumeration and instrumented inference.

A *tap* is any computed value inside the graph (the output of a node) other
than constants, initializers and the embedding output itself. Activating a tap
appends it to the graph outputs; the embedding output is left untouched, so
the embedding does not depend on which taps are active.
"""

import copy
import difflib
import hashlib
import json
import logging
import threading
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import onnx
import onnxruntime as ort
from onnx import shape_inference

from . import imaging
from .exceptions import ConfigParseError, ModelFormatError, ShapeError, UnknownTap

logger = logging.getLogger(__name__)

MANIFEST_FIELDS = (
    "input_height",
    "input_width",
    "channel_order",
    "mean",
    "std",
    "embedding_output_name",
)


@dataclass(frozen=True)
class ModelManifest:
    """Preprocessing parameters that the model file does not carry."""

    input_height: int = 112
    input_width: int = 112
    channel_order: str = "RGB"
    mean: tuple = (0.5, 0.5, 0.5)
    std: tuple = (0.5, 0.5, 0.5)
    embedding_output_name: str | None = None

    def __post_init__(self):
        if self.channel_order not in ("RGB", "BGR"):
            raise ConfigParseError(f"channel_order must be RGB or BGR, got {self.channel_order!r}")
        if len(self.mean) != 3 or len(self.std) != 3:
            raise ConfigParseError("mean and std need exactly three entries")
        if any(s <= 0 for s in self.std):
            raise ConfigParseError("std entries must be positive")
        object.__setattr__(self, "mean", tuple(float(m) for m in self.mean))
        object.__setattr__(self, "std", tuple(float(s) for s in self.std))

    @classmethod
    def from_dict(cls, data):
        unknown = set(data) - set(MANIFEST_FIELDS)
        if unknown:
            raise ConfigParseError(f"unknown manifest fields: {sorted(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigParseError(str(exc)) from exc

    @classmethod
    def load(cls, path):
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigParseError(f"cannot read manifest {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigParseError(f"manifest {path} is not a mapping")
        return cls.from_dict(data)

    def save(self, path):
        data = asdict(self)
        data["mean"] = list(self.mean)
        data["std"] = list(self.std)
        Path(path).write_text(json.dumps(data, indent=2) + "\n")


def find_manifest(model_path):
    """Sidecar lookup: ``model.manifest`` first, then ``model.onnx.manifest``."""
    model_path = Path(model_path)
    for candidate in (model_path.with_suffix(".manifest"), Path(str(model_path) + ".manifest")):
        if candidate.is_file():
            return candidate
    return None


@dataclass(frozen=True)
class TapPoint:
    tap_id: str
    producer_kind: str
    static_shape: tuple | None = None  # None entries mark dynamic dimensions


def _shape_of(value_info):
    t = value_info.type.tensor_type
    if not t.HasField("shape"):
        return None
    return tuple(d.dim_value if d.HasField("dim_value") and d.dim_value > 0 else None
                 for d in t.shape.dim)


def _enumerate_taps(model, embedding_name):
    graph = model.graph
    try:
        inferred = shape_inference.infer_shapes(model).graph
    except Exception:  # shape inference is best effort
        inferred = graph
    infos = {vi.name: vi for vi in list(inferred.value_info) + list(inferred.output)}
    excluded = {init.name for init in graph.initializer}
    excluded |= {init.values.name for init in graph.sparse_initializer}
    excluded |= {inp.name for inp in graph.input}
    excluded.add(embedding_name)
    taps, elem_types, seen = [], {}, set()
    for node in graph.node:
        if node.op_type == "Constant":
            continue
        for name in node.output:
            if not name or name in excluded or name in seen:
                continue
            seen.add(name)
            vi = infos.get(name)
            shape = _shape_of(vi) if vi is not None else None
            elem = vi.type.tensor_type.elem_type if vi is not None else 0
            elem_types[name] = elem or onnx.TensorProto.FLOAT
            taps.append(TapPoint(name, node.op_type, shape))
    return taps, elem_types


class PassCounter:
    def __init__(self):
        self._lock = threading.Lock()
        self.value = 0

    def increment(self):
        with self._lock:
            self.value += 1


class InferenceSession:
    """A loaded model plus its active tap plan.

    ``run`` performs exactly one forward pass and returns the embedding and
    one tensor per active tap. The pass counter is safe under concurrent use
    and shared with sessions derived through :meth:`with_taps`.
    """

    def __init__(self, model_bytes, manifest=None, taps=(), source=None, counter=None):
        try:
            model = onnx.load_from_string(model_bytes)
            onnx.checker.check_model(model)
        except Exception as exc:
            raise ModelFormatError(f"cannot parse model {source or ''}: {exc}".strip()) from exc
        graph = model.graph
        initializers = {init.name for init in graph.initializer}
        inputs = [i for i in graph.input if i.name not in initializers]
        if len(inputs) != 1:
            raise ModelFormatError(f"expected one image input, found {len(inputs)}")
        if not graph.output:
            raise ModelFormatError("model has no outputs")

        self.source = source
        self.model_identity = hashlib.sha256(model_bytes).hexdigest()
        self._model_bytes = model_bytes
        self._model = model
        self._input = inputs[0]
        self.manifest = manifest or self._default_manifest()
        out_names = [o.name for o in graph.output]
        self.embedding_name = self.manifest.embedding_output_name or out_names[0]
        if self.embedding_name not in out_names:
            raise ModelFormatError(f"embedding output {self.embedding_name!r} is not a graph output")
        self.input_spec = (1, 3, self.manifest.input_height, self.manifest.input_width)
        self._check_input_shape()

        self.available_taps, self._elem_types = _enumerate_taps(model, self.embedding_name)
        by_id = {t.tap_id: t for t in self.available_taps}
        active = []
        for tap_id in taps:
            if tap_id not in by_id:
                raise UnknownTap(tap_id, difflib.get_close_matches(tap_id, list(by_id), n=5))
            if by_id[tap_id] not in active:
                active.append(by_id[tap_id])
        self.active_taps = active

        self._ort = self._build_runtime()
        self._counter = counter or PassCounter()

    def _default_manifest(self):
        dims = _shape_of(self._input) or ()
        h, w = (dims[2], dims[3]) if len(dims) == 4 and dims[2] and dims[3] else (112, 112)
        logger.warning("no model manifest found; assuming RGB, mean=std=0.5, %dx%d", h, w)
        return ModelManifest(input_height=h, input_width=w)

    def _check_input_shape(self):
        dims = _shape_of(self._input)
        if dims is None:
            return
        if len(dims) != 4:
            raise ModelFormatError(f"model input must be NCHW, got rank {len(dims)}")
        for got, want in zip(dims, self.input_spec):
            if got is not None and got != want:
                raise ModelFormatError(
                    f"model input shape {dims} disagrees with manifest {self.input_spec}")

    def _build_runtime(self):
        model = self._model
        present = {o.name for o in model.graph.output}
        extra = [t for t in self.active_taps if t.tap_id not in present]
        if extra:
            model = copy.deepcopy(model)
            for tap in extra:
                model.graph.output.append(
                    onnx.helper.make_tensor_value_info(
                        tap.tap_id, self._elem_types[tap.tap_id], None))
            payload = model.SerializeToString()
        else:
            payload = self._model_bytes
        opts = ort.SessionOptions()
        opts.intra_op_num_threads = 1
        opts.inter_op_num_threads = 1
        opts.log_severity_level = 3
        try:
            return ort.InferenceSession(payload, opts, providers=["CPUExecutionProvider"])
        except Exception as exc:
            raise ModelFormatError(f"runtime rejected model: {exc}") from exc

    @property
    def pass_counter(self):
        return self._counter.value

    @property
    def input_size(self):
        return self.manifest.input_height, self.manifest.input_width

    @property
    def tap_ids(self):
        return [t.tap_id for t in self.active_taps]

    def with_taps(self, taps):
        """A fresh session over the same model with a different tap plan."""
        return InferenceSession(self._model_bytes, self.manifest, taps, self.source, self._counter)

    def preprocess(self, image):
        return imaging.preprocess(image, self.manifest)

    def run(self, x):
        x = np.asarray(x, dtype=np.float32)
        if x.shape != self.input_spec:
            raise ShapeError(f"input shape {x.shape} != expected {self.input_spec}")
        names = [self.embedding_name] + self.tap_ids
        self._counter.increment()
        outputs = self._ort.run(names, {self._input.name: x})
        embedding = np.asarray(outputs[0], dtype=np.float64).ravel()
        tapped = {name: np.asarray(value) for name, value in zip(names[1:], outputs[1:])}
        return embedding, tapped

    def embed(self, image):
        return self.run(self.preprocess(image))[0]


def load_model(path, taps=(), manifest=None):
    """Load an ONNX model and expose ``taps`` as extra outputs.

    ``manifest`` may be a :class:`ModelManifest`, a path, or ``None`` to use the
    ``<model>.manifest`` sidecar when present.
    """
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise ModelFormatError(f"cannot read model {path}: {exc}") from exc
    if manifest is None:
        sidecar = find_manifest(path)
        manifest = ModelManifest.load(sidecar) if sidecar else None
    elif not isinstance(manifest, ModelManifest):
        manifest = ModelManifest.load(manifest)
    return InferenceSession(data, manifest, list(taps or ()), source=str(path))


def list_taps(session):
    return list(session.available_taps)


def run(session, x):
    return session.run(x)
