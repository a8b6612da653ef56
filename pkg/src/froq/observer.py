"""Quality observer: aggregation, the persisted configuration and scoring.

The score of a sample is the mean L2 norm of the observed tap tensors, taken
from a single forward pass.
"""

import hashlib
import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import imaging
from ._batch import run_batch
from .exceptions import (
    CompatibilityError,
    ConfigParseError,
    FormatVersionError,
    InvalidParameter,
    InvalidScore,
    UnknownTap,
)

CONFIG_VERSION = "v1"
SCORES_VERSION = "v1"
AGGREGATION_ID = "l2norm-v1"

CONFIG_FIELDS = ("model_identity", "taps", "aggregation", "normalization", "meta")
META_FIELDS = ("format_version", "b", "n_images", "labels_sha256", "created", "score_range")


def aggregate(z):
    """L2 norm of the flattened tensor."""
    z = np.asarray(z, dtype=np.float64).ravel()
    if z.size == 0:
        raise InvalidScore("empty tensor")
    if not np.all(np.isfinite(z)):
        raise InvalidScore("tensor contains non-finite values")
    return math.sqrt(float(z @ z))


def _r9(x):
    return float(f"{float(x):.9g}")


@dataclass
class ObserverConfig:
    """Calibrated observer bound to one model file.

    Reals are held at 9 significant digits so that saving is byte-stable and
    ``load_config(save_config(c)) == c``.
    """

    model_identity: str
    taps: tuple
    aggregation: str = AGGREGATION_ID
    normalization: dict | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.taps = tuple(self.taps)
        if not self.taps:
            raise ConfigParseError("observer config needs at least one tap")
        if len(set(self.taps)) != len(self.taps):
            raise ConfigParseError("duplicate taps in observer config")
        if self.aggregation != AGGREGATION_ID:
            raise ConfigParseError(f"unsupported aggregation {self.aggregation!r}")
        if self.normalization is not None:
            norm = {}
            for tap in self.taps:
                if tap not in self.normalization:
                    raise ConfigParseError(f"normalization missing tap {tap!r}")
                lo, hi = (_r9(v) for v in self.normalization[tap])
                if not lo < hi:
                    raise ConfigParseError(f"normalization for {tap!r} needs min < max")
                norm[tap] = (lo, hi)
            if set(self.normalization) - set(self.taps):
                raise ConfigParseError("normalization lists taps that are not observed")
            self.normalization = norm
        meta = {"format_version": CONFIG_VERSION, "b": None, "n_images": None,
                "labels_sha256": None, "created": None, "score_range": None}
        unknown = set(self.meta) - set(META_FIELDS)
        if unknown:
            raise FormatVersionError(f"unknown meta fields for {CONFIG_VERSION}: {sorted(unknown)}")
        meta.update(self.meta)
        if meta["score_range"] is not None:
            meta["score_range"] = [_r9(v) for v in meta["score_range"]]
        self.meta = meta

    def to_text(self):
        doc = {
            "model_identity": self.model_identity,
            "taps": list(self.taps),
            "aggregation": self.aggregation,
            "normalization": None if self.normalization is None
            else {t: list(self.normalization[t]) for t in self.taps},
            "meta": {k: self.meta[k] for k in META_FIELDS},
        }
        return json.dumps(doc, indent=2) + "\n"

    def sha256(self):
        return hashlib.sha256(self.to_text().encode()).hexdigest()

    @classmethod
    def from_text(cls, text):
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigParseError(f"observer config is not valid JSON: {exc}") from exc
        if not isinstance(doc, dict) or not isinstance(doc.get("meta"), dict):
            raise ConfigParseError("observer config must be a mapping with a 'meta' mapping")
        version = doc["meta"].get("format_version")
        if version != CONFIG_VERSION:
            raise FormatVersionError(f"observer config version {version!r} unsupported "
                                     f"(want {CONFIG_VERSION})")
        unknown = set(doc) - set(CONFIG_FIELDS)
        if unknown:
            raise FormatVersionError(f"unknown fields for {CONFIG_VERSION}: {sorted(unknown)}")
        missing = [k for k in CONFIG_FIELDS if k not in doc]
        if missing:
            raise ConfigParseError(f"observer config missing fields: {missing}")
        norm = doc["normalization"]
        try:
            return cls(
                model_identity=str(doc["model_identity"]),
                taps=tuple(doc["taps"]),
                aggregation=doc["aggregation"],
                normalization=None if norm is None else {k: tuple(v) for k, v in norm.items()},
                meta=doc["meta"],
            )
        except (TypeError, ValueError, AttributeError) as exc:
            raise ConfigParseError(f"malformed observer config: {exc}") from exc


def save_config(config, path):
    Path(path).write_text(config.to_text())


def load_config(path):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigParseError(f"cannot read observer config {path}: {exc}") from exc
    return ObserverConfig.from_text(text)


def bind(session, config):
    """Session over the same model with exactly the config's taps active."""
    if session.model_identity != config.model_identity:
        raise CompatibilityError(
            f"observer was calibrated for model {config.model_identity[:12]}, "
            f"session runs {session.model_identity[:12]}")
    if session.tap_ids == list(config.taps):
        return session
    return session.with_taps(config.taps)


def combine(tap_scores, config):
    """Mean of per-tap aggregates, in config tap order, optionally min-max scaled."""
    acc = 0.0
    for tap in config.taps:
        v = tap_scores[tap]
        if config.normalization is not None:
            lo, hi = config.normalization[tap]
            v = (v - lo) / (hi - lo)
        acc += v
    return acc / len(config.taps)


def score(session, config, x):
    """Quality of one preprocessed input; exactly one forward pass."""
    if session.model_identity != config.model_identity:
        raise CompatibilityError("session model does not match observer config")
    active = set(session.tap_ids)
    for tap in config.taps:
        if tap not in active:
            raise UnknownTap(tap)
    _, tapped = session.run(x)
    return combine({t: aggregate(tapped[t]) for t in config.taps}, config)


def normalize_score(q, config):
    """Map a raw score onto [0, 1] (roughly) using the calibration score range."""
    rng = config.meta.get("score_range")
    if not rng or not rng[0] < rng[1]:
        raise InvalidParameter("observer config carries no usable score_range")
    return (q - rng[0]) / (rng[1] - rng[0])


def score_batch(session, config, paths, threads=None, normalize=False):
    """Score image files; returns ``[(path, score), ...]`` skipping failures."""
    paths = [str(p) for p in paths]
    if not paths:
        raise InvalidParameter("no images to score")
    session = bind(session, config)

    def one(path):
        x = session.preprocess(imaging.load_image(path, session.input_size))
        q = score(session, config, x)
        return normalize_score(q, config) if normalize else q

    results = run_batch(one, paths, threads)
    return [(p, q) for p, q in zip(paths, results) if q is not None]


_SCORES_HEADER = re.compile(
    r"^# froq-scores (?P<version>\S+) observer=(?P<observer>\S+)(?P<norm> normalize=minmax)?$")


@dataclass
class ScoreFile:
    """``path<TAB>score`` table; ``observer`` is the config's sha256 (or ``-``)."""

    entries: list
    observer: str = "-"
    normalized: bool = False

    def as_dict(self):
        return dict(self.entries)

    def to_text(self):
        head = f"# froq-scores {SCORES_VERSION} observer={self.observer or '-'}"
        if self.normalized:
            head += " normalize=minmax"
        lines = [head]
        for path, q in self.entries:
            if "\t" in path or "\n" in path:
                raise InvalidParameter(f"path contains a tab or newline: {path!r}")
            lines.append(f"{path}\t{q:.9g}")
        return "\n".join(lines) + "\n"

    def save(self, path):
        Path(path).write_text(self.to_text())

    @classmethod
    def from_text(cls, text):
        lines = text.splitlines()
        observer, normalized = "-", False
        body = lines
        if lines and lines[0].startswith("# froq-scores"):
            m = _SCORES_HEADER.match(lines[0])
            if not m:
                raise ConfigParseError(f"bad scores header: {lines[0]!r}")
            if m["version"] != SCORES_VERSION:
                raise FormatVersionError(f"scores format {m['version']} unsupported")
            observer, normalized, body = m["observer"], bool(m["norm"]), lines[1:]
        entries = []
        for n, line in enumerate(body, start=len(lines) - len(body) + 1):
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            try:
                if len(parts) != 2:
                    raise ValueError
                q = float(parts[1])
            except ValueError:
                raise ConfigParseError(f"scores line {n}: expected 'path<TAB>score'") from None
            if not math.isfinite(q):
                raise ConfigParseError(f"scores line {n}: non-finite score")
            entries.append((parts[0], q))
        return cls(entries, observer, normalized)

    @classmethod
    def load(cls, path):
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigParseError(f"cannot read scores {path}: {exc}") from exc
        return cls.from_text(text)
