"""Perturbation-based pseudo-quality labels.

A sample's label is the mean of three embedding-stability scores: the cosine
similarity between the clean embedding and the embedding of a horizontally
flipped copy, of a noisy copy, and (averaged) of every grid-occluded copy.

Any object with ``embed(image)``, ``input_size`` and ``model_identity`` works
as the session, which makes the functions easy to drive with stub models.
"""

import hashlib
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import imaging
from ._batch import run_batch
from .exceptions import AlignmentError, FormatVersionError, InvalidParameter, ConfigParseError
from .stats import cosine_similarity

LABELS_VERSION = "v1"
_HEADER = re.compile(
    r"^# froq-labels (?P<version>\S+) model=(?P<model>\S+) alpha=(?P<alpha>\S+) "
    r"o=(?P<o>\S+) seed=(?P<seed>\S+)$")


@dataclass(frozen=True)
class AuxParams:
    alpha: float = 0.001
    o: int = 14
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise InvalidParameter(f"alpha must be in [0, 1], got {self.alpha}")
        if int(self.o) != self.o or self.o < 1:
            raise InvalidParameter(f"occlusion size must be a positive integer, got {self.o}")
        if int(self.seed) != self.seed or self.seed < 0:
            raise InvalidParameter(f"seed must be a non-negative integer, got {self.seed}")

    def check_side(self, side):
        if side % self.o:
            raise InvalidParameter(f"occlusion size {self.o} does not divide input side {side}")


def _reference(session, x, reference):
    return session.embed(x) if reference is None else reference


def partial_flip_quality(session, x, reference=None):
    ref = _reference(session, x, reference)
    return cosine_similarity(ref, session.embed(imaging.flip_horizontal(x)))


def partial_noise_quality(session, x, alpha, seed, reference=None):
    ref = _reference(session, x, reference)
    return cosine_similarity(ref, session.embed(imaging.add_noise(x, alpha, seed)))


def partial_occlusion_quality(session, x, o, reference=None):
    ref = _reference(session, x, reference)
    sims = [cosine_similarity(ref, session.embed(v)) for v in imaging.occlusion_grid(x, o)]
    return math.fsum(sims) / len(sims)


def pseudo_label(session, x, params=AuxParams(), seed=None):
    """Mean of the flip, noise and occlusion partial qualities.

    The clean embedding is computed once and shared, so one image costs
    ``3 + (side / o) ** 2`` forward passes. ``seed`` overrides ``params.seed``
    for the noise draw.
    """
    seed = params.seed if seed is None else seed
    ref = session.embed(x)
    q_flip = partial_flip_quality(session, x, ref)
    q_noise = partial_noise_quality(session, x, params.alpha, seed, ref)
    q_occ = partial_occlusion_quality(session, x, params.o, ref)
    return (q_flip + q_noise + q_occ) / 3.0


def image_seeds(paths, seed):
    """Per-image noise seeds: ``seed XOR k`` with ``k`` the path's sorted position.

    Depends only on the set of paths, so labels do not change when the input
    list is reordered or processed in parallel.
    """
    order = {p: i for i, p in enumerate(sorted(set(paths)))}
    return [seed ^ order[p] for p in paths]


@dataclass
class PseudoLabelSet:
    entries: list
    params: AuxParams = field(default_factory=AuxParams)
    model_identity: str = ""

    @property
    def paths(self):
        return [p for p, _ in self.entries]

    @property
    def values(self):
        return np.array([q for _, q in self.entries], dtype=np.float64)

    def aligned(self, image_ids):
        """Label vector ordered like ``image_ids``; the id sets must match."""
        lookup = dict(self.entries)
        if len(lookup) != len(self.entries):
            raise AlignmentError("duplicate image ids in label set")
        missing = [i for i in image_ids if i not in lookup]
        extra = set(lookup) - set(image_ids)
        if missing or extra:
            raise AlignmentError(
                f"labels and images disagree: {len(missing)} unlabeled images "
                f"(e.g. {missing[:3]}), {len(extra)} labels without images")
        return np.array([lookup[i] for i in image_ids], dtype=np.float64)

    def to_text(self):
        p = self.params
        lines = [f"# froq-labels {LABELS_VERSION} model={self.model_identity or '-'} "
                 f"alpha={p.alpha:.9g} o={p.o} seed={p.seed}"]
        for path, q in self.entries:
            if "\t" in path or "\n" in path:
                raise InvalidParameter(f"path contains a tab or newline: {path!r}")
            lines.append(f"{path}\t{q:.9g}")
        return "\n".join(lines) + "\n"

    def sha256(self):
        return hashlib.sha256(self.to_text().encode()).hexdigest()

    def save(self, path):
        Path(path).write_text(self.to_text())

    @classmethod
    def from_text(cls, text):
        lines = text.splitlines()
        if not lines:
            raise ConfigParseError("empty label file")
        m = _HEADER.match(lines[0])
        if not m:
            raise ConfigParseError(f"bad label header: {lines[0]!r}")
        if m["version"] != LABELS_VERSION:
            raise FormatVersionError(f"label format {m['version']} unsupported (want {LABELS_VERSION})")
        try:
            params = AuxParams(float(m["alpha"]), int(m["o"]), int(m["seed"]))
        except ValueError as exc:
            raise ConfigParseError(f"bad label header: {exc}") from exc
        entries = []
        for n, line in enumerate(lines[1:], start=2):
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            try:
                q = float(parts[1])
            except (IndexError, ValueError):
                raise ConfigParseError(f"line {n}: expected 'path<TAB>label'") from None
            if len(parts) != 2 or not math.isfinite(q):
                raise ConfigParseError(f"line {n}: expected 'path<TAB>label'")
            entries.append((parts[0], q))
        model = "" if m["model"] == "-" else m["model"]
        return cls(entries, params, model)

    @classmethod
    def load(cls, path):
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigParseError(f"cannot read labels {path}: {exc}") from exc
        return cls.from_text(text)


def pseudo_label_set(session, paths, params=AuxParams(), threads=None):
    """Label every image in ``paths``; order is preserved, failures skipped.

    Raises :class:`~froq.exceptions.BatchError` when more than 10% fail.
    """
    paths = [str(p) for p in paths]
    if not paths:
        raise InvalidParameter("no images to label")
    params.check_side(session.input_size[0])
    seeds = image_seeds(paths, params.seed)

    def label(job):
        path, seed = job
        x = imaging.load_image(path, session.input_size)
        return pseudo_label(session, x, params, seed)

    results = run_batch(label, list(zip(paths, seeds)), threads, label=lambda j: j[0])
    entries = [(p, q) for p, q in zip(paths, results) if q is not None]
    return PseudoLabelSet(entries, params, session.model_identity)
