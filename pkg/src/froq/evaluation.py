"""Verification benchmarking of quality scores with EDC curves and pAUC.

The decision threshold is fixed once from all non-mated comparisons at the
target FMR. For each discard rate the lowest-quality images are removed, every
pair touching a removed image is dropped and FNMR is recomputed on the
surviving mated pairs at that same threshold.
"""

import hashlib
import json
import logging
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from . import imaging
from ._batch import run_batch
from .exceptions import (
    AlignmentError,
    ConfigParseError,
    DegenerateInput,
    FormatVersionError,
    InvalidParameter,
    IoError,
)
from .stats import cosine_similarity, quantile_threshold

logger = logging.getLogger(__name__)

DEFAULT_DISCARD_GRID = np.linspace(0.0, 0.5, 101)
EMBEDDINGS_VERSION = "v1"


@dataclass
class PairProtocol:
    pairs: list  # (image_a, image_b, mated)

    def __post_init__(self):
        self.pairs = [(str(a), str(b), bool(m)) for a, b, m in self.pairs]
        mated = sum(m for _, _, m in self.pairs)
        if mated == 0 or mated == len(self.pairs):
            raise InvalidParameter("protocol needs at least one mated and one non-mated pair")

    @property
    def images(self):
        return sorted({p for a, b, _ in self.pairs for p in (a, b)})

    def to_text(self):
        out = []
        for a, b, m in self.pairs:
            if any(ch in p for p in (a, b) for ch in "\t\n"):
                raise InvalidParameter("image ids may not contain tabs or newlines")
            out.append(f"{a}\t{b}\t{int(m)}\n")
        return "".join(out)

    def save(self, path):
        Path(path).write_text(self.to_text())

    @classmethod
    def from_text(cls, text):
        pairs = []
        for n, line in enumerate(text.splitlines(), start=1):
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3 or parts[2].strip() not in ("0", "1"):
                raise ConfigParseError(f"pairs line {n}: expected 'image_a<TAB>image_b<TAB>0|1'")
            pairs.append((parts[0], parts[1], parts[2].strip() == "1"))
        return cls(pairs)

    @classmethod
    def load(cls, path):
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigParseError(f"cannot read pairs file {path}: {exc}") from exc
        return cls.from_text(text)


@dataclass
class EmbeddingStore:
    embeddings: dict
    model_identity: str = ""

    def __getitem__(self, key):
        return self.embeddings[key]

    def __contains__(self, key):
        return key in self.embeddings

    def __len__(self):
        return len(self.embeddings)

    def to_text(self):
        dims = {len(v) for v in self.embeddings.values()}
        dim = dims.pop() if len(dims) == 1 else 0
        lines = [f"# froq-embeddings {EMBEDDINGS_VERSION} model={self.model_identity or '-'} dim={dim}"]
        for path, vec in self.embeddings.items():
            lines.append(path + "\t" + " ".join(repr(float(v)) for v in vec))
        return "\n".join(lines) + "\n"

    def save(self, path):
        Path(path).write_text(self.to_text())

    @classmethod
    def load(cls, path):
        try:
            lines = Path(path).read_text().splitlines()
        except OSError as exc:
            raise ConfigParseError(f"cannot read embeddings {path}: {exc}") from exc
        m = re.match(r"^# froq-embeddings (\S+) model=(\S+) dim=(\d+)$", lines[0] if lines else "")
        if not m:
            raise ConfigParseError(f"{path}: missing embeddings header")
        if m[1] != EMBEDDINGS_VERSION:
            raise FormatVersionError(f"embeddings format {m[1]} unsupported")
        store = {}
        for line in lines[1:]:
            if not line:
                continue
            name, _, values = line.partition("\t")
            try:
                store[name] = np.array([float(v) for v in values.split()])
            except ValueError:
                raise ConfigParseError(f"{path}: bad embedding row for {name}") from None
        return cls(store, "" if m[2] == "-" else m[2])


def embed_set(session, paths, threads=None):
    """Embed every image once; failures are skipped per the batch policy."""
    paths = [str(p) for p in paths]
    if not paths:
        raise InvalidParameter("no images to embed")

    def one(path):
        return session.embed(imaging.load_image(path, session.input_size))

    results = run_batch(one, paths, threads)
    return EmbeddingStore({p: e for p, e in zip(paths, results) if e is not None},
                          session.model_identity)


class PairScore(NamedTuple):
    a: str
    b: str
    similarity: float
    mated: bool


def verification_scores(protocol, embeddings):
    """Cosine similarity for every pair, in protocol order."""
    missing = sorted({p for a, b, _ in protocol.pairs for p in (a, b) if p not in embeddings})
    if missing:
        raise AlignmentError(f"{len(missing)} pair members have no embedding, e.g. {missing[:3]}")
    return [PairScore(a, b, cosine_similarity(embeddings[a], embeddings[b]), m)
            for a, b, m in protocol.pairs]


def threshold_at_fmr(nonmated, fmr_target=1e-3):
    """Smallest observed non-mated score ``t`` with ``P(nonmated >= t) <= fmr_target``.

    When no observed score qualifies (heavy ties at the top), the threshold is
    placed just above the maximum so that the realized FMR is zero.
    """
    if not 0.0 < fmr_target < 1.0:
        raise InvalidParameter(f"fmr_target must be in (0, 1), got {fmr_target}")
    s = np.sort(np.asarray(nonmated, dtype=np.float64))
    n = s.size
    if n == 0:
        raise InvalidParameter("no non-mated comparisons")
    allowed = math.floor(fmr_target * n + 1e-9)
    starts = np.flatnonzero(np.r_[True, s[1:] != s[:-1]])
    ok = starts[n - starts <= allowed]
    if ok.size:
        return float(s[ok[0]])
    logger.warning("FMR %g not resolvable with %d non-mated scores (%d allowed above threshold, "
                   "%d tied at the top); threshold set above the maximum",
                   fmr_target, n, allowed, n - starts[-1])
    return float(np.nextafter(s[-1], np.inf))


@dataclass
class EdcCurve:
    fmr_target: float
    threshold: float
    points: list = field(default_factory=list)  # (discard_rate, fnmr); fnmr NaN if undefined

    @property
    def discard_rates(self):
        return np.array([d for d, _ in self.points])

    @property
    def fnmr(self):
        return np.array([f for _, f in self.points])

    def to_csv(self):
        return "discard_rate,fnmr\n" + "".join(f"{d!r},{f!r}\n" for d, f in self.points)

    @staticmethod
    def points_from_csv(text):
        lines = text.splitlines()
        if not lines or lines[0] != "discard_rate,fnmr":
            raise ConfigParseError("EDC CSV must start with 'discard_rate,fnmr'")
        try:
            return [tuple(float(v) for v in line.split(",")) for line in lines[1:] if line]
        except ValueError as exc:
            raise ConfigParseError(f"bad EDC row: {exc}") from exc


def edc_curve(pair_scores, qualities, fmr_target=1e-3, discard_rates=None):
    """Error-versus-discard curve at a threshold fixed at zero discard."""
    grid = DEFAULT_DISCARD_GRID if discard_rates is None else np.asarray(discard_rates, float)
    if grid.size == 0 or grid[0] != 0.0 or np.any(np.diff(grid) <= 0) or grid[-1] > 1.0:
        raise InvalidParameter("discard grid must start at 0, increase strictly and stay <= 1")
    images = sorted({p for s in pair_scores for p in (s.a, s.b)})
    missing = [p for p in images if p not in qualities]
    if missing:
        raise AlignmentError(f"{len(missing)} images have no quality score, e.g. {missing[:3]}")
    index = {p: i for i, p in enumerate(images)}
    q = np.array([qualities[p] for p in images], dtype=np.float64)

    sims = np.array([s.similarity for s in pair_scores])
    mated = np.array([s.mated for s in pair_scores], dtype=bool)
    if not mated.any() or mated.all():
        raise InvalidParameter("need both mated and non-mated comparisons")
    threshold = threshold_at_fmr(sims[~mated], fmr_target)
    ia = np.array([index[s.a] for s in pair_scores])[mated]
    ib = np.array([index[s.b] for s in pair_scores])[mated]
    miss = sims[mated] < threshold

    points = []
    for d in grid:
        removed = q < quantile_threshold(q, float(d))
        keep = ~(removed[ia] | removed[ib])
        n = int(keep.sum())
        if n == 0:
            logger.warning("no mated pairs left at discard rate %g", d)
            points.append((float(d), math.nan))
        else:
            points.append((float(d), int(miss[keep].sum()) / n))
    return EdcCurve(fmr_target, threshold, points)


def pauc(curve, discard_max=0.2, normalize=True):
    """Trapezoidal area under the EDC on ``[0, discard_max]``.

    Normalized values are divided by the area of a flat curve at the
    zero-discard FNMR, so 1.0 means no improvement. Undefined points are
    skipped; the curve is linearly interpolated at ``discard_max`` if that
    rate is not on the grid.
    """
    if not 0.0 < discard_max <= 1.0:
        raise InvalidParameter(f"discard_max must be in (0, 1], got {discard_max}")
    d, f = curve.discard_rates, curve.fnmr
    defined = ~np.isnan(f)
    if (~defined).any():
        logger.warning("%d undefined EDC points excluded from pAUC", int((~defined).sum()))
    d, f = d[defined], f[defined]
    if d.size == 0 or d[0] != 0.0:
        raise InvalidParameter("EDC has no defined point at discard rate 0")
    inside = d <= discard_max + 1e-12
    dd, ff = list(d[inside]), list(f[inside])
    if dd[-1] < discard_max - 1e-12:
        nxt = np.flatnonzero(~inside)
        if nxt.size == 0:
            raise InvalidParameter(f"EDC does not reach discard rate {discard_max}")
        d1, f1 = d[nxt[0]], f[nxt[0]]
        ff.append(ff[-1] + (f1 - ff[-1]) * (discard_max - dd[-1]) / (d1 - dd[-1]))
        dd.append(discard_max)
    dd, ff = np.array(dd), np.array(ff)
    if dd.size < 2:
        raise InvalidParameter("need at least two EDC points inside the pAUC range")
    if not normalize:
        return float(np.trapezoid(ff, dd))
    if ff[0] == 0.0:
        raise DegenerateInput("FNMR at zero discard is 0; normalized pAUC undefined")
    return float(np.trapezoid(ff / ff[0], dd) / np.trapezoid(np.ones_like(dd), dd))


def _svg(curve, discard_max):
    w, h, ml, mr, mt, mb = 480, 360, 60, 20, 20, 50
    pw, ph = w - ml - mr, h - mt - mb
    d, f = curve.discard_rates, curve.fnmr
    ok = ~np.isnan(f)
    xmax = float(d.max()) if d.size and d.max() > 0 else 1.0
    ymax = float(f[ok].max()) if ok.any() and f[ok].max() > 0 else 1.0

    def px(x, y):
        return f"{ml + pw * x / xmax:.2f},{mt + ph * (1 - y / ymax):.2f}"

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">',
        f'<rect x="0" y="0" width="{w}" height="{h}" fill="white"/>',
        f'<line x1="{ml}" y1="{mt + ph}" x2="{ml + pw}" y2="{mt + ph}" stroke="black"/>',
        f'<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{mt + ph}" stroke="black"/>',
    ]
    for k in range(6):
        xv, yv = xmax * k / 5, ymax * k / 5
        x, y = ml + pw * k / 5, mt + ph * (1 - k / 5)
        out.append(f'<text x="{x:.2f}" y="{mt + ph + 16}" font-size="11" '
                   f'text-anchor="middle">{xv:.2f}</text>')
        out.append(f'<text x="{ml - 6}" y="{y + 4:.2f}" font-size="11" '
                   f'text-anchor="end">{yv:.3f}</text>')
    if discard_max <= xmax:
        x = ml + pw * discard_max / xmax
        out.append(f'<line x1="{x:.2f}" y1="{mt}" x2="{x:.2f}" y2="{mt + ph}" '
                   f'stroke="gray" stroke-dasharray="4 3"/>')
    pts = " ".join(px(x, y) for x, y in zip(d[ok], f[ok]))
    out.append(f'<polyline fill="none" stroke="#1f77b4" stroke-width="2" points="{pts}"/>')
    out.append(f'<text x="{ml + pw / 2:.2f}" y="{h - 10}" font-size="13" '
               f'text-anchor="middle">Discard rate</text>')
    out.append(f'<text x="16" y="{mt + ph / 2:.2f}" font-size="13" text-anchor="middle" '
               f'transform="rotate(-90 16 {mt + ph / 2:.2f})">FNMR @ FMR={curve.fmr_target:g}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def summary_record(curve, value, discard_max, normalized, n_mated=None, n_nonmated=None):
    return {
        "fmr_target": curve.fmr_target,
        "threshold": curve.threshold,
        "discard_max": discard_max,
        "normalized": normalized,
        "pauc": value,
        "fnmr_at_zero": curve.points[0][1] if curve.points else None,
        "n_mated": n_mated,
        "n_nonmated": n_nonmated,
    }


def emit_report(curve, csv_path, svg_path=None, summary=None, summary_path=None, discard_max=0.2):
    """Write the EDC CSV and optionally the SVG plot and the pAUC summary."""
    try:
        Path(csv_path).write_text(curve.to_csv())
        if svg_path:
            Path(svg_path).write_text(_svg(curve, discard_max))
        if summary_path and summary is not None:
            Path(summary_path).write_text(json.dumps(summary, indent=2) + "\n")
    except OSError as exc:
        raise IoError(f"cannot write report: {exc}") from exc


def file_sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
