"""Observer initialization: find the taps whose norms best track quality.

Every candidate tap is aggregated over a calibration set, ranked by Spearman
correlation with pseudo-quality labels, and the best ``b`` taps enter a greedy
forward search over their joint (mean) score. Of the ``b`` nested sets the
search visits, the one with the highest correlation wins.

Ties are always broken towards the tap that comes first in topological order
(lower column index); correlations are compared exactly, without tolerance.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.feature_selection import SelectorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from . import imaging
from ._batch import run_batch
from .auxiliary import PseudoLabelSet
from .exceptions import CompatibilityError, DegenerateInput, InvalidParameter, InvalidScore, ShapeError
from .observer import AGGREGATION_ID, ObserverConfig, aggregate, combine
from .stats import spearman

logger = logging.getLogger(__name__)


@dataclass
class LayerScoreMatrix:
    """``scores[i, l]`` is the aggregated value of tap ``taps[l]`` on ``images[i]``."""

    taps: list
    images: list
    scores: np.ndarray

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if self.scores.shape != (len(self.images), len(self.taps)):
            raise ShapeError(f"score matrix shape {self.scores.shape} does not match "
                             f"{len(self.images)} images x {len(self.taps)} taps")


def _joint(Z, cols):
    """Row-wise mean of the given columns, summed in ascending column order."""
    cols = sorted(cols)
    acc = Z[:, cols[0]].copy()
    for c in cols[1:]:
        acc += Z[:, c]
    return acc / len(cols)


def _safe_spearman(y, s):
    try:
        return spearman(y, s)
    except DegenerateInput:
        return math.nan


class GreedyCorrelationSelector(SelectorMixin, BaseEstimator):
    """Select the column subset whose mean best rank-correlates with ``y``.

    Parameters
    ----------
    top_b : int
        Number of best single columns admitted to the greedy search. The
        search evaluates at most ``top_b * (top_b + 1) / 2`` subsets.
    normalize : bool
        Min-max scale each column (statistics from the fit data) before
        averaging. Off by default: raw aggregates are averaged.

    Attributes
    ----------
    layer_correlations_ : ndarray of shape (n_features,)
        Spearman correlation of each column with ``y``; NaN for constant columns.
    top_b_ : list of int
        Candidate columns, best first.
    trace_ : list of (step, columns, correlation)
        Every joint evaluation. Step 0 holds the singleton sets of ``top_b_``.
    prefix_correlations_ : list of float
        Correlation of each nested set ``K^1 .. K^b``.
    selected_ : list of int
        Chosen columns in the order they were added.
    joint_correlation_ : float
    """

    def __init__(self, top_b=10, normalize=False):
        self.top_b = top_b
        self.normalize = normalize

    def _scaled(self, X):
        if not self.normalize:
            return X
        span = np.where(self.max_ > self.min_, self.max_ - self.min_, 1.0)
        return (X - self.min_) / span

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64, ensure_min_samples=2, y_numeric=True)
        if int(self.top_b) != self.top_b or self.top_b < 1:
            raise InvalidParameter(f"top_b must be a positive integer, got {self.top_b}")
        if np.all(y == y[0]):
            raise DegenerateInput("all labels are equal")
        self.n_features_in_ = X.shape[1]

        corr = np.array([_safe_spearman(y, X[:, j]) for j in range(X.shape[1])])
        for j in np.flatnonzero(np.isnan(corr)):
            logger.warning("column %d is constant over the calibration set; excluded", j)
        valid = np.flatnonzero(~np.isnan(corr))
        if valid.size == 0:
            raise DegenerateInput("no non-constant candidate columns")
        self.layer_correlations_ = corr
        self.min_ = X.min(axis=0)
        self.max_ = X.max(axis=0)

        top = sorted(valid, key=lambda j: (-corr[j], j))[: int(self.top_b)]
        self.top_b_ = [int(j) for j in top]
        Z = self._scaled(X)

        trace = [(0, (j,), float(corr[j])) for j in self.top_b_]
        chosen = [self.top_b_[0]]
        prefixes = [float(corr[chosen[0]])]
        remaining = sorted(self.top_b_[1:])
        step = 1
        while remaining:
            best, best_c = None, -math.inf
            for j in remaining:
                cols = tuple(sorted(chosen + [j]))
                c = _safe_spearman(y, _joint(Z, cols))
                trace.append((step, cols, c))
                if c > best_c:
                    best, best_c = j, c
            if best is None:
                logger.warning("greedy search stopped at step %d: all joint scores constant", step)
                break
            chosen.append(best)
            prefixes.append(best_c)
            remaining.remove(best)
            step += 1

        n_best = max(range(len(prefixes)), key=lambda n: (prefixes[n], -n))
        self.trace_ = trace
        self.prefix_correlations_ = prefixes
        self.greedy_order_ = chosen
        self.selected_ = chosen[: n_best + 1]
        self.joint_correlation_ = prefixes[n_best]
        return self

    def _get_support_mask(self):
        check_is_fitted(self, "selected_")
        mask = np.zeros(self.n_features_in_, dtype=bool)
        mask[self.selected_] = True
        return mask

    def score_samples(self, X):
        """Joint quality score (mean of the selected columns) per row."""
        check_is_fitted(self, "selected_")
        X = check_array(X, dtype=np.float64)
        return _joint(self._scaled(X), self.selected_)

    def score(self, X, y):
        """Spearman correlation of :meth:`score_samples` with ``y``."""
        return spearman(y, self.score_samples(X))


@dataclass
class CalibrationReport:
    per_tap_correlation: dict
    top_b: list
    greedy_trace: list
    selected: list
    joint_correlation: float
    prefix_correlations: list = field(default_factory=list)
    excluded: list = field(default_factory=list)

    @property
    def n_evaluations(self):
        return len(self.greedy_trace)

    def to_text(self):
        lines = ["# froq calibration report", "", "## per-tap correlation", "tap\trho"]
        lines += [f"{t}\t{c:.9g}" for t, c in self.per_tap_correlation.items()]
        if self.excluded:
            lines += ["", "## excluded taps", *self.excluded]
        lines += ["", f"## top-{len(self.top_b)} candidates", *self.top_b]
        lines += ["", "## greedy trace", "step\trho\tset"]
        lines += [f"{s}\t{c:.9g}\t{','.join(cols)}" for s, cols, c in self.greedy_trace]
        lines += ["", "## nested sets", "size\trho"]
        lines += [f"{n}\t{c:.9g}" for n, c in enumerate(self.prefix_correlations, start=1)]
        lines += ["", "## selected", f"rho\t{self.joint_correlation:.9g}", *self.selected]
        return "\n".join(lines) + "\n"


def greedy_select(matrix, labels, b=10, normalize=False):
    """Run the greedy search on a score matrix; returns ``(report, selector)``.

    ``labels`` is either a :class:`PseudoLabelSet` (aligned by image id) or a
    vector already ordered like ``matrix.images``.
    """
    y = labels.aligned(matrix.images) if isinstance(labels, PseudoLabelSet) else np.asarray(labels, float)
    sel = GreedyCorrelationSelector(top_b=b, normalize=normalize).fit(matrix.scores, y)
    taps = matrix.taps
    corr = sel.layer_correlations_
    report = CalibrationReport(
        per_tap_correlation={taps[j]: float(corr[j]) for j in range(len(taps)) if not np.isnan(corr[j])},
        top_b=[taps[j] for j in sel.top_b_],
        greedy_trace=[(s, tuple(taps[j] for j in cols), c) for s, cols, c in sel.trace_],
        selected=[taps[j] for j in sel.selected_],
        joint_correlation=sel.joint_correlation_,
        prefix_correlations=list(sel.prefix_correlations_),
        excluded=[taps[j] for j in range(len(taps)) if np.isnan(corr[j])],
    )
    return report, sel


def layer_scan(session, paths, threads=None):
    """Aggregate every active tap for every image; exactly one pass per image.

    A session without active taps is widened to all eligible taps. Taps that
    produce non-finite values on any image are dropped with a warning.
    """
    paths = [str(p) for p in paths]
    if not paths:
        raise InvalidParameter("no calibration images")
    if not session.tap_ids:
        session = session.with_taps([t.tap_id for t in session.available_taps])
    taps = session.tap_ids

    def scan(path):
        x = session.preprocess(imaging.load_image(path, session.input_size))
        _, tapped = session.run(x)
        row = np.empty(len(taps))
        for j, t in enumerate(taps):
            try:
                row[j] = aggregate(tapped[t])
            except InvalidScore:
                row[j] = np.nan
        return row

    rows = run_batch(scan, paths, threads)
    images = [p for p, r in zip(paths, rows) if r is not None]
    scores = np.array([r for r in rows if r is not None]).reshape(len(images), len(taps))
    bad = np.isnan(scores).any(axis=0)
    for j in np.flatnonzero(bad):
        logger.warning("tap %s produced non-finite values; excluded", taps[j])
    keep = np.flatnonzero(~bad)
    return LayerScoreMatrix([taps[j] for j in keep], images, scores[:, keep])


def layer_correlations(matrix, labels):
    """Spearman correlation of each tap column with the labels.

    Constant columns are left out (with a warning) instead of scoring 0.
    """
    y = labels.aligned(matrix.images) if isinstance(labels, PseudoLabelSet) else np.asarray(labels, float)
    if y.shape != (len(matrix.images),):
        raise ShapeError("label vector does not match the number of images")
    out = {}
    for j, tap in enumerate(matrix.taps):
        c = _safe_spearman(y, matrix.scores[:, j])
        if math.isnan(c):
            logger.warning("tap %s is constant over the calibration set; excluded", tap)
        else:
            out[tap] = c
    return out


def calibrate(session, paths, labels, b=10, normalize=False, force=False,
              taps=None, threads=None, created=None):
    """Scan, rank and greedily select taps; returns ``(ObserverConfig, CalibrationReport)``.

    ``taps`` restricts the candidates (default: every eligible tap). Labels made
    with a different model are refused unless ``force`` is set.
    """
    if labels.model_identity and labels.model_identity != session.model_identity:
        if not force:
            raise CompatibilityError(
                f"labels were produced with model {labels.model_identity[:12]}, "
                f"not {session.model_identity[:12]}; pass force=True to override")
        logger.warning("using labels from a different model (forced)")
    elif not labels.model_identity:
        logger.warning("label set does not record a model identity")
    candidates = list(taps) if taps else [t.tap_id for t in session.available_taps]
    if session.tap_ids != candidates:
        session = session.with_taps(candidates)
    paths = [str(p) for p in paths] if paths is not None else labels.paths
    matrix = layer_scan(session, paths, threads)
    if len(matrix.images) != len(paths):
        labels = PseudoLabelSet([(p, q) for p, q in labels.entries if p in set(matrix.images)],
                                labels.params, labels.model_identity)
    report, sel = greedy_select(matrix, labels, b, normalize)

    order = {t: i for i, t in enumerate(matrix.taps)}
    selected = sorted(report.selected, key=order.__getitem__)
    normalization = None
    if normalize:
        normalization = {t: (float(sel.min_[order[t]]), float(sel.max_[order[t]])) for t in selected}
    config = ObserverConfig(
        model_identity=session.model_identity,
        taps=selected,
        aggregation=AGGREGATION_ID,
        normalization=normalization,
        meta={"b": int(b), "n_images": len(matrix.images), "labels_sha256": labels.sha256(),
              "created": created, "score_range": None},
    )
    # score range from the rounded config so scoring reproduces it exactly
    joint = [combine({t: row[order[t]] for t in config.taps}, config) for row in matrix.scores]
    config.meta["score_range"] = [min(joint), max(joint)]
    config = ObserverConfig(config.model_identity, config.taps, config.aggregation,
                            config.normalization, config.meta)
    return config, report

