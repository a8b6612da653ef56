"""Rank statistics, similarity and discrete quantiles.

All functions take array-likes, work in float64 and never mutate their input.
"""

import math

import numpy as np

from .exceptions import DegenerateInput, InvalidParameter, InvalidScore, ShapeError

__all__ = ["rank", "spearman", "cosine_similarity", "quantile_threshold"]


def _as_scores(values, name="values"):
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1:
        raise ShapeError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidScore(f"{name} contains non-finite entries")
    return arr


def rank(values):
    """Fractional ranks starting at 1; tied values share the mean of their ranks.

    >>> rank([5, 5, 1]).tolist()
    [2.5, 2.5, 1.0]
    """
    a = _as_scores(values)
    n = a.size
    if n == 0:
        raise InvalidParameter("cannot rank an empty vector")
    order = np.argsort(a, kind="mergesort")
    s = a[order]
    starts = np.flatnonzero(np.r_[True, s[1:] != s[:-1]])
    ends = np.r_[starts[1:], n]
    # block covers ranks start+1 .. end
    block_rank = (starts + ends + 1) / 2.0
    out = np.empty(n, dtype=np.float64)
    out[order] = np.repeat(block_rank, ends - starts)
    return out


def spearman(a, b):
    """Spearman's rho as the Pearson correlation of fractional ranks.

    Raises
    ------
    ShapeError
        Lengths differ or are below 2.
    DegenerateInput
        Either argument is constant, so its rank variance is zero.
    """
    a = _as_scores(a, "a")
    b = _as_scores(b, "b")
    if a.size != b.size:
        raise ShapeError(f"length mismatch: {a.size} vs {b.size}")
    if a.size < 2:
        raise ShapeError("spearman needs at least two observations")
    ra = rank(a)
    rb = rank(b)
    ra -= ra.mean()
    rb -= rb.mean()
    ssa = float(ra @ ra)
    ssb = float(rb @ rb)
    if ssa == 0.0 or ssb == 0.0:
        raise DegenerateInput("all values tied; rank correlation undefined")
    rho = float(ra @ rb) / math.sqrt(ssa * ssb)
    return min(1.0, max(-1.0, rho))


def cosine_similarity(u, v):
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    if u.size != v.size:
        raise ShapeError(f"dimension mismatch: {u.size} vs {v.size}")
    if u.size == 0:
        raise ShapeError("empty embedding")
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        raise DegenerateInput("zero-norm embedding")
    return min(1.0, max(-1.0, float(u @ v) / (nu * nv)))


def quantile_threshold(values, p):
    """Discrete lower quantile used as a discard cutoff.

    Returns ``t`` such that the elements strictly below ``t`` form the largest
    achievable fraction not exceeding ``p``. Ties are never split, so the set
    ``values < t`` is always a realizable discard set. When every element can
    be discarded (``p == 1``) the result is ``inf``.
    """
    if not 0.0 <= p <= 1.0:
        raise InvalidParameter(f"fraction must be in [0, 1], got {p}")
    s = np.sort(_as_scores(values))
    n = s.size
    if n == 0:
        raise InvalidParameter("empty score vector")
    limit = math.floor(p * n + 1e-9)
    if limit >= n:
        return math.inf
    starts = np.flatnonzero(np.r_[True, s[1:] != s[:-1]])
    start = starts[np.searchsorted(starts, limit, side="right") - 1]
    return float(s[start])
