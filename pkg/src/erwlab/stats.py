"""Estimators shared by the Monte Carlo experiments."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import stats as _sps


class TooFewCells(ValueError):
    pass


class NonpositiveData(ValueError):
    pass


@dataclass(frozen=True)
class Estimate:
    """Mean and standard error of an i.i.d. sample, stored as power sums.

    Merging adds the power sums, so merging is exact in ``count`` and in the
    running sums; ``mean`` and ``se`` differ from the concatenated sample only
    by floating point round-off.
    """

    count: int = 0
    total: float = 0.0
    total_sq: float = 0.0

    @classmethod
    def from_samples(cls, x) -> "Estimate":
        x = np.asarray(x, dtype=np.float64)
        return cls(int(x.size), float(x.sum()), float((x * x).sum()))

    @property
    def mean(self) -> float:
        return self.total / self.count if self.count else math.nan

    @property
    def var(self) -> float:
        if self.count < 2:
            return math.nan
        m = self.mean
        v = (self.total_sq - self.count * m * m) / (self.count - 1)
        return max(v, 0.0)

    @property
    def se(self) -> float:
        return math.sqrt(self.var / self.count) if self.count >= 2 else math.nan

    def merge(self, other: "Estimate") -> "Estimate":
        return Estimate(self.count + other.count, self.total + other.total,
                        self.total_sq + other.total_sq)

    def as_dict(self) -> dict:
        return {"mean": self.mean, "se": self.se, "count": self.count}


def mean_se(x, axis=0):
    """Plain i.i.d. mean and standard error along ``axis``."""
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[axis]
    return x.mean(axis=axis), x.std(axis=axis, ddof=1) / math.sqrt(n)


def batch_means(x, n_batches=None):
    """Mean and batch-means standard error of a (possibly autocorrelated) series.

    ``x`` has shape ``(n,)`` or ``(n, d)``.  By default ``ceil(sqrt(n))``
    batches are used; a ragged tail shorter than one batch is dropped from the
    SE computation but kept in the mean.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    if n_batches is None:
        n_batches = int(math.ceil(math.sqrt(n)))
    n_batches = max(2, min(n_batches, n))
    size = n // n_batches
    means = x[: size * n_batches].reshape((n_batches, size) + x.shape[1:]).mean(axis=1)
    se = means.std(axis=0, ddof=1) / math.sqrt(n_batches)
    return x.mean(axis=0), se


def pool_cells(a, b, min_cell=5.0):
    """Merge sparse cells of two count vectors until every expected count is
    at least ``min_cell`` under the pooled null.

    Sparse cells are lumped into one tail cell; if the lump is itself too
    small it absorbs the smallest remaining cell until it is large enough.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb_ = a.sum(), b.sum()
    if na + nb_ == 0:
        return a[:0], b[:0]
    frac = min(na, nb_) / (na + nb_)
    tot = a + b
    keep = tot * frac >= min_cell
    pa, pb = list(a[keep]), list(b[keep])
    la, lb = a[~keep].sum(), b[~keep].sum()
    if la + lb > 0:
        order = sorted(range(len(pa)), key=lambda i: pa[i] + pb[i])
        while (la + lb) * frac < min_cell and order:
            i = order.pop(0)
            la += pa[i]
            lb += pb[i]
            pa[i] = pb[i] = -1.0
        pa = [x for x in pa if x >= 0]
        pb = [x for x in pb if x >= 0]
        if (la + lb) * frac >= min_cell or not pa:
            pa.append(la)
            pb.append(lb)
    return np.array(pa), np.array(pb)


def chi_square_two_sample(counts_a, counts_b, min_cell=5.0):
    """Two-sample chi-square homogeneity test on aligned count vectors.

    Returns ``(p_value, statistic, df)``.  Cells are pooled first (see
    :func:`pool_cells`); ``df = cells - 1``.
    """
    a, b = pool_cells(counts_a, counts_b, min_cell)
    if a.size < 2:
        if a.size == 1:
            return 1.0, 0.0, 0
        raise TooFewCells("no cells left after pooling")
    na, nb_ = a.sum(), b.sum()
    tot = a + b
    k1 = math.sqrt(nb_ / na)
    k2 = math.sqrt(na / nb_)
    stat = float(np.sum((k1 * a - k2 * b) ** 2 / tot))
    df = a.size - 1
    return float(_sps.chi2.sf(stat, df)), stat, df


def align_counts(rows_a, rows_b):
    """Histogram two samples of integer vectors onto a common cell list.

    Returns ``(cells, counts_a, counts_b)`` with cells sorted
    lexicographically.
    """
    rows_a = np.ascontiguousarray(np.asarray(rows_a, dtype=np.int64).reshape(len(rows_a), -1))
    rows_b = np.ascontiguousarray(np.asarray(rows_b, dtype=np.int64).reshape(len(rows_b), -1))
    both = np.concatenate([rows_a, rows_b])
    cells, inv = np.unique(both, axis=0, return_inverse=True)
    inv = inv.ravel()
    ca = np.bincount(inv[: len(rows_a)], minlength=len(cells))
    cb = np.bincount(inv[len(rows_a):], minlength=len(cells))
    return cells, ca, cb


@dataclass
class SlopeFit:
    slope: float
    intercept: float
    ci: float  # 95% half-width from residuals
    n_points: int

    def as_dict(self):
        return {"slope": self.slope, "intercept": self.intercept,
                "ci95": self.ci, "n_points": self.n_points}


def loglog_slope(xs, ys, weights=None) -> SlopeFit:
    """Weighted least-squares slope of ``log ys`` against ``log xs``."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if np.any(xs <= 0) or np.any(ys <= 0):
        raise NonpositiveData("log-log fit needs strictly positive data")
    return linear_fit(np.log(xs), np.log(ys), weights)


def linear_fit(x, y, weights=None) -> SlopeFit:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    w = np.ones_like(x) if weights is None else np.asarray(weights, dtype=np.float64)
    n = x.size
    sw = w.sum()
    xm = (w * x).sum() / sw
    ym = (w * y).sum() / sw
    sxx = (w * (x - xm) ** 2).sum()
    slope = (w * (x - xm) * (y - ym)).sum() / sxx
    icpt = ym - slope * xm
    if n > 2:
        resid = y - icpt - slope * x
        s2 = (w * resid ** 2).sum() / (n - 2)
        se = math.sqrt(s2 / sxx)
        ci = float(_sps.t.ppf(0.975, n - 2) * se)
    else:
        ci = 0.0
    return SlopeFit(float(slope), float(icpt), ci, n)


def survival_tail_index(x, min_clusters=300, n_blocks=10, x_min=1.0):
    """Tail index of a nonnegative series from the empirical survival function.

    ``P(X > t)`` is evaluated at ``t = x_min * 2**k`` while the exceedance
    count divided by ``t`` stays at least ``min_clusters``: in a chain whose
    excursions above ``t`` last about ``t`` steps that ratio approximates the
    number of independent excursions.  Minus the log-log slope is the index.
    The standard error comes from refitting on ``n_blocks`` contiguous blocks.
    Returns ``(alpha, se, thresholds)``; ``alpha`` is nan when fewer than two
    thresholds qualify.
    """
    x = np.asarray(x, dtype=np.float64)
    ts = []
    t = x_min
    while np.count_nonzero(x > t) / t >= min_clusters:
        ts.append(t)
        t *= 2
    if len(ts) < 2:
        return math.nan, math.nan, ts
    ts = np.array(ts)

    def fit(y):
        sf = np.array([np.count_nonzero(y > t) for t in ts], dtype=np.float64) / y.size
        if np.any(sf <= 0):
            return math.nan
        return -loglog_slope(ts, sf).slope

    alpha = fit(x)
    size = x.size // n_blocks
    blocks = np.array([fit(x[b * size:(b + 1) * size]) for b in range(n_blocks)])
    blocks = blocks[np.isfinite(blocks)]
    se = float(blocks.std(ddof=1) / math.sqrt(blocks.size)) if blocks.size >= 2 else math.inf
    return float(alpha), se, [float(t) for t in ts]


def chunk_bounds(n_items, chunk):
    """Fixed chunking of ``range(n_items)``; independent of thread count."""
    return [(lo, min(lo + chunk, n_items)) for lo in range(0, n_items, chunk)]


def parallel_map(fn, items, threads=1):
    """Ordered map; ``fn`` should release the GIL (nogil numba kernels)."""
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))
