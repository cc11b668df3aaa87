"""Exact optimal segmentation by dynamic programming (Fisher's algorithm).

The criterion is the sum over segments of a within-segment diameter: the
inertia about the segment mean, or the residual sum of squares of a
degree-``p`` polynomial least-squares fit. All ``O(n^2)`` interval costs are
materialised, then a ``K``-stage DP finds the global minimiser.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from . import _accel
from ._accel import njit
from .model import (
    ClassRegression,
    DomainError,
    OrderedPartition,
    PolynomialBasis,
    TimeSeries,
    design_matrix,
    solve_spd,
    variance_floor,
)

MAX_N = 20_000


@dataclass(frozen=True)
class ConstantMean:
    """Inertia about the segment mean."""

    @property
    def degree(self) -> int:
        return 0


@dataclass(frozen=True)
class Polynomial:
    """Residual sum of squares of a degree-``degree`` polynomial fit."""

    degree: int

    def __post_init__(self):
        PolynomialBasis(self.degree)


DiameterKind = Union[ConstantMean, Polynomial]


@dataclass(frozen=True)
class SegmentationResult:
    partition: OrderedPartition
    per_segment_fits: tuple[ClassRegression, ...]
    total_cost: float
    kind: DiameterKind


# -- kernels -----------------------------------------------------------------


@njit
def _mean_cost_nb(y):
    n = y.size
    C = np.zeros((n, n))
    for i in range(n):
        mean = 0.0
        m2 = 0.0
        for j in range(i, n):
            cnt = j - i + 1
            d = y[j] - mean
            mean += d / cnt
            m2 += d * (y[j] - mean)
            C[i, j] = m2 if m2 > 0.0 else 0.0
    return C


@njit
def _poly_cost_nb(u, y, m):
    n = u.size
    C = np.zeros((n, n))
    S = np.empty((m, m))
    L = np.empty((m, m))
    b = np.empty(m)
    z = np.empty(m)
    beta = np.empty(m)
    pw = np.empty(m)
    for i in range(n):
        S[:, :] = 0.0
        b[:] = 0.0
        syy = 0.0
        for j in range(i, n):
            pw[0] = 1.0
            dt = u[j] - u[i]
            for a in range(1, m):
                pw[a] = pw[a - 1] * dt
            for a in range(m):
                b[a] += pw[a] * y[j]
                for c in range(m):
                    S[a, c] += pw[a] * pw[c]
            syy += y[j] * y[j]
            if j - i + 1 <= m:
                continue
            tr = 0.0
            for a in range(m):
                tr += S[a, a]
            jitter = 0.0
            for attempt in range(8):
                ok = True
                for a in range(m):
                    for c in range(a + 1):
                        s = S[a, c]
                        if a == c:
                            s += jitter
                        for q in range(c):
                            s -= L[a, q] * L[c, q]
                        if a == c:
                            if s <= 0.0:
                                ok = False
                                break
                            L[a, a] = np.sqrt(s)
                        else:
                            L[a, c] = s / L[c, c]
                    if not ok:
                        break
                if ok:
                    break
                jitter = 1e-10 * tr if jitter == 0.0 else jitter * 100.0
            for a in range(m):
                s = b[a]
                for q in range(a):
                    s -= L[a, q] * z[q]
                z[a] = s / L[a, a]
            for a in range(m - 1, -1, -1):
                s = z[a]
                for q in range(a + 1, m):
                    s -= L[q, a] * beta[q]
                beta[a] = s / L[a, a]
            sse = syy
            for a in range(m):
                sse -= beta[a] * b[a]
            C[i, j] = sse if sse > 0.0 else 0.0
    return C


@njit
def _dp_nb(C, K):
    n = C.shape[0]
    F = np.full((K, n), np.inf)
    arg = np.full((K, n), -1, dtype=np.int64)
    for j in range(n):
        F[0, j] = C[0, j]
    for k in range(1, K):
        for j in range(k, n):
            best = np.inf
            bi = -1
            for i in range(k - 1, j):
                v = F[k - 1, i] + C[i + 1, j]
                if v < best:
                    best = v
                    bi = i
            F[k, j] = best
            arg[k, j] = bi
    return F, arg


def _mean_cost_np(y):
    n = y.size
    C = np.zeros((n, n))
    for i in range(n):
        seg = y[i:] - y[i:].mean()
        cs = np.cumsum(seg)
        cnt = np.arange(1, n - i + 1)
        C[i, i:] = np.maximum(np.cumsum(seg * seg) - cs * cs / cnt, 0.0)
    return C


def _poly_cost_np(u, y, m):
    n = u.size
    C = np.zeros((n, n))
    hank = np.add.outer(np.arange(m), np.arange(m))
    for i in range(n):
        dt = u[i:] - u[i]
        P = dt[:, None] ** np.arange(2 * m - 1)
        mom = np.cumsum(P, axis=0)
        S = mom[:, hank]
        b = np.cumsum(P[:, :m] * y[i:, None], axis=0)
        syy = np.cumsum(y[i:] ** 2)
        fit = slice(m, None)  # segments longer than m points
        if S[fit].shape[0] == 0:
            continue
        try:
            beta = np.linalg.solve(S[fit], b[fit][..., None])[..., 0]
        except np.linalg.LinAlgError:
            tr = np.trace(S[fit], axis1=1, axis2=2)
            ridge = 1e-10 * tr[:, None, None] * np.eye(m)
            beta = np.linalg.solve(S[fit] + ridge, b[fit][..., None])[..., 0]
        sse = syy[fit] - np.einsum("ja,ja->j", beta, b[fit])
        C[i, i + m:] = np.maximum(sse, 0.0)
    return C


def _dp_np(C, K):
    n = C.shape[0]
    F = np.full((K, n), np.inf)
    arg = np.full((K, n), -1, dtype=np.int64)
    F[0] = C[0]
    for k in range(1, K):
        for j in range(k, n):
            v = F[k - 1, k - 1:j] + C[k:j + 1, j]
            i = int(np.argmin(v))
            F[k, j] = v[i]
            arg[k, j] = i + k - 1
    return F, arg


# -- public API ---------------------------------------------------------------


def _normalised(series: TimeSeries):
    t, y = series.t, series.y
    span = t[-1] - t[0]
    u = (t - t[0]) / span if span > 0 else t - t[0]
    return np.ascontiguousarray(u), np.ascontiguousarray(y - y.mean())


def compute_cost_matrix(series: TimeSeries, kind: DiameterKind, backend: str | None = None) -> np.ndarray:
    """Upper-triangular matrix of interval costs.

    Entry ``[i, j]`` (0-based, inclusive) is the diameter of points
    ``i..j``; segments with at most ``p + 1`` points fit exactly and cost 0.
    Costs are invariant to affine changes of ``t`` and to shifts of ``y``,
    so both are normalised first for conditioning.
    """
    if series.n > MAX_N:
        raise DomainError(f"cost matrix is capped at n={MAX_N} (got {series.n})")
    backend = backend or _accel.BACKEND
    u, y = _normalised(series)
    numba = backend == "numba"
    if kind.degree == 0:
        return _mean_cost_nb(y) if numba else _mean_cost_np(y)
    m = kind.degree + 1
    return _poly_cost_nb(u, y, m) if numba else _poly_cost_np(u, y, m)


def dp_tables(C: np.ndarray, K: int, backend: str | None = None):
    """Optimal-cost table ``F[k, j]`` (k+1 segments covering 0..j) and split argmins."""
    backend = backend or _accel.BACKEND
    C = np.ascontiguousarray(C, dtype=float)
    return _dp_nb(C, K) if backend == "numba" else _dp_np(C, K)


def backtrack(arg: np.ndarray, K: int) -> np.ndarray:
    n = arg.shape[1]
    bounds = np.empty(K + 1, dtype=np.int64)
    bounds[K] = n
    j = n - 1
    for k in range(K - 1, 0, -1):
        i = int(arg[k, j])
        bounds[k] = i + 1
        j = i
    bounds[0] = 0
    return bounds


def segment_fits(series: TimeSeries, partition: OrderedPartition, degree: int) -> tuple[ClassRegression, ...]:
    """Least-squares coefficients and residual variance for every segment."""
    X = design_matrix(series, PolynomialBasis(degree))
    floor = variance_floor(series.y)
    fits = []
    for s, e in partition.segments:
        Xs = X[s:e]
        beta = solve_spd(Xs.T @ Xs, Xs.T @ series.y[s:e])
        resid = series.y[s:e] - X[s:e] @ beta
        fits.append(ClassRegression(beta, max(float(resid @ resid) / (e - s), floor)))
    return tuple(fits)


def fisher_segment(series: TimeSeries, K: int, kind: DiameterKind | None = None, backend: str | None = None) -> SegmentationResult:
    """Globally optimal partition of ``series`` into ``K`` contiguous segments.

    Ties are broken deterministically: split points are scanned in
    ascending order keeping the first strict minimum, so among equal-cost
    partitions the one whose boundaries are earliest, taken from the last
    boundary backwards, is returned.
    """
    kind = ConstantMean() if kind is None else kind
    if not 1 <= K <= series.n:
        raise DomainError(f"need 1 <= K <= n, got K={K}, n={series.n}")
    C = compute_cost_matrix(series, kind, backend)
    F, arg = dp_tables(C, K, backend)
    bounds = backtrack(arg, K)
    partition = OrderedPartition(bounds)
    total = float(sum(C[s, e - 1] for s, e in partition.segments))
    return SegmentationResult(partition, segment_fits(series, partition, kind.degree), total, kind)
