"""Data model, polynomial design and likelihoods shared by every estimator."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.special import logsumexp

LOG_2PI = math.log(2.0 * math.pi)


class DomainError(ValueError):
    """Input outside the domain of an operation (bad variance, label, value)."""


class EmptyClassError(RuntimeError):
    """A class received zero total weight during fitting."""


def _as_vector(x, name: str) -> np.ndarray:
    arr = np.array(x, dtype=float).reshape(-1)
    if arr.size == 0:
        raise DomainError(f"{name} must contain at least one value")
    return arr


@dataclass(frozen=True)
class TimeSeries:
    """Scalar observations ``y`` sampled at strictly increasing instants ``t``."""

    t: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        t = _as_vector(self.t, "t")
        y = _as_vector(self.y, "y")
        if t.shape != y.shape:
            raise DomainError(f"t and y lengths differ ({t.size} != {y.size})")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(y))):
            raise DomainError("t and y must be finite")
        if t.size > 1 and np.any(np.diff(t) <= 0):
            bad = int(np.argmax(np.diff(t) <= 0)) + 1
            raise DomainError(f"t must be strictly increasing (violated at index {bad})")
        t.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.t.size

    def __len__(self):
        return self.t.size


@dataclass(frozen=True)
class PolynomialBasis:
    degree: int

    def __post_init__(self):
        if int(self.degree) != self.degree or self.degree < 0:
            raise DomainError(f"polynomial degree must be a non-negative integer, got {self.degree}")
        object.__setattr__(self, "degree", int(self.degree))

    @property
    def size(self) -> int:
        return self.degree + 1

    def design(self, t: float) -> np.ndarray:
        return float(t) ** np.arange(self.size)


def design_matrix(series: TimeSeries | np.ndarray, basis: PolynomialBasis) -> np.ndarray:
    """Stack the monomial rows ``(1, t, ..., t^p)`` for every sample."""
    t = series.t if isinstance(series, TimeSeries) else np.asarray(series, dtype=float)
    return np.vander(t, basis.size, increasing=True)


def solve_spd(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve ``A x = b`` for symmetric positive (semi)definite ``A`` via Cholesky.

    A diagonal jitter of ``1e-10 * trace`` is added, and grown, until the
    factorisation succeeds.
    """
    A = np.asarray(A, dtype=float)
    jitter = 1e-10 * max(float(np.trace(A)), 1e-300)
    for _ in range(12):
        try:
            return cho_solve(cho_factor(A, lower=True, check_finite=False), b, check_finite=False)
        except np.linalg.LinAlgError:
            A = A + jitter * np.eye(A.shape[0])
            jitter *= 100.0
    raise np.linalg.LinAlgError("matrix is not positive definite even after jitter")


def variance_floor(y: np.ndarray) -> float:
    """Smallest variance a class may take on data ``y``."""
    v = float(np.var(y))
    return 1e-6 * v if v > 0 else 1e-12


@dataclass(frozen=True)
class ClassRegression:
    beta: np.ndarray
    sigma2: float

    def __post_init__(self):
        beta = np.array(self.beta, dtype=float).reshape(-1)
        beta.setflags(write=False)
        object.__setattr__(self, "beta", beta)
        if not self.sigma2 > 0:
            raise DomainError(f"sigma2 must be positive, got {self.sigma2}")
        object.__setattr__(self, "sigma2", float(self.sigma2))


@dataclass(frozen=True)
class OrderedPartition:
    """Contiguous, time-ordered segmentation of ``n`` points into ``K`` classes.

    ``boundaries`` holds ``0 = b_0 <= b_1 <= ... <= b_K = n``; class ``k``
    (0-based) covers the half-open index range ``[b_k, b_{k+1})``. Equal
    consecutive boundaries encode an empty class, which only estimators that
    report degenerate outcomes produce; see :attr:`empty_classes`.
    """

    boundaries: np.ndarray

    def __post_init__(self):
        b = np.array(self.boundaries, dtype=np.int64).reshape(-1)
        if b.size < 2 or b[0] != 0:
            raise DomainError("boundaries must start at 0 and hold at least two entries")
        if np.any(np.diff(b) < 0):
            raise DomainError("boundaries must be non-decreasing")
        b.setflags(write=False)
        object.__setattr__(self, "boundaries", b)

    @classmethod
    def from_labels(cls, labels: Sequence[int], K: int) -> "OrderedPartition":
        """Build from 0-based per-point labels, which must be non-decreasing."""
        labels = np.asarray(labels, dtype=np.int64)
        if labels.size and (labels.min() < 0 or labels.max() >= K):
            raise DomainError(f"labels must lie in 0..{K - 1}")
        if np.any(np.diff(labels) < 0):
            raise DomainError("labels are not ordered in time")
        counts = np.bincount(labels, minlength=K)
        return cls(np.concatenate([[0], np.cumsum(counts)]))

    @property
    def K(self) -> int:
        return self.boundaries.size - 1

    @property
    def n(self) -> int:
        return int(self.boundaries[-1])

    @property
    def labels(self) -> np.ndarray:
        """0-based class of every point."""
        return np.repeat(np.arange(self.K), np.diff(self.boundaries))

    @property
    def segments(self) -> list[tuple[int, int]]:
        b = self.boundaries
        return [(int(b[k]), int(b[k + 1])) for k in range(self.K)]

    @property
    def empty_classes(self) -> list[int]:
        return [k for k, (s, e) in enumerate(self.segments) if e == s]

    @property
    def is_complete(self) -> bool:
        return not self.empty_classes


@dataclass(frozen=True)
class RegressionMixtureParams:
    """Class regressions (coefficients, variances) plus the logistic process."""

    classes: tuple[ClassRegression, ...]
    logistic: "LogisticParams"

    def __post_init__(self):
        classes = tuple(self.classes)
        if not classes:
            raise DomainError("at least one class is required")
        if len({c.beta.size for c in classes}) != 1:
            raise DomainError("all classes must share one polynomial degree")
        if self.logistic.K != len(classes):
            raise DomainError("logistic parameters and classes disagree on K")
        object.__setattr__(self, "classes", classes)

    @property
    def K(self) -> int:
        return len(self.classes)

    @property
    def degree(self) -> int:
        return self.classes[0].beta.size - 1

    @property
    def betas(self) -> np.ndarray:
        """(K, p+1) coefficient matrix."""
        return np.stack([c.beta for c in self.classes])

    @property
    def sigma2s(self) -> np.ndarray:
        return np.array([c.sigma2 for c in self.classes])


def gaussian_log_density(y, mean, sigma2):
    """Normal log-density, elementwise over broadcastable inputs."""
    sigma2 = np.asarray(sigma2, dtype=float)
    if np.any(~(sigma2 > 0)):
        raise DomainError("sigma2 must be positive")
    y = np.asarray(y, dtype=float)
    out = -0.5 * (LOG_2PI + np.log(sigma2)) - (y - mean) ** 2 / (2.0 * sigma2)
    return float(out) if out.ndim == 0 else out


def component_log_densities(series: TimeSeries, params: RegressionMixtureParams) -> np.ndarray:
    """(n, K) matrix of ``log N(y_i; beta_k' t_i, sigma_k^2)``."""
    X = design_matrix(series, PolynomialBasis(params.degree))
    means = X @ params.betas.T
    return gaussian_log_density(series.y[:, None], means, params.sigma2s[None, :])


def joint_log_terms(series: TimeSeries, params: RegressionMixtureParams) -> np.ndarray:
    """(n, K) matrix of ``log pi_k(t_i) + log N(y_i; ...)``."""
    from .logistic import log_logistic_probabilities

    return log_logistic_probabilities(series.t, params.logistic) + component_log_densities(series, params)


def mixture_log_likelihood(series: TimeSeries, params: RegressionMixtureParams) -> float:
    """Observed-data log-likelihood ``sum_i log sum_k pi_k N_k``."""
    return float(np.sum(logsumexp(joint_log_terms(series, params), axis=1)))


def complete_data_log_likelihood(series: TimeSeries, params: RegressionMixtureParams, labels) -> float:
    """Log-likelihood of the data together with a hard labelling.

    ``labels`` is an :class:`OrderedPartition` or a 0-based label vector
    (unordered vectors are accepted so intermediate labellings can be scored).
    """
    z = labels.labels if isinstance(labels, OrderedPartition) else np.asarray(labels, dtype=np.int64)
    if z.shape != (series.n,):
        raise DomainError(f"expected {series.n} labels, got {z.size}")
    if z.size and (z.min() < 0 or z.max() >= params.K):
        raise DomainError(f"labels must lie in 0..{params.K - 1}")
    terms = joint_log_terms(series, params)
    return float(np.sum(terms[np.arange(series.n), z]))
