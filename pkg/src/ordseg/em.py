"""Maximum-likelihood fit of the latent logistic process regression mixture by EM."""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.special import logsumexp

from . import _accel
from ._accel import njit
from .logistic import LogisticParams, activation_order, irls_fit, ordered_partition_from_logistic, permute_classes
from .model import (
    LOG_2PI,
    ClassRegression,
    DomainError,
    EmptyClassError,
    OrderedPartition,
    PolynomialBasis,
    RegressionMixtureParams,
    TimeSeries,
    design_matrix,
    joint_log_terms,
    solve_spd,
    variance_floor,
)

MAX_REDRAWS = 10
MIN_CLASS_WEIGHT = 1e-10


@dataclass(frozen=True)
class EmConfig:
    max_iterations: int = 1000
    rel_tol: float = 1e-8
    n_restarts: int = 5
    seed: int = 0
    irls_max_iter: int = 50
    init_irls_iter: int = 1

    def __post_init__(self):
        if self.max_iterations < 1:
            raise DomainError("max_iterations must be >= 1")
        if not self.rel_tol > 0:
            raise DomainError("rel_tol must be > 0")
        if self.n_restarts < 1:
            raise DomainError("n_restarts must be >= 1")


class _Run(NamedTuple):
    params: RegressionMixtureParams
    trace: np.ndarray
    irls_counts: list
    stop_reason: str
    tau: np.ndarray
    labels: np.ndarray | None = None


@dataclass(frozen=True)
class FitReport:
    """Outcome of an EM or CEM fit (best restart)."""

    algorithm: str
    params: RegressionMixtureParams
    partition: OrderedPartition
    loglik_trace: np.ndarray
    n_iterations: int
    irls_iteration_counts: tuple[int, ...]
    wall_clock_seconds: float
    restart_index_selected: int
    converged: bool
    posterior_labels: np.ndarray = field(repr=False)
    restart_final_values: tuple[float, ...] = ()
    failed_restarts: int = 0
    stop_reason: str = ""  # "tolerance", "fixpoint" (CEM) or "max_iterations"
    restart_traces: tuple[np.ndarray, ...] = field(default=(), repr=False)
    restart_stop_reasons: tuple[str, ...] = ()

    @property
    def final_value(self) -> float:
        return float(self.loglik_trace[-1])

    @property
    def mean_irls_iterations(self) -> float:
        c = self.irls_iteration_counts
        return float(np.mean(c)) if c else 0.0


def e_step(series: TimeSeries, params: RegressionMixtureParams) -> np.ndarray:
    """Posterior class probabilities, normalised in log space."""
    return posteriors_and_loglik(series, params)[0]


def posteriors_and_loglik(series: TimeSeries, params: RegressionMixtureParams):
    """Posterior matrix and observed-data log-likelihood from one pass."""
    if _accel.USE_NUMBA:
        tau, ll = _estep_nb(series.t, series.y, params.betas, params.sigma2s, params.logistic.coef)
        return tau, float(ll)
    return _estep_np(joint_log_terms(series, params))


@njit
def _estep_nb(t, y, betas, sigma2s, coef):
    n = t.size
    K, m = betas.shape
    tau = np.empty((n, K))
    row = np.empty(K)
    logc = np.empty(K)
    for k in range(K):
        logc[k] = -0.5 * (LOG_2PI + np.log(sigma2s[k]))
    ll = 0.0
    for i in range(n):
        mx = -np.inf
        lmx = -np.inf
        for k in range(K):
            a = coef[k, 0] + coef[k, 1] * t[i]
            row[k] = a
            if a > lmx:
                lmx = a
        s = 0.0
        for k in range(K):
            s += np.exp(row[k] - lmx)
        lnorm = lmx + np.log(s)
        for k in range(K):
            mu = betas[k, m - 1]
            for d in range(m - 2, -1, -1):
                mu = mu * t[i] + betas[k, d]
            r = y[i] - mu
            row[k] = row[k] - lnorm + logc[k] - r * r / (2.0 * sigma2s[k])
            if row[k] > mx:
                mx = row[k]
        s = 0.0
        for k in range(K):
            tau[i, k] = np.exp(row[k] - mx)
            s += tau[i, k]
        for k in range(K):
            tau[i, k] /= s
        ll += mx + np.log(s)
    return tau, ll


def _estep_np(terms: np.ndarray):
    norm = logsumexp(terms, axis=1, keepdims=True)
    tau = np.exp(terms - norm)
    tau /= tau.sum(axis=1, keepdims=True)
    return tau, float(norm.sum())


def m_step_regression(
    series: TimeSeries,
    weights: np.ndarray,
    basis: PolynomialBasis,
    floor: float | None = None,
) -> tuple[ClassRegression, ...]:
    """Weighted least squares per class; variances are weighted residual means."""
    X = design_matrix(series, basis)
    y = series.y
    floor = variance_floor(y) if floor is None else floor
    W = np.asarray(weights, dtype=float)
    out = []
    for k in range(W.shape[1]):
        w = W[:, k]
        total = w.sum()
        if not total > MIN_CLASS_WEIGHT:
            raise EmptyClassError(f"class {k} has total weight {total:.3g}")
        Xw = X * w[:, None]
        beta = solve_spd(Xw.T @ X, Xw.T @ y)
        r = y - X @ beta
        out.append(ClassRegression(beta, max(float(w @ (r * r)) / total, floor)))
    return tuple(out)


def _chunk_boundaries(series: TimeSeries, K: int, rng: np.random.Generator | None) -> np.ndarray:
    n = series.n
    if rng is None:
        edges = np.linspace(series.t[0], series.t[-1], K + 1)[1:-1]
        inner = np.searchsorted(series.t, edges, side="right")
        b = np.concatenate([[0], inner, [n]])
        if np.any(np.diff(b) == 0):
            b = np.round(np.linspace(0, n, K + 1)).astype(np.int64)
        return b
    inner = np.sort(rng.choice(np.arange(1, n), size=K - 1, replace=False))
    return np.concatenate([[0], inner, [n]])


def initialize(
    series: TimeSeries,
    K: int,
    basis: PolynomialBasis,
    seed=None,
    restart: int = 0,
    irls_iter: int = 1,
) -> RegressionMixtureParams:
    """Starting parameters from a contiguous chunking of the series.

    Restart 0 cuts ``[t_1, t_n]`` into ``K`` equal time spans; later restarts
    draw ``K - 1`` distinct random boundaries from ``seed``. Each chunk gets a
    least-squares fit; the logistic parameters come from ``irls_iter``
    Newton steps from zero on the hard chunk indicators, which keeps the
    initial proportions soft (run to convergence they would be separable).
    """
    if not 1 <= K <= series.n:
        raise DomainError(f"need 1 <= K <= n, got K={K}, n={series.n}")
    rng = None if restart == 0 else np.random.default_rng(seed)
    return _init_from_boundaries(series, _chunk_boundaries(series, K, rng), basis, irls_iter)


def _init_from_boundaries(series, bounds, basis, irls_iter):
    K = bounds.size - 1
    X = design_matrix(series, basis)
    y = series.y
    floor = variance_floor(y)
    overall = max(float(np.var(y)), floor)
    classes = []
    for k in range(K):
        s, e = int(bounds[k]), int(bounds[k + 1])
        beta = np.linalg.lstsq(X[s:e], y[s:e], rcond=None)[0]
        if e - s > basis.size:
            r = y[s:e] - X[s:e] @ beta
            s2 = max(float(r @ r) / (e - s), floor)
        else:
            s2 = overall
        classes.append(ClassRegression(beta, s2))
    Z = np.zeros((series.n, K))
    Z[np.arange(series.n), np.repeat(np.arange(K), np.diff(bounds))] = 1.0
    w = irls_fit(series.t, Z, max_iter=irls_iter).params if irls_iter > 0 else LogisticParams.zeros(K)
    return RegressionMixtureParams(tuple(classes), w)


def _check_sizes(series: TimeSeries, K: int, basis: PolynomialBasis):
    if not 1 <= K <= series.n:
        raise DomainError(f"need 1 <= K <= n, got K={K}, n={series.n}")
    if series.n < K * basis.size:
        warnings.warn(f"n={series.n} < K*(p+1)={K * basis.size}; classes are under-determined", stacklevel=3)


def _em_run(series, K, basis, init, config):
    params = init
    floor = variance_floor(series.y)
    tau, ll = posteriors_and_loglik(series, params)
    trace = [ll]
    irls_counts = []
    reason = "max_iterations"
    for _ in range(config.max_iterations):
        classes = m_step_regression(series, tau, basis, floor)
        irls = irls_fit(series.t, tau, init=params.logistic, max_iter=config.irls_max_iter)
        irls_counts.append(irls.n_iterations)
        params = RegressionMixtureParams(classes, irls.params)
        tau, ll_new = posteriors_and_loglik(series, params)
        trace.append(ll_new)
        if abs(ll_new - ll) <= config.rel_tol * abs(ll):
            reason = "tolerance"
            break
        ll = ll_new
    return _Run(params, np.array(trace), irls_counts, reason, tau)


def _run_restarts(series, K, basis, config, algorithm, run_one):
    """Shared restart loop: best final objective wins, empty classes trigger redraws."""
    start = time.perf_counter()
    best = None
    finals, traces, reasons = [], [], []
    failures = 0
    for r in range(config.n_restarts):
        rng_seed = config.seed + r
        result = None
        for attempt in range(MAX_REDRAWS + 1):
            if r == 0 and attempt == 0:
                init = initialize(series, K, basis, restart=0, irls_iter=config.init_irls_iter)
            else:
                init = initialize(
                    series, K, basis, seed=[rng_seed, attempt], restart=1, irls_iter=config.init_irls_iter
                )
            try:
                result = run_one(init)
                break
            except EmptyClassError:
                failures += 1
        if result is None:
            continue
        finals.append(float(result.trace[-1]))
        traces.append(result.trace)
        reasons.append(result.stop_reason)
        if best is None or result.trace[-1] > best[1].trace[-1]:
            best = (r, result)
    if best is None:
        raise EmptyClassError(f"{algorithm}: every restart produced an empty class")
    elapsed = time.perf_counter() - start
    return best, tuple(finals), tuple(traces), tuple(reasons), failures, elapsed


def _in_time_order(series, params, tau):
    # the likelihood is invariant to relabelling; number classes by when they lead
    order = activation_order(series.t, params.logistic)
    if np.array_equal(order, np.arange(params.K)):
        return params, tau
    classes = tuple(params.classes[k] for k in order)
    return RegressionMixtureParams(classes, permute_classes(params.logistic, order)), tau[:, order]


def em_fit(series: TimeSeries, K: int, basis: PolynomialBasis | int = 0, config: EmConfig | None = None) -> FitReport:
    """Fit by EM with restarts; the partition is the argmax of the fitted proportions.

    Classes of the returned fit are numbered in the order in which their
    proportions take the lead along ``t``.
    """
    config = config or EmConfig()
    basis = basis if isinstance(basis, PolynomialBasis) else PolynomialBasis(basis)
    _check_sizes(series, K, basis)
    best, finals, traces, reasons, failures, elapsed = _run_restarts(
        series, K, basis, config, "em", lambda init: _em_run(series, K, basis, init, config)
    )
    r, run = best
    params, tau = _in_time_order(series, run.params, run.tau)
    partition = ordered_partition_from_logistic(series.t, params.logistic, K)
    return FitReport(
        algorithm="em",
        params=params,
        partition=partition,
        loglik_trace=run.trace,
        n_iterations=len(run.trace) - 1,
        irls_iteration_counts=tuple(run.irls_counts),
        wall_clock_seconds=elapsed,
        restart_index_selected=r,
        converged=run.stop_reason != "max_iterations",
        posterior_labels=np.argmax(tau, axis=1),
        restart_final_values=finals,
        failed_restarts=failures,
        stop_reason=run.stop_reason,
        restart_traces=traces,
        restart_stop_reasons=reasons,
    )
