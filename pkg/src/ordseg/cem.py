"""Classification EM: joint maximisation over parameters and an ordered labelling."""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass

import numpy as np

from . import _accel
from ._accel import njit
from .em import EmConfig, FitReport, _Run, _check_sizes, _run_restarts, em_fit, m_step_regression, posteriors_and_loglik
from .logistic import LogisticParams, irls_fit, log_logistic_probabilities
from .model import (
    DomainError,
    EmptyClassError,
    OrderedPartition,
    PolynomialBasis,
    RegressionMixtureParams,
    TimeSeries,
    component_log_densities,
    variance_floor,
)

EMPTY_CLASS_POLICIES = ("abort_restart", "reseed_smallest")
C_STEP_RULES = ("profile", "posterior", "logistic")


@dataclass(frozen=True)
class CemConfig(EmConfig):
    """EM settings plus the C-step behaviour.

    ``c_step_rule`` picks the labelling maximised between M-steps:

    * ``"profile"`` (default): the time-ordered labelling maximising
      ``sum_i log N(y_i; beta_{z_i}' t_i, sigma_{z_i}^2)``, solved exactly by
      :func:`ordered_argmax`. For an ordered labelling the logistic term can
      be driven to 0 by steep proportions, so this is the exact joint
      maximisation of the classification likelihood over ``(w, z)``.
    * ``"posterior"``: ``argmax_k tau_ik`` plus contiguity repair.
    * ``"logistic"``: ``argmax_k pi_k(t_i)`` plus contiguity repair.
    """

    empty_class_policy: str = "abort_restart"
    c_step_rule: str = "profile"

    def __post_init__(self):
        super().__post_init__()
        if self.empty_class_policy not in EMPTY_CLASS_POLICIES:
            raise DomainError(f"empty_class_policy must be one of {EMPTY_CLASS_POLICIES}")
        if self.c_step_rule not in C_STEP_RULES:
            raise DomainError(f"c_step_rule must be one of {C_STEP_RULES}")


@njit
def _ordered_argmax_nb(logw):
    n, K = logw.shape
    V = np.empty((n, K))
    for k in range(K):
        V[0, k] = logw[0, k]
    for i in range(1, n):
        best = -np.inf
        for k in range(K):
            if V[i - 1, k] > best:
                best = V[i - 1, k]
            V[i, k] = logw[i, k] + best
    z = np.empty(n, dtype=np.int64)
    top = K - 1
    for i in range(n - 1, -1, -1):
        b = 0
        for k in range(1, top + 1):
            if V[i, k] > V[i, b]:
                b = k
        z[i] = b
        top = b
    return z


def _ordered_argmax_np(logw):
    n, K = logw.shape
    V = np.empty((n, K))
    V[0] = logw[0]
    for i in range(1, n):
        V[i] = logw[i] + np.maximum.accumulate(V[i - 1])
    z = np.empty(n, dtype=np.int64)
    top = K - 1
    for i in range(n - 1, -1, -1):
        top = int(np.argmax(V[i, : top + 1]))
        z[i] = top
    return z


def ordered_argmax(logw: np.ndarray) -> np.ndarray:
    """Non-decreasing labelling maximising ``sum_i logw[i, z_i]``.

    Solved exactly by a forward max-plus pass over the left-to-right chain
    of classes (classes may be skipped). Ties go to the lowest class index,
    resolved from the last point backwards. When the per-row argmax is
    already non-decreasing it is returned unchanged.
    """
    logw = np.ascontiguousarray(logw, dtype=float)
    if _accel.USE_NUMBA:
        return _ordered_argmax_nb(logw)
    return _ordered_argmax_np(logw)


def c_step(posteriors) -> OrderedPartition:
    """Hard labels ``argmax_k tau_ik`` (lowest index on ties), made contiguous.

    Any point labelled below its left neighbour joins the neighbour's
    segment (a running maximum). Empty classes are reported through
    ``partition.empty_classes``.
    """
    W = np.asarray(posteriors, dtype=float)
    z = np.maximum.accumulate(np.argmax(W, axis=1))
    return OrderedPartition.from_labels(z, W.shape[1])


def _reseed_smallest(z: np.ndarray, tau: np.ndarray, K: int) -> np.ndarray:
    """Give each empty class one point while keeping labels ordered.

    The donor is the boundary point (next to where the empty class would
    sit) with the lowest maximum posterior.
    """
    z = z.copy()
    n = z.size
    for k in range(K):
        counts = np.bincount(z, minlength=K)
        if counts[k] > 0:
            continue
        pos = int(np.searchsorted(z, k))  # first index with label >= k
        cands = [i for i in (pos - 1, pos) if 0 <= i < n and counts[z[i]] > 1]
        if not cands:
            raise EmptyClassError(f"class {k} is empty and no neighbour can donate a point")
        donor = min(cands, key=lambda i: tau[i].max())
        z[donor] = k
        if np.any(np.diff(z) < 0):
            raise EmptyClassError(f"cannot reseed class {k} without breaking the time order")
    return z


def _labels(series, params, K, rule):
    logpi = log_logistic_probabilities(series.t, params.logistic)
    logn = component_log_densities(series, params)
    if rule == "logistic":
        return np.maximum.accumulate(np.argmax(logpi, axis=1))
    if rule == "profile":
        return ordered_argmax(logn)
    return np.maximum.accumulate(np.argmax(logpi + logn, axis=1))


def _classification_loglik(series, params, z):
    terms = log_logistic_probabilities(series.t, params.logistic) + component_log_densities(series, params)
    return float(terms[np.arange(series.n), z].sum())


def _cem_run(series, K, basis, init, config: CemConfig):
    params = init
    floor = variance_floor(series.y)
    idx = np.arange(series.n)

    def classify(params):
        z = _labels(series, params, K, config.c_step_rule)
        if np.bincount(z, minlength=K).min() == 0:
            if config.empty_class_policy == "abort_restart":
                raise EmptyClassError("C-step produced an empty class")
            tau = posteriors_and_loglik(series, params)[0]
            z = _reseed_smallest(z, tau, K)
        return z

    z = classify(params)
    trace = [_classification_loglik(series, params, z)]
    irls_counts = []
    reason = "max_iterations"
    for _ in range(config.max_iterations):
        Z = np.zeros((series.n, K))
        Z[idx, z] = 1.0
        classes = m_step_regression(series, Z, basis, floor)
        irls = irls_fit(series.t, Z, init=params.logistic, max_iter=config.irls_max_iter)
        irls_counts.append(irls.n_iterations)
        params = RegressionMixtureParams(classes, irls.params)
        trace.append(_classification_loglik(series, params, z))
        z_new = classify(params)
        if np.array_equal(z_new, z):
            reason = "fixpoint"
            break
        if abs(trace[-1] - trace[-2]) <= config.rel_tol * abs(trace[-2]):
            reason = "tolerance"
            break
        z = z_new
    tau = posteriors_and_loglik(series, params)[0]
    return _Run(params, np.array(trace), irls_counts, reason, tau, z)


def cem_fit(series: TimeSeries, K: int, basis: PolynomialBasis | int = 0, config: CemConfig | None = None) -> FitReport:
    """Fit by CEM with restarts; the trace is the classification log-likelihood."""
    config = config or CemConfig()
    basis = basis if isinstance(basis, PolynomialBasis) else PolynomialBasis(basis)
    _check_sizes(series, K, basis)
    best, finals, traces, reasons, failures, elapsed = _run_restarts(
        series, K, basis, config, "cem", lambda init: _cem_run(series, K, basis, init, config)
    )
    r, run = best
    return FitReport(
        algorithm="cem",
        params=run.params,
        partition=OrderedPartition.from_labels(run.labels, K),
        loglik_trace=run.trace,
        n_iterations=len(run.trace) - 1,
        irls_iteration_counts=tuple(run.irls_counts),
        wall_clock_seconds=elapsed,
        restart_index_selected=r,
        converged=run.stop_reason != "max_iterations",
        posterior_labels=np.argmax(run.tau, axis=1),
        restart_final_values=finals,
        failed_restarts=failures,
        stop_reason=run.stop_reason,
        restart_traces=traces,
        restart_stop_reasons=reasons,
    )


@dataclass(frozen=True)
class EmCemComparison:
    n: int
    K: int
    degree: int
    em_iterations: int
    cem_iterations: int
    em_seconds: float
    cem_seconds: float
    em_loglik: float
    cem_classification_loglik: float
    em_boundaries: tuple[int, ...]
    cem_boundaries: tuple[int, ...]

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "EmCemComparison":
        d = json.loads(text)
        d["em_boundaries"] = tuple(d["em_boundaries"])
        d["cem_boundaries"] = tuple(d["cem_boundaries"])
        return cls(**d)


def compare_em_cem(
    series: TimeSeries,
    K: int,
    basis: PolynomialBasis | int = 0,
    em_config: EmConfig | None = None,
    cem_config: CemConfig | None = None,
) -> EmCemComparison:
    """Run EM and CEM on the same data and record iterations and wall time."""
    basis = basis if isinstance(basis, PolynomialBasis) else PolynomialBasis(basis)
    em_config = em_config or EmConfig()
    cem_config = cem_config or CemConfig(**asdict(em_config))
    t0 = time.perf_counter()
    em = em_fit(series, K, basis, em_config)
    t1 = time.perf_counter()
    cem = cem_fit(series, K, basis, cem_config)
    t2 = time.perf_counter()
    return EmCemComparison(
        n=series.n,
        K=K,
        degree=basis.degree,
        em_iterations=em.n_iterations,
        cem_iterations=cem.n_iterations,
        em_seconds=t1 - t0,
        cem_seconds=t2 - t1,
        em_loglik=em.final_value,
        cem_classification_loglik=cem.final_value,
        em_boundaries=tuple(int(b) for b in em.partition.boundaries),
        cem_boundaries=tuple(int(b) for b in cem.partition.boundaries),
    )
