"""Latent logistic process: class proportions over time and their IRLS fit.

Proportions are a softmax of per-class affine functions of time,
``pi_k(t) = exp(a_k + b_k t) / sum_l exp(a_l + b_l t)``, with the last class
pinned to ``a_K = b_K = 0`` for identifiability. The centred form
``lambda_k (t + gamma_k)`` is available through :meth:`LogisticParams.from_lambda_gamma`
and the ``lambdas`` / ``gammas`` accessors.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.special import xlogy

from . import _accel
from ._accel import njit
from .model import DomainError, OrderedPartition, solve_spd

COEF_CLAMP = 1e4
DAMPING_TRIES = 24


@dataclass(frozen=True)
class LogisticParams:
    """(K, 2) array of ``(intercept, slope)`` rows; the last row is always zero."""

    coef: np.ndarray

    def __post_init__(self):
        coef = np.array(self.coef, dtype=float)
        if coef.ndim != 2 or coef.shape[1] != 2 or coef.shape[0] < 1:
            raise DomainError(f"logistic coefficients must have shape (K, 2), got {coef.shape}")
        if np.any(coef[-1] != 0):
            raise DomainError("the last class's coefficients are pinned to zero")
        coef.setflags(write=False)
        object.__setattr__(self, "coef", coef)

    @classmethod
    def zeros(cls, K: int) -> "LogisticParams":
        return cls(np.zeros((K, 2)))

    @classmethod
    def from_free(cls, free, K: int) -> "LogisticParams":
        """From the ``2(K-1)`` free coefficients, row-major ``(a_1, b_1, a_2, ...)``."""
        coef = np.zeros((K, 2))
        coef[:-1] = np.asarray(free, dtype=float).reshape(K - 1, 2)
        return cls(coef)

    @classmethod
    def from_unpinned(cls, coef) -> "LogisticParams":
        """Accept any (K, 2) coefficient array; rows are shifted so the last is zero."""
        coef = np.array(coef, dtype=float)
        return cls(coef - coef[-1])

    @classmethod
    def from_lambda_gamma(cls, lambdas, gammas) -> "LogisticParams":
        """From the centred form ``lambda_k (t + gamma_k)``, one pair per class."""
        lam = np.asarray(lambdas, dtype=float)
        gam = np.asarray(gammas, dtype=float)
        return cls.from_unpinned(np.column_stack([lam * gam, lam]))

    @property
    def K(self) -> int:
        return self.coef.shape[0]

    @property
    def free(self) -> np.ndarray:
        return self.coef[:-1].reshape(-1).copy()

    @property
    def lambdas(self) -> np.ndarray:
        return self.coef[:, 1].copy()

    @property
    def gammas(self) -> np.ndarray:
        """``a_k / b_k``; NaN where the slope is zero (no centred form exists)."""
        a, b = self.coef[:, 0], self.coef[:, 1]
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(b != 0, a / np.where(b != 0, b, 1.0), np.nan)

    def to_dict(self) -> dict:
        gam = self.gammas
        return {
            "coef": self.coef.tolist(),
            "lambda": self.lambdas.tolist(),
            "gamma": [None if np.isnan(g) else float(g) for g in gam],
        }


def _features(t) -> np.ndarray:
    t = np.asarray(t, dtype=float).reshape(-1)
    return np.column_stack([np.ones_like(t), t])


def _log_softmax_rows(logits: np.ndarray) -> np.ndarray:
    logits = logits - logits.max(axis=1, keepdims=True)
    return logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))


def log_logistic_probabilities(t, params: LogisticParams) -> np.ndarray:
    """(n, K) matrix of ``log pi_k(t_i)``."""
    return _log_softmax_rows(_features(t) @ params.coef.T)


def logistic_probabilities(t, params: LogisticParams) -> np.ndarray:
    """(n, K) matrix of class proportions; rows sum to one."""
    logits = _features(t) @ params.coef.T
    logits -= logits.max(axis=1, keepdims=True)
    p = np.exp(logits)
    p /= p.sum(axis=1, keepdims=True)
    return p


def ordered_partition_from_logistic(t, params: LogisticParams, K: int | None = None) -> OrderedPartition:
    """Label each instant with its most probable class.

    Ties go to the lowest class index. Log-odds are affine in ``t`` so the
    argmax labelling is already ordered in exact arithmetic; a running
    maximum absorbs any rounding inversion into the left neighbour's
    segment. Classes that win nowhere come back empty, check
    ``partition.is_complete``.
    """
    K = params.K if K is None else K
    if K != params.K:
        raise DomainError(f"K={K} does not match logistic parameters with K={params.K}")
    labels = np.argmax(log_logistic_probabilities(t, params), axis=1)
    labels = np.maximum.accumulate(labels)
    return OrderedPartition.from_labels(labels, K)


def activation_order(t, params: LogisticParams) -> np.ndarray:
    """Classes in the order their proportions take the lead along ``t``.

    Classes that never lead are appended in index order.
    """
    winners = np.argmax(log_logistic_probabilities(t, params), axis=1)
    first = [int(k) for k in winners[np.r_[True, np.diff(winners) != 0]]]
    seen = list(dict.fromkeys(first))
    return np.array(seen + [k for k in range(params.K) if k not in seen], dtype=np.int64)


def permute_classes(params: LogisticParams, order) -> LogisticParams:
    """Relabel so that new class ``j`` is old class ``order[j]`` (same proportions)."""
    return LogisticParams.from_unpinned(params.coef[np.asarray(order)])


def q1_objective(t, weights, params: LogisticParams) -> float:
    """Weighted multinomial log-likelihood ``sum_ik w_ik log pi_k(t_i)``."""
    t = np.ascontiguousarray(t, dtype=float)
    W = np.ascontiguousarray(weights, dtype=float)
    if _accel.USE_NUMBA:
        return float(_q1_nb(t, W, params.coef))
    return float(np.sum(W * log_logistic_probabilities(t, params)))


def q1_gradient(t, weights, params: LogisticParams) -> np.ndarray:
    """Gradient of :func:`q1_objective` with respect to the free coefficients."""
    return _q1_terms(t, weights, params.coef)[1]


# -- kernels: objective, gradient and negative Hessian in one pass ------------


@njit
def _q1_nb(t, W, coef):
    n, K = W.shape
    logits = np.empty(K)
    q = 0.0
    for i in range(n):
        mx = -np.inf
        for k in range(K):
            logits[k] = coef[k, 0] + coef[k, 1] * t[i]
            if logits[k] > mx:
                mx = logits[k]
        s = 0.0
        for k in range(K):
            s += np.exp(logits[k] - mx)
        ls = mx + np.log(s)
        for k in range(K):
            if W[i, k] != 0.0:
                q += W[i, k] * (logits[k] - ls)
    return q


@njit
def _q1_terms_nb(t, W, coef):
    n, K = W.shape
    m = K - 1
    logits = np.empty(K)
    p = np.empty(K)
    g = np.zeros(2 * m)
    # per class pair (k <= l): sums of a, a*t, a*t^2 for the 2x2 blocks
    M0 = np.zeros((m, m))
    M1 = np.zeros((m, m))
    M2 = np.zeros((m, m))
    q = 0.0
    for i in range(n):
        ti = t[i]
        mx = -np.inf
        for k in range(K):
            logits[k] = coef[k, 0] + coef[k, 1] * ti
            if logits[k] > mx:
                mx = logits[k]
        s = 0.0
        for k in range(K):
            p[k] = np.exp(logits[k] - mx)
            s += p[k]
        ls = mx + np.log(s)
        inv = 1.0 / s
        wsum = 0.0
        for k in range(K):
            w = W[i, k]
            if w != 0.0:
                q += w * (logits[k] - ls)
            wsum += w
            p[k] *= inv
        t2 = ti * ti
        for k in range(m):
            r = W[i, k] - wsum * p[k]
            g[2 * k] += r
            g[2 * k + 1] += r * ti
            wp = wsum * p[k]
            for l in range(k, m):
                a = -wp * p[l]
                if k == l:
                    a += wp
                M0[k, l] += a
                M1[k, l] += a * ti
                M2[k, l] += a * t2
    H = np.empty((2 * m, 2 * m))
    for k in range(m):
        for l in range(k, m):
            H[2 * k, 2 * l] = M0[k, l]
            H[2 * k, 2 * l + 1] = M1[k, l]
            H[2 * k + 1, 2 * l] = M1[k, l]
            H[2 * k + 1, 2 * l + 1] = M2[k, l]
            H[2 * l, 2 * k] = M0[k, l]
            H[2 * l + 1, 2 * k] = M1[k, l]
            H[2 * l, 2 * k + 1] = M1[k, l]
            H[2 * l + 1, 2 * k + 1] = M2[k, l]
    return q, g, H


def _q1_terms_np(t, W, coef):
    X = _features(t)
    logp = _log_softmax_rows(X @ coef.T)
    P = np.exp(logp)
    q = float(np.sum(W * logp))
    R = W - W.sum(axis=1, keepdims=True) * P
    g = (R[:, :-1].T @ X).reshape(-1)
    return q, g, _q1_neg_hessian(X, W, P)


def _q1_neg_hessian(X, W, P) -> np.ndarray:
    s = W.sum(axis=1)
    Pf = P[:, :-1]
    m = Pf.shape[1]
    # A_i = s_i (diag(p_i) - p_i p_i')
    A = -s[:, None, None] * Pf[:, :, None] * Pf[:, None, :]
    idx = np.arange(m)
    A[:, idx, idx] += s[:, None] * Pf
    XX = X[:, :, None] * X[:, None, :]
    return np.einsum("ikl,iab->kalb", A, XX).reshape(2 * m, 2 * m)


def _q1_terms(t, weights, coef):
    t = np.ascontiguousarray(t, dtype=float)
    W = np.ascontiguousarray(weights, dtype=float)
    coef = np.ascontiguousarray(coef, dtype=float)
    if _accel.USE_NUMBA:
        return _q1_terms_nb(t, W, coef)
    return _q1_terms_np(t, W, coef)


def _coef_from_free(free, K):
    coef = np.zeros((K, 2))
    coef[:-1] = free.reshape(K - 1, 2)
    return coef


def _q1_at_np(t, W, v):
    return float(np.sum(W * _log_softmax_rows(_features(t) @ _coef_from_free(v, W.shape[1]).T)))


def _line_search_np(t, W, v, q, step, last, max_halvings, clamp):
    alpha = 1.0
    for _ in range(1 if last else max_halvings + 1):
        raw = v + alpha * step
        cand = np.clip(raw, -clamp, clamp)
        if np.array_equal(cand, v):
            break
        q_new = _q1_at_np(t, W, cand)
        if q_new > q or (last and q_new == q):
            return cand, q_new, bool(np.any(raw != cand)), True
        alpha *= 0.5
    return v, q, False, False


def _damped_np(t, W, v, q, g, negH, clamp):
    # Levenberg-Marquardt fallback: near separation the Hessian is almost
    # singular and the Newton step too long for halving to rescue
    scale = max(float(np.max(np.abs(negH))), 1e-300)
    eye = np.eye(v.size)
    for j in range(DAMPING_TRIES):
        mu = scale * 10.0 ** (j - 8)
        raw = v + solve_spd(negH + mu * eye, g)
        cand = np.clip(raw, -clamp, clamp)
        if np.array_equal(cand, v):
            break
        q_new = _q1_at_np(t, W, cand)
        if q_new > q:
            return cand, q_new, bool(np.any(raw != cand)), True
    return v, q, False, False


def _newton_np(t, W, v, max_iter, tol, grad_tol, max_halvings, clamp):
    K = W.shape[1]
    q, g, negH = _q1_terms_np(t, W, _coef_from_free(v, K))
    trace = [q]
    clamped = False
    it = 0
    while K > 1 and it < max_iter and np.max(np.abs(g)) >= grad_tol:
        step = solve_spd(negH, g)
        pinned = (np.abs(v) >= clamp) & (np.sign(step) == np.sign(v))
        if pinned.any():
            # projected Newton: coordinates stuck on the clamp are held fixed
            clamped = True
            free = ~pinned
            if not free.any():
                break
            step = np.zeros_like(v)
            step[free] = solve_spd(negH[np.ix_(free, free)], g[free])
        last = float(g @ step) / 2.0 < tol
        cand, q_new, hit, accepted = _line_search_np(t, W, v, q, step, last, max_halvings, clamp)
        if not accepted and not last:
            cand, q_new, hit, accepted = _damped_np(t, W, v, q, g, negH, clamp)
        if not accepted:
            break
        it += 1
        clamped |= hit
        v = cand
        dq = q_new - q
        q, g, negH = _q1_terms_np(t, W, _coef_from_free(v, K))
        trace.append(q)
        if last or dq < tol:
            break
    return v, np.array(trace), it, clamped


@njit
def _chol_solve_nb(A, b):
    m = b.size
    L = np.zeros((m, m))
    tr = 0.0
    for a in range(m):
        tr += A[a, a]
    base = 1e-10 * max(tr, 1e-300)
    jitter = 0.0
    for attempt in range(12):
        ok = True
        for a in range(m):
            for c in range(a + 1):
                s = A[a, c]
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
        jitter = base if jitter == 0.0 else jitter * 100.0
    z = np.empty(m)
    x = np.empty(m)
    for a in range(m):
        s = b[a]
        for q in range(a):
            s -= L[a, q] * z[q]
        z[a] = s / L[a, a]
    for a in range(m - 1, -1, -1):
        s = z[a]
        for q in range(a + 1, m):
            s -= L[q, a] * x[q]
        x[a] = s / L[a, a]
    return x


@njit
def _try_nb(t, W, v, q, step, scale, clamp, cand, coef, allow_equal):
    """Evaluate ``v + scale * step`` (clipped); returns (status, hit, q_new).

    status: 1 accepted, 0 rejected, -1 candidate identical to ``v``.
    """
    K = W.shape[1]
    hit = False
    same = True
    for a in range(v.size):
        c = v[a] + scale * step[a]
        if c > clamp:
            c = clamp
            hit = True
        elif c < -clamp:
            c = -clamp
            hit = True
        cand[a] = c
        if c != v[a]:
            same = False
    if same:
        return -1, False, q
    for k in range(K - 1):
        coef[k, 0] = cand[2 * k]
        coef[k, 1] = cand[2 * k + 1]
    q_new = _q1_nb(t, W, coef)
    if q_new > q or (allow_equal and q_new == q):
        return 1, hit, q_new
    return 0, False, q


@njit
def _line_search_nb(t, W, v, q, step, alpha, max_halvings, clamp, cand, coef):
    """Halve from ``alpha`` until the objective increases (``max_halvings`` total)."""
    n_try = max_halvings + 1 - int(round(-np.log2(alpha)))
    for _ in range(n_try):
        status, hit, q_new = _try_nb(t, W, v, q, step, alpha, clamp, cand, coef, False)
        if status == 1:
            return True, hit, q_new
        if status == -1:
            break
        alpha *= 0.5
    return False, False, q


@njit
def _damped_nb(t, W, v, q, g, negH, clamp, cand, coef):
    d = v.size
    scale = 1e-300
    for a in range(d):
        for c in range(d):
            scale = max(scale, abs(negH[a, c]))
    A = np.empty((d, d))
    for j in range(DAMPING_TRIES):
        mu = scale * 10.0 ** (j - 8)
        A[:, :] = negH
        for a in range(d):
            A[a, a] += mu
        step = _chol_solve_nb(A, g)
        status, hit, q_new = _try_nb(t, W, v, q, step, 1.0, clamp, cand, coef, False)
        if status == 1:
            return True, hit, q_new
        if status == -1:
            break
    return False, False, q


@njit
def _newton_nb(t, W, v0, max_iter, tol, grad_tol, max_halvings, clamp):
    K = W.shape[1]
    d = v0.size
    v = v0.copy()
    coef = np.zeros((K, 2))
    for k in range(K - 1):
        coef[k, 0] = v[2 * k]
        coef[k, 1] = v[2 * k + 1]
    q, g, negH = _q1_terms_nb(t, W, coef)
    trace = np.empty(max_iter + 1)
    trace[0] = q
    clamped = False
    it = 0
    cand = np.empty(d)
    while K > 1 and it < max_iter:
        gmax = 0.0
        for a in range(d):
            gmax = max(gmax, abs(g[a]))
        if gmax < grad_tol:
            break
        step = _chol_solve_nb(negH, g)
        n_free = 0
        for a in range(d):
            if abs(v[a]) >= clamp and np.sign(step[a]) == np.sign(v[a]):
                clamped = True
            else:
                n_free += 1
        if n_free == 0:
            break
        if n_free < d:
            idx = np.empty(n_free, dtype=np.int64)
            j = 0
            for a in range(d):
                if not (abs(v[a]) >= clamp and np.sign(step[a]) == np.sign(v[a])):
                    idx[j] = a
                    j += 1
            Hs = np.empty((n_free, n_free))
            gs = np.empty(n_free)
            for a in range(n_free):
                gs[a] = g[idx[a]]
                for c in range(n_free):
                    Hs[a, c] = negH[idx[a], idx[c]]
            xs = _chol_solve_nb(Hs, gs)
            step[:] = 0.0
            for a in range(n_free):
                step[idx[a]] = xs[a]
        dec = 0.0
        for a in range(d):
            dec += g[a] * step[a]
        last = dec / 2.0 < tol
        # full step first, evaluated with derivatives so an accepted step
        # needs no second pass over the data
        hit = False
        same = True
        for a in range(d):
            c = min(max(v[a] + step[a], -clamp), clamp)
            if c != v[a] + step[a]:
                hit = True
            if c != v[a]:
                same = False
            cand[a] = c
        if same:
            break
        for k in range(K - 1):
            coef[k, 0] = cand[2 * k]
            coef[k, 1] = cand[2 * k + 1]
        q_new, g_new, H_new = _q1_terms_nb(t, W, coef)
        accepted = q_new > q or (last and q_new == q)
        fresh = accepted
        if not accepted and not last:
            accepted, hit, q_new = _line_search_nb(t, W, v, q, step, 0.5, max_halvings, clamp, cand, coef)
            if not accepted:
                accepted, hit, q_new = _damped_nb(t, W, v, q, g, negH, clamp, cand, coef)
        if not accepted:
            break
        it += 1
        if hit:
            clamped = True
        v[:] = cand
        dq = q_new - q
        if fresh:
            q, g, negH = q_new, g_new, H_new
        else:
            for k in range(K - 1):
                coef[k, 0] = v[2 * k]
                coef[k, 1] = v[2 * k + 1]
            q, g, negH = _q1_terms_nb(t, W, coef)
        trace[it] = q
        if last or dq < tol:
            break
    return v, trace[: it + 1].copy(), it, clamped


class IrlsResult(NamedTuple):
    params: LogisticParams
    q1_trace: np.ndarray
    n_iterations: int
    saturated: bool


def irls_fit(
    t,
    weights,
    init: LogisticParams | None = None,
    max_iter: int = 50,
    tol: float = 1e-8,
    grad_tol: float = 1e-7,
    max_halvings: int = 30,
) -> IrlsResult:
    """Maximise the weighted multinomial logistic log-likelihood by Newton-Raphson.

    Each Newton step is halved (at most ``max_halvings`` times) until it
    increases the objective, so ``q1_trace`` never decreases; when no halving
    helps the current point is returned. Iteration stops once the increase
    (achieved, or predicted by the Newton decrement) drops below ``tol``,
    the gradient sup-norm drops below ``grad_tol``, or after ``max_iter``
    steps. Coefficients are clamped to ``[-1e4, 1e4]``. ``saturated`` is
    set when the clamp was hit, or when hard 0/1 weights are reproduced
    exactly by the fitted argmax: the classes are then linearly separable in
    time and the optimum lies at infinity.
    """
    t = np.ascontiguousarray(t, dtype=float)
    W = np.ascontiguousarray(weights, dtype=float)
    n, K = W.shape
    if t.shape[0] != n:
        raise DomainError("weights and t disagree on n")
    params = LogisticParams.zeros(K) if init is None else init
    if params.K != K:
        raise DomainError("init and weights disagree on K")

    newton = _newton_nb if _accel.USE_NUMBA else _newton_np
    free, trace, it, clamped = newton(t, W, params.free, max_iter, tol, grad_tol, max_halvings, COEF_CLAMP)
    params = LogisticParams.from_free(free, K) if K > 1 else params

    separated = False
    if K > 1 and np.all((W == 0) | (W == 1)):
        # hard labels reproduced exactly by affine log-odds: linearly separable
        fitted = np.argmax(log_logistic_probabilities(t, params), axis=1)
        separated = bool(np.array_equal(fitted, np.argmax(W, axis=1)))
    return IrlsResult(params, np.asarray(trace), int(it), bool(clamped) or separated)


def logistic_curves(params: LogisticParams, t_grid) -> np.ndarray:
    """Rows ``(t, pi_1(t), ..., pi_K(t))`` over ``t_grid``."""
    t_grid = np.asarray(t_grid, dtype=float)
    return np.column_stack([t_grid, logistic_probabilities(t_grid, params)])


def write_curves_csv(params: LogisticParams, t_grid, out=None) -> str:
    """Write the proportion curves as CSV (header ``t,pi_1,...,pi_K``)."""
    rows = logistic_curves(params, t_grid)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t"] + [f"pi_{k + 1}" for k in range(params.K)])
    for r in rows:
        w.writerow(["%.17g" % v for v in r])
    text = buf.getvalue()
    if out is not None:
        with open(out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    return text


def weighted_entropy_bound(weights) -> float:
    """Supremum of :func:`q1_objective` over all proportions, ``sum w log w``."""
    W = np.asarray(weights, dtype=float)
    return float(np.sum(xlogy(W, W)))
