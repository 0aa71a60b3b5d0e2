"""Numeric hot-path kernels with a numba backend and a pure-numpy fallback.

The TD step runs once per system turn during self-play (hundreds of
thousands of calls) and retrieval scoring once per user query, so both get
@njit kernels. Set DASYNTH_BACKEND=numpy to force the fallback path, or
DASYNTH_BACKEND=numba to require the compiled one; unset, numba is used
when importable. benchmarks/bench_backends.py compares the two.
"""

from __future__ import annotations

import os

import numpy as np

from .errors import DasynthError

_ENV_VAR = "DASYNTH_BACKEND"

try:
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only on numba-less installs
    _HAVE_NUMBA = False


def _select_backend() -> str:
    choice = os.environ.get(_ENV_VAR, "").strip().lower()
    if choice == "numpy":
        return "numpy"
    if choice == "numba":
        if not _HAVE_NUMBA:
            raise DasynthError(f"{_ENV_VAR}=numba but numba is not importable")
        return "numba"
    if choice:
        raise DasynthError(f"{_ENV_VAR} must be 'numba' or 'numpy', got {choice!r}")
    return "numba" if _HAVE_NUMBA else "numpy"


BACKEND = _select_backend()


# ---------------------------------------------------------------------------
# Q-function kernels. Parameters: w1 (H, D), b1 (H,), w2 (A, H or A, D when
# H == 0), b2 (A,). Hidden activation is tanh; H == 0 means linear Q = w2.x+b2.
# ---------------------------------------------------------------------------


def _q_forward_np(w1, b1, w2, b2, x):
    if w1.shape[0] == 0:
        return w2 @ x + b2
    h = np.tanh(w1 @ x + b1)
    return w2 @ h + b2


def _td_step_np(w1, b1, w2, b2, x, a, r, x_next, done, gamma, alpha):
    """One semi-gradient TD(0) step on L = 0.5*(target - Q(s,a))^2, in place.

    Returns the TD error delta = target - Q(s,a). Only output row `a`
    carries a direct gradient; hidden weights receive it through w2[a].
    """
    target = r
    if not done:
        target += gamma * float(np.max(_q_forward_np(w1, b1, w2, b2, x_next)))
    if w1.shape[0] == 0:
        q_a = float(w2[a] @ x + b2[a])
        delta = target - q_a
        w2[a] += alpha * delta * x
        b2[a] += alpha * delta
        return delta
    z = w1 @ x + b1
    h = np.tanh(z)
    q_a = float(w2[a] @ h + b2[a])
    delta = target - q_a
    grad_h = delta * w2[a]
    w2[a] += alpha * delta * h
    b2[a] += alpha * delta
    grad_z = grad_h * (1.0 - h * h)
    w1 += alpha * np.outer(grad_z, x)
    b1 += alpha * grad_z
    return delta


def _score_docs_np(post_indptr, post_doc_ids, post_weights, q_tids, q_weights, n_docs):
    """Accumulate cosine scores over term-major postings for a unit query."""
    scores = np.zeros(n_docs, dtype=np.float64)
    for i in range(q_tids.shape[0]):
        t = q_tids[i]
        lo, hi = post_indptr[t], post_indptr[t + 1]
        scores[post_doc_ids[lo:hi]] += q_weights[i] * post_weights[lo:hi]
    return scores


if _HAVE_NUMBA:

    @njit(cache=True)
    def _q_forward_nb(w1, b1, w2, b2, x):  # pragma: no cover - compiled
        n_act = w2.shape[0]
        q = np.empty(n_act, dtype=np.float64)
        hidden = w1.shape[0]
        if hidden == 0:
            for a in range(n_act):
                s = b2[a]
                for j in range(x.shape[0]):
                    s += w2[a, j] * x[j]
                q[a] = s
            return q
        h = np.empty(hidden, dtype=np.float64)
        for i in range(hidden):
            s = b1[i]
            for j in range(x.shape[0]):
                s += w1[i, j] * x[j]
            h[i] = np.tanh(s)
        for a in range(n_act):
            s = b2[a]
            for i in range(hidden):
                s += w2[a, i] * h[i]
            q[a] = s
        return q

    @njit(cache=True)
    def _td_step_nb(w1, b1, w2, b2, x, a, r, x_next, done, gamma, alpha):  # pragma: no cover
        target = r
        if not done:
            q_next = _q_forward_nb(w1, b1, w2, b2, x_next)
            best = q_next[0]
            for k in range(1, q_next.shape[0]):
                if q_next[k] > best:
                    best = q_next[k]
            target += gamma * best
        hidden = w1.shape[0]
        if hidden == 0:
            q_a = b2[a]
            for j in range(x.shape[0]):
                q_a += w2[a, j] * x[j]
            delta = target - q_a
            for j in range(x.shape[0]):
                w2[a, j] += alpha * delta * x[j]
            b2[a] += alpha * delta
            return delta
        h = np.empty(hidden, dtype=np.float64)
        for i in range(hidden):
            s = b1[i]
            for j in range(x.shape[0]):
                s += w1[i, j] * x[j]
            h[i] = np.tanh(s)
        q_a = b2[a]
        for i in range(hidden):
            q_a += w2[a, i] * h[i]
        delta = target - q_a
        for i in range(hidden):
            grad_z = delta * w2[a, i] * (1.0 - h[i] * h[i])
            w2[a, i] += alpha * delta * h[i]
            for j in range(x.shape[0]):
                w1[i, j] += alpha * grad_z * x[j]
            b1[i] += alpha * grad_z
        b2[a] += alpha * delta
        return delta

    @njit(cache=True)
    def _score_docs_nb(post_indptr, post_doc_ids, post_weights, q_tids, q_weights, n_docs):  # pragma: no cover
        scores = np.zeros(n_docs, dtype=np.float64)
        for i in range(q_tids.shape[0]):
            t = q_tids[i]
            qw = q_weights[i]
            for p in range(post_indptr[t], post_indptr[t + 1]):
                scores[post_doc_ids[p]] += qw * post_weights[p]
        return scores


if BACKEND == "numba":
    q_forward = _q_forward_nb
    td_step = _td_step_nb
    score_docs = _score_docs_nb
else:
    q_forward = _q_forward_np
    td_step = _td_step_np
    score_docs = _score_docs_np
