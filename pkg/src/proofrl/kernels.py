"""Hot numeric kernels with a numba lane and a pure-numpy fallback lane.

The numba lane is the default. Set ``PROOFRL_PURE_NUMPY=1`` to force the
numpy lane (also used automatically when numba is not importable). Both
lanes compute the same functions; ``benchmarks/bench_kernels.py`` compares
their throughput and the test suite pins their numerical agreement.
"""

from __future__ import annotations

import math
import os

import numpy as np

_FORCE_NUMPY = os.environ.get("PROOFRL_PURE_NUMPY", "0") not in ("", "0")

if not _FORCE_NUMPY:
    try:
        from numba import njit

        BACKEND = "numba"
    except ImportError:  # pragma: no cover - mirror-less environments
        njit = None
        BACKEND = "numpy"
else:
    njit = None
    BACKEND = "numpy"


# ---------------------------------------------------------------------------
# numpy lane


def _softmax_np(x):
    z = np.exp(x - np.max(x))
    return z / np.sum(z)


def _log_softmax_np(x):
    m = np.max(x)
    return x - m - np.log(np.sum(np.exp(x - m)))


def _softmax_rows_np(x):
    z = np.exp(x - np.max(x, axis=1, keepdims=True))
    return z / np.sum(z, axis=1, keepdims=True)


def _sinusoid_table_np(n_pos, d):
    out = np.zeros((n_pos, d))
    pos = np.arange(n_pos, dtype=np.float64)[:, None]
    idx = np.arange(0, d, 2, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, idx / d)
    out[:, 0::2] = np.sin(angle)
    out[:, 1::2] = np.cos(angle[:, : out[:, 1::2].shape[1]])
    return out


def _segment_mean_np(x, starts, ends):
    n_seg = starts.shape[0]
    out = np.zeros((n_seg, x.shape[1]))
    for i in range(n_seg):
        out[i] = np.mean(x[starts[i] : ends[i]], axis=0)
    return out


def _segment_mean_backward_np(d_out, starts, ends, n_tokens):
    dx = np.zeros((n_tokens, d_out.shape[1]))
    for i in range(starts.shape[0]):
        dx[starts[i] : ends[i]] += d_out[i] / (ends[i] - starts[i])
    return dx


def _layer_norm_forward_np(x, gain, bias, eps):
    mu = np.mean(x, axis=1)
    var = np.mean((x - mu[:, None]) ** 2, axis=1)
    rstd = 1.0 / np.sqrt(var + eps)
    y = (x - mu[:, None]) * rstd[:, None] * gain[None, :] + bias[None, :]
    return y, mu, rstd


def _layer_norm_backward_np(dy, x, gain, mu, rstd):
    xhat = (x - mu[:, None]) * rstd[:, None]
    dxhat = dy * gain[None, :]
    n = x.shape[1]
    s1 = np.sum(dxhat, axis=1, keepdims=True)
    s2 = np.sum(dxhat * xhat, axis=1, keepdims=True)
    dx = (rstd[:, None] / n) * (n * dxhat - s1 - xhat * s2)
    dgain = np.sum(dy * xhat, axis=0)
    dbias = np.sum(dy, axis=0)
    return dx, dgain, dbias


def _adam_step_np(param, grad, m, v, lr, b1, b2, eps, b1t, b2t):
    m *= b1
    m += (1.0 - b1) * grad
    v *= b2
    v += (1.0 - b2) * grad * grad
    mhat = m / (1.0 - b1t)
    vhat = v / (1.0 - b2t)
    param -= lr * mhat / (np.sqrt(vhat) + eps)


def _sumsq_np(x):
    return float(np.dot(x, x))


def _value_term_np(values, gamma, exp_clamp):
    e = np.clip(-1.0 - values, -exp_clamp, exp_clamp)
    return np.power(gamma, e)


def _coeff_np(visit_total, ns, c_base, c_init):
    return (math.log((visit_total + c_base + 1.0) / c_base) + c_init) * (
        math.sqrt(visit_total) / (ns + 1.0)
    )


def _puct_or_scores_np(
    child_values, ns, priors, excluded, parent_value, visit_total,
    c_base, c_init, delta, gamma, exp_clamp,
):
    vals = np.where(ns > 0, child_values, parent_value - delta)
    scores = _value_term_np(vals, gamma, exp_clamp)
    scores += _coeff_np(visit_total, ns.astype(np.float64), c_base, c_init) * priors
    return np.where(excluded, -np.inf, scores)


def _puct_and_scores_np(
    child_values, ns, ineligible, visit_total,
    c_base, c_init, c_and, gamma, exp_clamp,
):
    arity = child_values.shape[0]
    vals = np.where(ns > 0, child_values, 1.0)
    scores = _value_term_np(vals, gamma, exp_clamp)
    coeff = _coeff_np(visit_total, ns.astype(np.float64), c_base, c_init)
    scores += c_and * coeff / arity
    return np.where(ineligible, -np.inf, scores)


def _classic_puct_scores_np(value_sums, ns, priors, excluded, visit_total, c):
    exploit = value_sums / np.maximum(ns, 1)
    explore = c * math.sqrt(visit_total) / (1.0 + ns) * priors
    return np.where(excluded, -np.inf, exploit + explore)


# ---------------------------------------------------------------------------
# numba lane (loop bodies compiled with nopython)


def _softmax_loop(x):
    n = x.shape[0]
    m = x[0]
    for i in range(1, n):
        if x[i] > m:
            m = x[i]
    out = np.empty(n)
    s = 0.0
    for i in range(n):
        out[i] = math.exp(x[i] - m)
        s += out[i]
    for i in range(n):
        out[i] /= s
    return out


def _log_softmax_loop(x):
    n = x.shape[0]
    m = x[0]
    for i in range(1, n):
        if x[i] > m:
            m = x[i]
    s = 0.0
    for i in range(n):
        s += math.exp(x[i] - m)
    lse = m + math.log(s)
    out = np.empty(n)
    for i in range(n):
        out[i] = x[i] - lse
    return out


def _softmax_rows_loop(x):
    r, c = x.shape
    out = np.empty((r, c))
    for i in range(r):
        m = x[i, 0]
        for j in range(1, c):
            if x[i, j] > m:
                m = x[i, j]
        s = 0.0
        for j in range(c):
            out[i, j] = math.exp(x[i, j] - m)
            s += out[i, j]
        for j in range(c):
            out[i, j] /= s
    return out


def _sinusoid_table_loop(n_pos, d):
    out = np.zeros((n_pos, d))
    for p in range(n_pos):
        for i in range(0, d, 2):
            angle = p / 10000.0 ** (i / d)
            out[p, i] = math.sin(angle)
            if i + 1 < d:
                out[p, i + 1] = math.cos(angle)
    return out


def _segment_mean_loop(x, starts, ends):
    n_seg = starts.shape[0]
    d = x.shape[1]
    out = np.zeros((n_seg, d))
    for i in range(n_seg):
        w = 1.0 / (ends[i] - starts[i])
        for t in range(starts[i], ends[i]):
            for j in range(d):
                out[i, j] += x[t, j] * w
    return out


def _segment_mean_backward_loop(d_out, starts, ends, n_tokens):
    d = d_out.shape[1]
    dx = np.zeros((n_tokens, d))
    for i in range(starts.shape[0]):
        w = 1.0 / (ends[i] - starts[i])
        for t in range(starts[i], ends[i]):
            for j in range(d):
                dx[t, j] += d_out[i, j] * w
    return dx


def _layer_norm_forward_loop(x, gain, bias, eps):
    r, c = x.shape
    y = np.empty((r, c))
    mu = np.empty(r)
    rstd = np.empty(r)
    for i in range(r):
        s = 0.0
        for j in range(c):
            s += x[i, j]
        mu[i] = s / c
        v = 0.0
        for j in range(c):
            dlt = x[i, j] - mu[i]
            v += dlt * dlt
        rstd[i] = 1.0 / math.sqrt(v / c + eps)
        for j in range(c):
            y[i, j] = (x[i, j] - mu[i]) * rstd[i] * gain[j] + bias[j]
    return y, mu, rstd


def _layer_norm_backward_loop(dy, x, gain, mu, rstd):
    r, c = x.shape
    dx = np.empty((r, c))
    dgain = np.zeros(c)
    dbias = np.zeros(c)
    for i in range(r):
        s1 = 0.0
        s2 = 0.0
        for j in range(c):
            xhat = (x[i, j] - mu[i]) * rstd[i]
            dxh = dy[i, j] * gain[j]
            s1 += dxh
            s2 += dxh * xhat
            dgain[j] += dy[i, j] * xhat
            dbias[j] += dy[i, j]
        for j in range(c):
            xhat = (x[i, j] - mu[i]) * rstd[i]
            dxh = dy[i, j] * gain[j]
            dx[i, j] = (rstd[i] / c) * (c * dxh - s1 - xhat * s2)
    return dx, dgain, dbias


def _adam_step_loop(param, grad, m, v, lr, b1, b2, eps, b1t, b2t):
    n = param.shape[0]
    for i in range(n):
        m[i] = b1 * m[i] + (1.0 - b1) * grad[i]
        v[i] = b2 * v[i] + (1.0 - b2) * grad[i] * grad[i]
        mhat = m[i] / (1.0 - b1t)
        vhat = v[i] / (1.0 - b2t)
        param[i] -= lr * mhat / (math.sqrt(vhat) + eps)


def _sumsq_loop(x):
    s = 0.0
    for i in range(x.shape[0]):
        s += x[i] * x[i]
    return s


def _puct_or_scores_loop(
    child_values, ns, priors, excluded, parent_value, visit_total,
    c_base, c_init, delta, gamma, exp_clamp,
):
    n = child_values.shape[0]
    scores = np.empty(n)
    log_term = math.log((visit_total + c_base + 1.0) / c_base) + c_init
    sqrt_total = math.sqrt(visit_total)
    for i in range(n):
        if excluded[i]:
            scores[i] = -np.inf
            continue
        v = child_values[i] if ns[i] > 0 else parent_value - delta
        e = -1.0 - v
        if e > exp_clamp:
            e = exp_clamp
        elif e < -exp_clamp:
            e = -exp_clamp
        coeff = log_term * sqrt_total / (ns[i] + 1.0)
        scores[i] = gamma ** e + coeff * priors[i]
    return scores


def _puct_and_scores_loop(
    child_values, ns, ineligible, visit_total,
    c_base, c_init, c_and, gamma, exp_clamp,
):
    n = child_values.shape[0]
    scores = np.empty(n)
    log_term = math.log((visit_total + c_base + 1.0) / c_base) + c_init
    sqrt_total = math.sqrt(visit_total)
    uniform = 1.0 / n
    for i in range(n):
        if ineligible[i]:
            scores[i] = -np.inf
            continue
        v = child_values[i] if ns[i] > 0 else 1.0
        e = -1.0 - v
        if e > exp_clamp:
            e = exp_clamp
        elif e < -exp_clamp:
            e = -exp_clamp
        coeff = log_term * sqrt_total / (ns[i] + 1.0)
        scores[i] = gamma ** e + c_and * coeff * uniform
    return scores


def _classic_puct_scores_loop(value_sums, ns, priors, excluded, visit_total, c):
    n = value_sums.shape[0]
    scores = np.empty(n)
    sqrt_total = math.sqrt(visit_total)
    for i in range(n):
        if excluded[i]:
            scores[i] = -np.inf
            continue
        denom = ns[i] if ns[i] > 0 else 1
        scores[i] = value_sums[i] / denom + c * sqrt_total / (1.0 + ns[i]) * priors[i]
    return scores


_NUMPY_LANE = {
    "softmax": _softmax_np,
    "log_softmax": _log_softmax_np,
    "softmax_rows": _softmax_rows_np,
    "sinusoid_table": _sinusoid_table_np,
    "segment_mean": _segment_mean_np,
    "segment_mean_backward": _segment_mean_backward_np,
    "layer_norm_forward": _layer_norm_forward_np,
    "layer_norm_backward": _layer_norm_backward_np,
    "adam_step": _adam_step_np,
    "sumsq": _sumsq_np,
    "puct_or_scores": _puct_or_scores_np,
    "puct_and_scores": _puct_and_scores_np,
    "classic_puct_scores": _classic_puct_scores_np,
}

_LOOP_LANE = {
    "softmax": _softmax_loop,
    "log_softmax": _log_softmax_loop,
    "softmax_rows": _softmax_rows_loop,
    "sinusoid_table": _sinusoid_table_loop,
    "segment_mean": _segment_mean_loop,
    "segment_mean_backward": _segment_mean_backward_loop,
    "layer_norm_forward": _layer_norm_forward_loop,
    "layer_norm_backward": _layer_norm_backward_loop,
    "adam_step": _adam_step_loop,
    "sumsq": _sumsq_loop,
    "puct_or_scores": _puct_or_scores_loop,
    "puct_and_scores": _puct_and_scores_loop,
    "classic_puct_scores": _classic_puct_scores_loop,
}

if BACKEND == "numba":
    _NUMBA_LANE = {name: njit(cache=True)(fn) for name, fn in _LOOP_LANE.items()}
    _ACTIVE = _NUMBA_LANE
else:
    _NUMBA_LANE = None
    _ACTIVE = _NUMPY_LANE

softmax = _ACTIVE["softmax"]
log_softmax = _ACTIVE["log_softmax"]
softmax_rows = _ACTIVE["softmax_rows"]
sinusoid_table = _ACTIVE["sinusoid_table"]
segment_mean = _ACTIVE["segment_mean"]
segment_mean_backward = _ACTIVE["segment_mean_backward"]
layer_norm_forward = _ACTIVE["layer_norm_forward"]
layer_norm_backward = _ACTIVE["layer_norm_backward"]
adam_step = _ACTIVE["adam_step"]
sumsq = _ACTIVE["sumsq"]
puct_or_scores = _ACTIVE["puct_or_scores"]
puct_and_scores = _ACTIVE["puct_and_scores"]
classic_puct_scores = _ACTIVE["classic_puct_scores"]


def lanes() -> dict[str, dict]:
    """All available lanes keyed by backend name, for tests and benchmarks."""
    out = {"numpy": _NUMPY_LANE}
    if _NUMBA_LANE is not None:
        out["numba"] = _NUMBA_LANE
    return out
