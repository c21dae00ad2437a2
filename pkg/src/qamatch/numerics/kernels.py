"""Hot inner loops: LSTM gate pointwise math and the skip-gram SGD sweep.

Each kernel has a numba ``@njit`` implementation and a pure-numpy fallback
with identical semantics. The numba path is used when numba imports and the
environment variable ``QAMATCH_NO_NUMBA`` is unset (or ``0``), except for
the LSTM forward gates, which always dispatch to numpy. Both paths stay
importable as ``*_numpy`` / ``*_numba`` so they can be compared directly.
"""

from __future__ import annotations

import os

import numpy as np

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and os.environ.get("QAMATCH_NO_NUMBA", "0") in ("", "0")


def _jit(fn):
    if not HAVE_NUMBA:
        return fn
    return numba.njit(cache=True)(fn)


# --------------------------------------------------------------------------
# LSTM gates. Preactivation layout along the last axis: [input, forget, output, cell].
# --------------------------------------------------------------------------


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def lstm_gates_forward_numpy(z, c_prev):
    """Return ``(h, c, acts, tanh_c)`` for preactivations ``z`` of shape (B, 4H)."""
    H = c_prev.shape[1]
    acts = np.empty_like(z)
    acts[:, : 3 * H] = _sigmoid(z[:, : 3 * H])
    acts[:, 3 * H :] = np.tanh(z[:, 3 * H :])
    i, f, o, g = acts[:, :H], acts[:, H : 2 * H], acts[:, 2 * H : 3 * H], acts[:, 3 * H :]
    c = f * c_prev + i * g
    tc = np.tanh(c)
    return o * tc, c, acts, tc


def lstm_gates_backward_numpy(dh, dc, acts, tc, c_prev):
    """Return ``(dz, dc_prev)`` given upstream grads of ``h`` and ``c``."""
    H = c_prev.shape[1]
    i, f, o, g = acts[:, :H], acts[:, H : 2 * H], acts[:, 2 * H : 3 * H], acts[:, 3 * H :]
    dct = dc + dh * o * (1.0 - tc * tc)
    dz = np.empty_like(acts)
    dz[:, :H] = dct * g * i * (1.0 - i)
    dz[:, H : 2 * H] = dct * c_prev * f * (1.0 - f)
    dz[:, 2 * H : 3 * H] = dh * tc * o * (1.0 - o)
    dz[:, 3 * H :] = dct * i * (1.0 - g * g)
    return dz, dct * f


def _lstm_gates_forward_loop(z, c_prev):
    B, H = c_prev.shape
    acts = np.empty_like(z)
    c = np.empty_like(c_prev)
    tc = np.empty_like(c_prev)
    h = np.empty_like(c_prev)
    for b in range(B):
        for k in range(H):
            i = 0.5 * (1.0 + np.tanh(0.5 * z[b, k]))
            f = 0.5 * (1.0 + np.tanh(0.5 * z[b, H + k]))
            o = 0.5 * (1.0 + np.tanh(0.5 * z[b, 2 * H + k]))
            g = np.tanh(z[b, 3 * H + k])
            acts[b, k] = i
            acts[b, H + k] = f
            acts[b, 2 * H + k] = o
            acts[b, 3 * H + k] = g
            cc = f * c_prev[b, k] + i * g
            t = np.tanh(cc)
            c[b, k] = cc
            tc[b, k] = t
            h[b, k] = o * t
    return h, c, acts, tc


def _lstm_gates_backward_loop(dh, dc, acts, tc, c_prev):
    B, H = c_prev.shape
    dz = np.empty_like(acts)
    dc_prev = np.empty_like(c_prev)
    for b in range(B):
        for k in range(H):
            i = acts[b, k]
            f = acts[b, H + k]
            o = acts[b, 2 * H + k]
            g = acts[b, 3 * H + k]
            t = tc[b, k]
            dct = dc[b, k] + dh[b, k] * o * (1.0 - t * t)
            dz[b, k] = dct * g * i * (1.0 - i)
            dz[b, H + k] = dct * c_prev[b, k] * f * (1.0 - f)
            dz[b, 2 * H + k] = dh[b, k] * t * o * (1.0 - o)
            dz[b, 3 * H + k] = dct * i * (1.0 - g * g)
            dc_prev[b, k] = dct * f
    return dz, dc_prev


# --------------------------------------------------------------------------
# Skip-gram with negative sampling: one sequential SGD sweep.
# --------------------------------------------------------------------------


def _log_sigmoid(x):
    # log(sigmoid(x)) without overflow
    if x >= 0:
        return -np.log1p(np.exp(-x))
    return x - np.log1p(np.exp(x))


def sgns_sweep_numpy(w_in, w_out, centers, contexts, negatives, alphas):
    """In-place SGD over (center, context) pairs; returns mean pair loss.

    ``negatives`` has shape (n_pairs, k); a negative equal to the true context
    is skipped, as in the reference word2vec trainer.
    """
    n = centers.shape[0]
    total = 0.0
    for p in range(n):
        ci = centers[p]
        ctx = contexts[p]
        alpha = alphas[p]
        v = w_in[ci].copy()
        grad_v = np.zeros_like(v)
        u = w_out[ctx]
        s = float(v @ u)
        g = (1.0 - _sigmoid(s)) * alpha
        total -= _log_sigmoid(s)
        grad_v += g * u
        w_out[ctx] = u + g * v
        for k in range(negatives.shape[1]):
            t = negatives[p, k]
            if t == ctx:
                continue
            u = w_out[t]
            s = float(v @ u)
            g = -_sigmoid(s) * alpha
            total -= _log_sigmoid(-s)
            grad_v += g * u
            w_out[t] = u + g * v
        w_in[ci] = v + grad_v
    return total / max(n, 1)


def _sgns_sweep_loop(w_in, w_out, centers, contexts, negatives, alphas):
    n = centers.shape[0]
    dim = w_in.shape[1]
    total = 0.0
    v = np.empty(dim)
    grad_v = np.empty(dim)
    for p in range(n):
        ci = centers[p]
        ctx = contexts[p]
        alpha = alphas[p]
        for d in range(dim):
            v[d] = w_in[ci, d]
            grad_v[d] = 0.0
        for k in range(-1, negatives.shape[1]):
            if k < 0:
                t = ctx
                label = 1.0
            else:
                t = negatives[p, k]
                if t == ctx:
                    continue
                label = 0.0
            s = 0.0
            for d in range(dim):
                s += v[d] * w_out[t, d]
            sig = 0.5 * (1.0 + np.tanh(0.5 * s))
            g = (label - sig) * alpha
            x = s if label > 0.5 else -s
            if x >= 0:
                total += np.log1p(np.exp(-x))
            else:
                total += -x + np.log1p(np.exp(x))
            for d in range(dim):
                grad_v[d] += g * w_out[t, d]
                w_out[t, d] += g * v[d]
        for d in range(dim):
            w_in[ci, d] = v[d] + grad_v[d]
    return total / max(n, 1)


if HAVE_NUMBA:
    lstm_gates_forward_numba = _jit(_lstm_gates_forward_loop)
    lstm_gates_backward_numba = _jit(_lstm_gates_backward_loop)
    sgns_sweep_numba = _jit(_sgns_sweep_loop)
else:  # pragma: no cover
    lstm_gates_forward_numba = lstm_gates_forward_numpy
    lstm_gates_backward_numba = lstm_gates_backward_numpy
    sgns_sweep_numba = sgns_sweep_numpy

# The forward gates stay on numpy under both backends: they are five
# transcendentals per element, and numpy's vectorized tanh beats numba's
# scalar libm calls by ~5x (see benchmarks/bench_kernels.py).
lstm_gates_forward = lstm_gates_forward_numpy
if USE_NUMBA:
    lstm_gates_backward = lstm_gates_backward_numba
    sgns_sweep = sgns_sweep_numba
else:
    lstm_gates_backward = lstm_gates_backward_numpy
    sgns_sweep = sgns_sweep_numpy


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"
