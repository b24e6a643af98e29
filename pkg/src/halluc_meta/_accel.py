"""Hot inner-loop kernels with a numba path and a pure-numpy fallback.

The numba path is used when numba imports and ``HALLUC_META_NUMBA`` is not
set to ``0``. Both paths are always importable as ``<name>_numpy`` and
``<name>_numba`` (the latter only when numba is present) so tests and the
benchmark can compare them directly.
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

USE_NUMBA = HAVE_NUMBA and os.environ.get("HALLUC_META_NUMBA", "1") != "0"


# ---------------------------------------------------------------------------
# LSTM gate nonlinearities and state update.
# Gate layout along the last axis of ``pre``: input, forget, output, candidate.
# ---------------------------------------------------------------------------


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def lstm_forward_numpy(pre, c_prev):
    hd = c_prev.shape[1]
    i = _sigmoid(pre[:, :hd])
    f = _sigmoid(pre[:, hd : 2 * hd])
    o = _sigmoid(pre[:, 2 * hd : 3 * hd])
    g = np.tanh(pre[:, 3 * hd :])
    c = f * c_prev + i * g
    tc = np.tanh(c)
    h = o * tc
    gates = np.concatenate([i, f, o, g], axis=1)
    return h, c, gates, tc


def lstm_backward_numpy(dh, dc_out, gates, tc, c_prev):
    hd = c_prev.shape[1]
    i = gates[:, :hd]
    f = gates[:, hd : 2 * hd]
    o = gates[:, 2 * hd : 3 * hd]
    g = gates[:, 3 * hd :]
    dc = dc_out + dh * o * (1.0 - tc * tc)
    dpre = np.concatenate(
        [
            dc * g * i * (1.0 - i),
            dc * c_prev * f * (1.0 - f),
            dh * tc * o * (1.0 - o),
            dc * i * (1.0 - g * g),
        ],
        axis=1,
    )
    return dpre, dc * f


def pairwise_sqdist_numpy(a, b):
    diff = a[:, None, :] - b[None, :, :]
    return np.einsum("qkd,qkd->qk", diff, diff)


def topk_hits_numpy(probs, truth_col, class_ids, k):
    """Count rows whose true column ranks in the top k; ties go to the lower id."""
    p_true = probs[np.arange(probs.shape[0]), truth_col][:, None]
    id_true = class_ids[truth_col][:, None]
    above = (probs > p_true) | ((probs == p_true) & (class_ids[None, :] < id_true))
    rank = above.sum(axis=1)
    return int(np.count_nonzero(rank < k))


if HAVE_NUMBA:

    @numba.njit(cache=True)
    def _sig(x):
        if x >= 0.0:
            return 1.0 / (1.0 + np.exp(-x))
        ex = np.exp(x)
        return ex / (1.0 + ex)

    @numba.njit(cache=True)
    def lstm_forward_numba(pre, c_prev):
        b, hd = c_prev.shape
        h = np.empty((b, hd))
        c = np.empty((b, hd))
        tc = np.empty((b, hd))
        gates = np.empty((b, 4 * hd))
        for r in range(b):
            for j in range(hd):
                i = _sig(pre[r, j])
                f = _sig(pre[r, hd + j])
                o = _sig(pre[r, 2 * hd + j])
                g = np.tanh(pre[r, 3 * hd + j])
                cc = f * c_prev[r, j] + i * g
                t = np.tanh(cc)
                c[r, j] = cc
                tc[r, j] = t
                h[r, j] = o * t
                gates[r, j] = i
                gates[r, hd + j] = f
                gates[r, 2 * hd + j] = o
                gates[r, 3 * hd + j] = g
        return h, c, gates, tc

    @numba.njit(cache=True)
    def lstm_backward_numba(dh, dc_out, gates, tc, c_prev):
        b, hd = c_prev.shape
        dpre = np.empty((b, 4 * hd))
        dc_prev = np.empty((b, hd))
        for r in range(b):
            for j in range(hd):
                i = gates[r, j]
                f = gates[r, hd + j]
                o = gates[r, 2 * hd + j]
                g = gates[r, 3 * hd + j]
                t = tc[r, j]
                dc = dc_out[r, j] + dh[r, j] * o * (1.0 - t * t)
                dpre[r, j] = dc * g * i * (1.0 - i)
                dpre[r, hd + j] = dc * c_prev[r, j] * f * (1.0 - f)
                dpre[r, 2 * hd + j] = dh[r, j] * t * o * (1.0 - o)
                dpre[r, 3 * hd + j] = dc * i * (1.0 - g * g)
                dc_prev[r, j] = dc * f
        return dpre, dc_prev

    @numba.njit(cache=True)
    def pairwise_sqdist_numba(a, b):
        q, d = a.shape
        k = b.shape[0]
        out = np.empty((q, k))
        for r in range(q):
            for s in range(k):
                acc = 0.0
                for j in range(d):
                    t = a[r, j] - b[s, j]
                    acc += t * t
                out[r, s] = acc
        return out

    @numba.njit(cache=True)
    def _topk_hits_nb(probs, truth_col, class_ids, k):
        hits = 0
        n, m = probs.shape
        for r in range(n):
            t = truth_col[r]
            pt = probs[r, t]
            it = class_ids[t]
            rank = 0
            for s in range(m):
                p = probs[r, s]
                if p > pt or (p == pt and class_ids[s] < it):
                    rank += 1
            if rank < k:
                hits += 1
        return hits

    def topk_hits_numba(probs, truth_col, class_ids, k):
        return int(_topk_hits_nb(probs, truth_col, class_ids, k))


def _pick(name):
    if USE_NUMBA:
        return globals()[name + "_numba"]
    return globals()[name + "_numpy"]


lstm_forward = _pick("lstm_forward")
lstm_backward = _pick("lstm_backward")
pairwise_sqdist = _pick("pairwise_sqdist")
topk_hits = _pick("topk_hits")

BACKEND = "numba" if USE_NUMBA else "numpy"
