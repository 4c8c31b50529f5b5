"""Hot numeric kernels, each with a numba and a pure-numpy implementation.

The public names at the bottom of the module are bound to one of the two
implementations according to :data:`slidbench._accel.USE_NUMBA`. Both
implementations stay importable (``*_numba`` / ``*_numpy``) so tests can
check them against each other and the benchmark can time them.
"""

import numpy as np

from ._accel import HAVE_NUMBA, USE_NUMBA, njit


def bit_reverse_indices(n):
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


def twiddles(n):
    return np.exp(-2j * np.pi * np.arange(n // 2) / n)


# ---------------------------------------------------------------------------
# radix-2 FFT over the rows of a 2-D complex array
# ---------------------------------------------------------------------------


def _fft_rows_numpy(x, rev, tw):
    n_rows, n = x.shape
    out = x[:, rev]
    size = 2
    while size <= n:
        half = size // 2
        w = tw[:: n // size][:half]
        v = out.reshape(n_rows, n // size, size)
        a = v[:, :, :half].copy()
        b = v[:, :, half:] * w
        v[:, :, :half] = a + b
        v[:, :, half:] = a - b
        size *= 2
    return out


@njit
def _fft_rows_numba(x, rev, tw):
    n_rows, n = x.shape
    out = np.empty_like(x)
    for r in range(n_rows):
        for i in range(n):
            out[r, i] = x[r, rev[i]]
        size = 2
        while size <= n:
            half = size // 2
            step = n // size
            for start in range(0, n, size):
                for k in range(half):
                    w = tw[k * step]
                    a = out[r, start + k]
                    b = out[r, start + k + half] * w
                    out[r, start + k] = a + b
                    out[r, start + k + half] = a - b
            size *= 2
    return out


# ---------------------------------------------------------------------------
# same-length 1-D convolution, channel-major layout
#
# xt:  (C, B, T + W - 1) zero-padded input
# wt:  (W, O, C) taps, contiguous per tap
# wtT: (W, C, O)
# g:   (O, B * T) upstream gradient
# ---------------------------------------------------------------------------


def _conv_fwd_numpy(xt, wt):
    C, B, Tp = xt.shape
    W, O, _ = wt.shape
    T = Tp - W + 1
    y = np.zeros((O, B * T), dtype=xt.dtype)
    for j in range(W):
        y += wt[j] @ xt[:, :, j : j + T].reshape(C, B * T)
    return y


def _conv_bwd_numpy(xt, wtT, g, need_gx):
    C, B, Tp = xt.shape
    W, _, O = wtT.shape
    T = Tp - W + 1
    gw = np.empty((W, O, C), dtype=xt.dtype)
    gxt = np.zeros((C, B, Tp), dtype=xt.dtype)
    for j in range(W):
        gw[j] = g @ xt[:, :, j : j + T].reshape(C, B * T).T
        if need_gx:
            gxt[:, :, j : j + T] += (wtT[j] @ g).reshape(C, B, T)
    return gw, gxt


@njit
def _conv_fwd_numba(xt, wt):
    C, B, Tp = xt.shape
    W, O, _ = wt.shape
    T = Tp - W + 1
    col = np.empty((C, B * T), dtype=xt.dtype)
    y = np.zeros((O, B * T), dtype=xt.dtype)
    for j in range(W):
        for c in range(C):
            for b in range(B):
                base = b * T
                for t in range(T):
                    col[c, base + t] = xt[c, b, t + j]
        y += np.dot(wt[j], col)
    return y


@njit
def _conv_bwd_numba(xt, wtT, g, need_gx):
    C, B, Tp = xt.shape
    W, _, O = wtT.shape
    T = Tp - W + 1
    gw = np.empty((W, O, C), dtype=xt.dtype)
    gxt = np.zeros((C, B, Tp), dtype=xt.dtype)
    colT = np.empty((B * T, C), dtype=xt.dtype)
    for j in range(W):
        for b in range(B):
            base = b * T
            for t in range(T):
                for c in range(C):
                    colT[base + t, c] = xt[c, b, t + j]
        gw[j] = np.dot(g, colT)
        if need_gx:
            tmp = np.dot(wtT[j], g)
            for c in range(C):
                for b in range(B):
                    base = b * T
                    for t in range(T):
                        gxt[c, b, t + j] += tmp[c, base + t]
    return gw, gxt


# ---------------------------------------------------------------------------
# paired permutation: count resamples whose statistic reaches the observed one
#
# swaps: (R, d) uint8, 1 = exchange A/B predictions on differing sample i
# d_tp, d_pc: per differing sample, (B contribution - A contribution) to the
#   true-positive count and the predicted count of the tested label
# mode 0: |acc(A') - acc(B')|, counts are correct-prediction counts
# mode 1: |F1(A') - F1(B')| for one label
# ---------------------------------------------------------------------------

_TIE_TOL = 1e-12


def _f1_from_counts(tp, pc, gold_n):
    denom = gold_n + pc
    with np.errstate(invalid="ignore", divide="ignore"):
        f1 = np.where(denom > 0, 2.0 * tp / np.where(denom > 0, denom, 1.0), 0.0)
    return f1


def _perm_count_numpy(swaps, d_tp, d_pc, tp_a, pc_a, tp_b, pc_b, gold_n, n, mode, observed):
    s = swaps.astype(np.float64)
    shift_tp = s @ d_tp
    ta = tp_a + shift_tp
    tb = tp_b - shift_tp
    if mode == 0:
        stat = np.abs(ta - tb) / n
    else:
        shift_pc = s @ d_pc
        stat = np.abs(_f1_from_counts(ta, pc_a + shift_pc, gold_n) - _f1_from_counts(tb, pc_b - shift_pc, gold_n))
    return int(np.count_nonzero(stat >= observed - _TIE_TOL))


@njit
def _perm_count_numba(swaps, d_tp, d_pc, tp_a, pc_a, tp_b, pc_b, gold_n, n, mode, observed):
    R, d = swaps.shape
    count = 0
    for r in range(R):
        s_tp = 0.0
        s_pc = 0.0
        for i in range(d):
            if swaps[r, i]:
                s_tp += d_tp[i]
                s_pc += d_pc[i]
        ta = tp_a + s_tp
        tb = tp_b - s_tp
        if mode == 0:
            stat = abs(ta - tb) / n
        else:
            da = gold_n + pc_a + s_pc
            db = gold_n + pc_b - s_pc
            fa = 2.0 * ta / da if da > 0 else 0.0
            fb = 2.0 * tb / db if db > 0 else 0.0
            stat = abs(fa - fb)
        if stat >= observed - _TIE_TOL:
            count += 1
    return count


if USE_NUMBA:
    _fft_rows = _fft_rows_numba
    conv_forward = _conv_fwd_numba
    conv_backward = _conv_bwd_numba
    perm_count = _perm_count_numba
else:
    _fft_rows = _fft_rows_numpy
    conv_forward = _conv_fwd_numpy
    conv_backward = _conv_bwd_numpy
    perm_count = _perm_count_numpy


def fft_rows(x, impl=None):
    """Radix-2 decimation-in-time FFT of every row of ``x``.

    Row length must be a power of two (checked by callers).
    """
    x = np.ascontiguousarray(x, dtype=np.complex128)
    if x.ndim == 1:
        return fft_rows(x[None, :], impl)[0]
    n = x.shape[1]
    fn = _fft_rows if impl is None else impl
    return fn(x, bit_reverse_indices(n), twiddles(n))


__all__ = [
    "HAVE_NUMBA",
    "USE_NUMBA",
    "bit_reverse_indices",
    "conv_backward",
    "conv_forward",
    "fft_rows",
    "perm_count",
    "twiddles",
]
