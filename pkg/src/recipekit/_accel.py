"""Hot numeric kernels with a numba path and a pure-numpy fallback.

The backend is chosen once at import time.  Set ``RECIPEKIT_NUMBA=0`` to
force the numpy path (useful on platforms without numba or when debugging).
Both paths evaluate every floating-point expression in the same order, so
their outputs are bitwise identical; ``tests/test_accel.py`` pins that.
"""

import os

import numpy as np

_requested = os.environ.get("RECIPEKIT_NUMBA", "1").strip().lower()
_disabled = _requested in ("0", "false", "no", "off")

try:
    if _disabled:
        raise ImportError("disabled by RECIPEKIT_NUMBA")
    from numba import njit

    HAS_NUMBA = True
except ImportError:
    HAS_NUMBA = False

BACKEND = "numba" if HAS_NUMBA else "numpy"


# ---------------------------------------------------------------------------
# numpy reference path
# ---------------------------------------------------------------------------


def im2col3x3_numpy(xp):
    """(N, H+2, W+2, C) padded input -> (N, H, W, 9, C) patch columns."""
    n, hp, wp, c = xp.shape
    h, w = hp - 2, wp - 2
    cols = np.empty((n, h, w, 9, c), dtype=xp.dtype)
    for k in range(9):
        di, dj = divmod(k, 3)
        cols[:, :, :, k, :] = xp[:, di : di + h, dj : dj + w, :]
    return cols


def col2im3x3_numpy(dcols):
    """Adjoint of :func:`im2col3x3_numpy`; returns the padded-input gradient."""
    n, h, w, _, c = dcols.shape
    dxp = np.zeros((n, h + 2, w + 2, c), dtype=dcols.dtype)
    for k in range(9):
        di, dj = divmod(k, 3)
        dxp[:, di : di + h, dj : dj + w, :] += dcols[:, :, :, k, :]
    return dxp


def bilinear_sample_numpy(src, xs, ys, fill, clamp):
    """Sample ``src`` (H, W, C) at pixel-centre coordinates ``xs``/``ys``.

    With ``clamp`` the coordinates are clipped into the image (resize
    semantics).  Without it, points outside ``[-0.5, W-0.5) x [-0.5, H-0.5)``
    take ``fill`` and inside points read edge-clamped neighbours.
    """
    h, w, _ = src.shape
    s = src.astype(np.float64)
    if clamp:
        xs = np.minimum(np.maximum(xs, 0.0), w - 1.0)
        ys = np.minimum(np.maximum(ys, 0.0), h - 1.0)
        inside = None
    else:
        inside = (xs >= -0.5) & (xs < w - 0.5) & (ys >= -0.5) & (ys < h - 0.5)
    x0f = np.floor(xs)
    y0f = np.floor(ys)
    fx = (xs - x0f)[..., None]
    fy = (ys - y0f)[..., None]
    x0 = x0f.astype(np.int64)
    y0 = y0f.astype(np.int64)
    x1 = np.minimum(np.maximum(x0 + 1, 0), w - 1)
    y1 = np.minimum(np.maximum(y0 + 1, 0), h - 1)
    x0 = np.minimum(np.maximum(x0, 0), w - 1)
    y0 = np.minimum(np.maximum(y0, 0), h - 1)
    a = s[y0, x0]
    b = s[y0, x1]
    c = s[y1, x0]
    d = s[y1, x1]
    top = a + fx * (b - a)
    bot = c + fx * (d - c)
    out = top + fy * (bot - top)
    if inside is not None:
        out[~inside] = fill
    return out


def pairwise_sqdist_numpy(x):
    """Squared Euclidean distances by direct differences, summed in column order."""
    diff = x[:, None, :] - x[None, :, :]
    sq = diff * diff
    acc = np.zeros(sq.shape[:2], dtype=np.float64)
    for k in range(sq.shape[2]):
        acc = acc + sq[:, :, k]
    return acc


# ---------------------------------------------------------------------------
# numba path
# ---------------------------------------------------------------------------

if HAS_NUMBA:

    @njit(cache=True)
    def _im2col3x3_nb(xp):
        n, hp, wp, c = xp.shape
        h = hp - 2
        w = wp - 2
        cols = np.empty((n, h, w, 9, c), dtype=xp.dtype)
        for b in range(n):
            for i in range(h):
                for j in range(w):
                    for k in range(9):
                        di = k // 3
                        dj = k - 3 * di
                        for ch in range(c):
                            cols[b, i, j, k, ch] = xp[b, i + di, j + dj, ch]
        return cols

    @njit(cache=True)
    def _col2im3x3_nb(dcols):
        n, h, w, _, c = dcols.shape
        dxp = np.zeros((n, h + 2, w + 2, c), dtype=dcols.dtype)
        # k outermost keeps the per-element accumulation order of the numpy path
        for k in range(9):
            di = k // 3
            dj = k - 3 * di
            for b in range(n):
                for i in range(h):
                    for j in range(w):
                        for ch in range(c):
                            dxp[b, i + di, j + dj, ch] += dcols[b, i, j, k, ch]
        return dxp

    @njit(cache=True)
    def _bilinear_sample_nb(src, xs, ys, fill, clamp):
        h, w, nc = src.shape
        oh, ow = xs.shape
        out = np.empty((oh, ow, nc), dtype=np.float64)
        for i in range(oh):
            for j in range(ow):
                x = xs[i, j]
                y = ys[i, j]
                if clamp:
                    x = min(max(x, 0.0), w - 1.0)
                    y = min(max(y, 0.0), h - 1.0)
                elif not (x >= -0.5 and x < w - 0.5 and y >= -0.5 and y < h - 0.5):
                    for ch in range(nc):
                        out[i, j, ch] = fill
                    continue
                x0f = np.floor(x)
                y0f = np.floor(y)
                fx = x - x0f
                fy = y - y0f
                x0 = int(x0f)
                y0 = int(y0f)
                x1 = min(max(x0 + 1, 0), w - 1)
                y1 = min(max(y0 + 1, 0), h - 1)
                x0 = min(max(x0, 0), w - 1)
                y0 = min(max(y0, 0), h - 1)
                for ch in range(nc):
                    a = np.float64(src[y0, x0, ch])
                    b = np.float64(src[y0, x1, ch])
                    c = np.float64(src[y1, x0, ch])
                    d = np.float64(src[y1, x1, ch])
                    top = a + fx * (b - a)
                    bot = c + fx * (d - c)
                    out[i, j, ch] = top + fy * (bot - top)
        return out

    @njit(cache=True)
    def _pairwise_sqdist_nb(x):
        n, dim = x.shape
        out = np.zeros((n, n), dtype=np.float64)
        for i in range(n):
            for j in range(n):
                acc = 0.0
                for k in range(dim):
                    diff = x[i, k] - x[j, k]
                    acc = acc + diff * diff
                out[i, j] = acc
        return out


def im2col3x3(xp):
    if HAS_NUMBA:
        return _im2col3x3_nb(np.ascontiguousarray(xp))
    return im2col3x3_numpy(xp)


def col2im3x3(dcols):
    if HAS_NUMBA:
        return _col2im3x3_nb(np.ascontiguousarray(dcols))
    return col2im3x3_numpy(dcols)


def bilinear_sample(src, xs, ys, fill=0.0, clamp=True):
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if HAS_NUMBA:
        return _bilinear_sample_nb(
            np.ascontiguousarray(src), np.ascontiguousarray(xs),
            np.ascontiguousarray(ys), float(fill), bool(clamp),
        )
    return bilinear_sample_numpy(src, xs, ys, float(fill), clamp)


def pairwise_sqdist(x):
    x = np.asarray(x, dtype=np.float64)
    if HAS_NUMBA:
        return _pairwise_sqdist_nb(np.ascontiguousarray(x))
    return pairwise_sqdist_numpy(x)
