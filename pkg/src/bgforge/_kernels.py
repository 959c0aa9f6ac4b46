"""Hot raster kernels: k-by-k minimum filter and polygon scanline fill.

Each kernel has a numba-jitted implementation and a pure-numpy one.
`BGFORGE_NO_NUMBA=1` forces the numpy path; otherwise numba is used when
importable. Both paths implement identical pixel semantics:

* erosion: window minimum with replicate (edge-clamped) borders,
  separable into a row pass and a column pass;
* fill: nonzero-winding test at pixel centers with a half-open
  scanline rule (top/left boundary pixels in, bottom/right out).
"""

from __future__ import annotations

import os

import numpy as np

_FORCE_NUMPY = os.environ.get("BGFORGE_NO_NUMBA", "").lower() in ("1", "true", "yes")

try:
    if _FORCE_NUMPY:
        raise ImportError("numba disabled by BGFORGE_NO_NUMBA")
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:
    _HAVE_NUMBA = False


def kernel_backend() -> str:
    """Name of the active kernel path: 'numba' or 'numpy'."""
    return "numba" if _HAVE_NUMBA else "numpy"


# --- erosion ---

def _erode_numpy(src: np.ndarray, k: int) -> np.ndarray:
    r = k // 2
    h, w = src.shape
    padded = np.pad(src, r, mode="edge")
    rows = padded[:, 0:w].copy()
    for d in range(1, k):
        np.minimum(rows, padded[:, d:d + w], out=rows)
    out = rows[0:h, :].copy()
    for d in range(1, k):
        np.minimum(out, rows[d:d + h, :], out=out)
    return out


if _HAVE_NUMBA:

    @njit(cache=True)
    def _erode_numba(src, k):  # pragma: no cover - exercised via erode_u8
        # separable; a window is all-ones iff its zero-count prefix sums match,
        # so each pass is O(1) per pixel regardless of k
        h, w = src.shape
        r = k // 2
        tmp = np.empty((h, w), np.uint8)
        out = np.empty((h, w), np.uint8)
        zeros = np.empty(max(h, w) + 1, np.int32)
        for y in range(h):
            zeros[0] = 0
            for x in range(w):
                zeros[x + 1] = zeros[x] + (1 - src[y, x])
            for x in range(w):
                lo = max(x - r, 0)
                hi = min(x + r, w - 1)
                tmp[y, x] = np.uint8(1) if zeros[hi + 1] == zeros[lo] else np.uint8(0)
        for x in range(w):
            zeros[0] = 0
            for y in range(h):
                zeros[y + 1] = zeros[y] + (1 - tmp[y, x])
            for y in range(h):
                lo = max(y - r, 0)
                hi = min(y + r, h - 1)
                out[y, x] = np.uint8(1) if zeros[hi + 1] == zeros[lo] else np.uint8(0)
        return out


def erode_u8(src: np.ndarray, k: int) -> np.ndarray:
    """Erode a {0,1} uint8 raster with a k-by-k window, k odd."""
    src = np.ascontiguousarray(src, dtype=np.uint8)
    if k == 1:
        return src.copy()
    if _HAVE_NUMBA:
        return _erode_numba(src, k)
    return _erode_numpy(src, k)


# --- polygon fill ---

def _fill_numpy(vx: np.ndarray, vy: np.ndarray, starts: np.ndarray, h: int, w: int) -> np.ndarray:
    out = np.zeros((h, w), np.uint8)
    cols = np.arange(w, dtype=np.float64) + 0.5
    for rix in range(len(starts) - 1):
        a, b = starts[rix], starts[rix + 1]
        x0 = vx[a:b]
        y0 = vy[a:b]
        x1 = np.roll(x0, -1)
        y1 = np.roll(y0, -1)
        for row in range(h):
            py = row + 0.5
            up = (y0 <= py) & (py < y1)
            dn = (y1 <= py) & (py < y0)
            idx = np.nonzero(up | dn)[0]
            if idx.size == 0:
                continue
            xc = x0[idx] + (py - y0[idx]) * (x1[idx] - x0[idx]) / (y1[idx] - y0[idx])
            sg = np.where(up[idx], 1, -1)
            wn = ((xc[None, :] > cols[:, None]) * sg[None, :]).sum(axis=1)
            np.bitwise_or(out[row], (wn != 0).astype(np.uint8), out=out[row])
    return out


if _HAVE_NUMBA:

    @njit(cache=True)
    def _fill_numba(vx, vy, starts, h, w):  # pragma: no cover - exercised via fill_rings_u8
        out = np.zeros((h, w), np.uint8)
        nr = starts.shape[0] - 1
        maxe = 0
        for rix in range(nr):
            ne = starts[rix + 1] - starts[rix]
            if ne > maxe:
                maxe = ne
        xi = np.empty(maxe, np.float64)
        si = np.empty(maxe, np.int64)
        for rix in range(nr):
            a = starts[rix]
            n = starts[rix + 1] - a
            for row in range(h):
                py = row + 0.5
                m = 0
                for i in range(n):
                    x0 = vx[a + i]
                    y0 = vy[a + i]
                    j = a + (i + 1) % n
                    x1 = vx[j]
                    y1 = vy[j]
                    if (y0 <= py) and (py < y1):
                        xi[m] = x0 + (py - y0) * (x1 - x0) / (y1 - y0)
                        si[m] = 1
                        m += 1
                    elif (y1 <= py) and (py < y0):
                        xi[m] = x0 + (py - y0) * (x1 - x0) / (y1 - y0)
                        si[m] = -1
                        m += 1
                if m == 0:
                    continue
                order = np.argsort(xi[:m])
                total = 0
                for i in range(m):
                    total += si[i]
                ptr = 0
                prefix = 0
                for c in range(w):
                    px = c + 0.5
                    while ptr < m and xi[order[ptr]] <= px:
                        prefix += si[order[ptr]]
                        ptr += 1
                    if total - prefix != 0:
                        out[row, c] = 1
        return out


def fill_rings_u8(vx: np.ndarray, vy: np.ndarray, starts: np.ndarray, h: int, w: int) -> np.ndarray:
    """Union of nonzero-winding fills of the given rings on an h-by-w raster.

    Vertices are flat arrays; starts[i]:starts[i+1] delimits ring i.
    """
    vx = np.ascontiguousarray(vx, dtype=np.float64)
    vy = np.ascontiguousarray(vy, dtype=np.float64)
    starts = np.ascontiguousarray(starts, dtype=np.int64)
    if _HAVE_NUMBA:
        return _fill_numba(vx, vy, starts, h, w)
    return _fill_numpy(vx, vy, starts, h, w)


def warmup() -> None:
    """Trigger jit compilation so later calls run at steady-state speed."""
    m = np.zeros((4, 4), np.uint8)
    m[1:3, 1:3] = 1
    erode_u8(m, 3)
    fill_rings_u8(
        np.array([1.0, 3.0, 3.0, 1.0]),
        np.array([1.0, 1.0, 3.0, 3.0]),
        np.array([0, 4], np.int64),
        4,
        4,
    )
