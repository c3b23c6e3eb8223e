"""Pure-numpy kernels: the fallback backend.

Every routine here is the reference for the compiled twin in _native.pyx.
Arithmetic is arranged so both backends execute the same IEEE operation
sequence per element and produce bit-identical results (reductions over
the 6 feature channels and 8 interpolation corners are sequential; the
opacity-correction power uses det_pow, a shared frexp/polynomial/ldexp
implementation, instead of libm pow).
"""

from __future__ import annotations

import numpy as np

NAME = "python"

_LN2 = 0.6931471805599453
_TWO_OVER_LN2 = 2.0 / _LN2
_SQRT_HALF = 0.7071067811865476

_ATANH_C = np.array([1.0 / (2 * k + 1) for k in range(8)])
_EXP_C = np.empty(14)
_EXP_C[0] = 1.0
for _k in range(1, 14):
    _EXP_C[_k] = _EXP_C[_k - 1] / _k


def det_pow(base, expo):
    """Elementwise base**expo for base in [0, 1], expo > 0.

    Deterministic across backends: built from frexp/ldexp (exact) and
    fixed-order polynomials, with every rounding step identical to the
    scalar C implementation. Relative error stays below ~1e-13.
    """
    base = np.asarray(base, dtype=np.float64)
    expo = np.asarray(expo, dtype=np.float64)
    m, e_i = np.frexp(base)
    e = e_i.astype(np.float64)
    fold = m < _SQRT_HALF
    m = np.where(fold, m + m, m)
    e = np.where(fold, e - 1.0, e)
    s = (m - 1.0) / (m + 1.0)
    s2 = s * s
    p = np.full_like(s2, _ATANH_C[7])
    for k in range(6, -1, -1):
        p = p * s2 + _ATANH_C[k]
    t = s * p
    log2m = _TWO_OVER_LN2 * t
    y = (e + log2m) * expo
    n = np.rint(y)
    r = y - n
    x = r * _LN2
    q = np.full_like(x, _EXP_C[13])
    for k in range(12, -1, -1):
        q = q * x + _EXP_C[k]
    n_int = np.maximum(n, -2100.0).astype(np.int32)
    out = np.ldexp(q, n_int)
    return np.where(base == 0.0, 0.0, out)


def train_epoch(weights, samples, scales, order, eta, h_table):
    """One pass of online SOM updates, in sample `order`, in place.

    h_table[b, n] is the neighborhood factor between BMU b and node n for
    this epoch's sigma (precomputed by the caller and shared between
    backends).
    """
    for idx in order:
        v = samples[idx]
        diff = (v - weights) * scales
        d2 = (diff * diff).sum(axis=1)
        b = int(np.argmin(d2))
        a = eta * h_table[b]
        weights += a[:, None] * (v - weights)


def train_epoch_dynamic(weights, samples, scales, order, eta, positions, inv_two_sigma_sq):
    """Same update loop with neighborhood rows computed on demand; used
    when the lattice is too large for a full table. Internally
    deterministic, but not bit-matched to the compiled backend."""
    cache: dict[int, np.ndarray] = {}
    for idx in order:
        v = samples[idx]
        diff = (v - weights) * scales
        d2 = (diff * diff).sum(axis=1)
        b = int(np.argmin(d2))
        a = cache.get(b)
        if a is None:
            dots = np.clip(positions @ positions[b], -1.0, 1.0)
            geo = np.arccos(dots)
            a = eta * np.exp(-(geo * geo) * inv_two_sigma_sq)
            cache[b] = a
        weights += a[:, None] * (v - weights)


def assign_bmu(weights, feats, scales, num_threads=0, chunk=1024):
    """BMU id and squared weighted distance per feature row.

    Ties resolve to the lowest node id (argmin keeps the first minimum).
    num_threads is accepted for API parity and ignored.
    """
    n = feats.shape[0]
    bmu = np.empty(n, dtype=np.int32)
    d2_out = np.empty(n, dtype=np.float64)
    for start in range(0, n, chunk):
        f = feats[start : start + chunk]
        diff = (f[:, None, :] - weights[None, :, :]) * scales
        d2 = (diff * diff).sum(axis=2)
        idx = d2.argmin(axis=1)
        bmu[start : start + chunk] = idx.astype(np.int32)
        d2_out[start : start + chunk] = d2[np.arange(len(f)), idx]
    return bmu, d2_out


def bmu_top2(weights, feats, scales, chunk=1024):
    """Best and second-best node ids per feature row."""
    n = feats.shape[0]
    b1 = np.empty(n, dtype=np.int32)
    b2 = np.empty(n, dtype=np.int32)
    for start in range(0, n, chunk):
        f = feats[start : start + chunk]
        diff = (f[:, None, :] - weights[None, :, :]) * scales
        d2 = (diff * diff).sum(axis=2)
        first = d2.argmin(axis=1)
        rows = np.arange(len(f))
        d2[rows, first] = np.inf
        second = d2.argmin(axis=1)
        b1[start : start + chunk] = first.astype(np.int32)
        b2[start : start + chunk] = second.astype(np.int32)
    return b1, b2


def _trilinear(rgba, nx, ny, nz, x, y, z):
    """Clamp-to-edge trilinear RGBA fetch at index-space positions."""
    fi = np.floor(x)
    fx = x - fi
    i0 = fi.astype(np.int64)
    fj = np.floor(y)
    fy = y - fj
    j0 = fj.astype(np.int64)
    fk = np.floor(z)
    fz = z - fk
    k0 = fk.astype(np.int64)
    i1 = np.clip(i0 + 1, 0, nx - 1)
    i0 = np.clip(i0, 0, nx - 1)
    j1 = np.clip(j0 + 1, 0, ny - 1)
    j0 = np.clip(j0, 0, ny - 1)
    k1 = np.clip(k0 + 1, 0, nz - 1)
    k0 = np.clip(k0, 0, nz - 1)
    wx0 = 1.0 - fx
    wy0 = 1.0 - fy
    wz0 = 1.0 - fz
    acc = np.zeros((x.shape[0], 4), dtype=np.float64)
    # corner order fixed: x fastest, then y, then z
    for kk, wz in ((k0, wz0), (k1, fz)):
        for jj, wy in ((j0, wy0), (j1, fy)):
            for ii, wx in ((i0, wx0), (i1, fx)):
                w = (wx * wy) * wz
                idx = ii + nx * (jj + ny * kk)
                acc += w[:, None] * rgba[idx].astype(np.float64)
    return acc


def raycast(rgba, dims, eye_idx, right, up, forward, tanfov, aspect,
            width, height, step, early_stop, background, num_threads=0):
    """Perspective raycast with front-to-back compositing.

    rgba: float32 (n_voxels, 4) premultiplication-free color volume in
    x-fastest order. eye_idx/right/up/forward are in index space (already
    divided by voxel spacing). Returns uint8 (height, width, 4).
    """
    nx, ny, nz = dims
    npix = width * height

    cols = (2.0 * (np.arange(width, dtype=np.float64) + 0.5) / width - 1.0) * aspect * tanfov
    rows = (1.0 - 2.0 * (np.arange(height, dtype=np.float64) + 0.5) / height) * tanfov
    px = np.broadcast_to(cols, (height, width)).reshape(-1)
    py = np.broadcast_to(rows[:, None], (height, width)).reshape(-1)

    dx = (forward[0] + px * right[0]) + py * up[0]
    dy = (forward[1] + px * right[1]) + py * up[1]
    dz = (forward[2] + px * right[2]) + py * up[2]
    norm = np.sqrt((dx * dx + dy * dy) + dz * dz)
    dx = dx / norm
    dy = dy / norm
    dz = dz / norm

    tmin = np.zeros(npix)
    tmax = np.full(npix, np.inf)
    miss = np.zeros(npix, dtype=bool)
    for o, d, n in ((eye_idx[0], dx, nx), (eye_idx[1], dy, ny), (eye_idx[2], dz, nz)):
        lo, hi = -0.5, n - 0.5
        para = d == 0.0
        miss |= para & ((o < lo) | (o > hi))
        dsafe = np.where(para, 1.0, d)
        t1 = (lo - o) / dsafe
        t2 = (hi - o) / dsafe
        ax_lo = np.where(para, -np.inf, np.minimum(t1, t2))
        ax_hi = np.where(para, np.inf, np.maximum(t1, t2))
        tmin = np.maximum(tmin, ax_lo)
        tmax = np.minimum(tmax, ax_hi)
    miss |= tmax <= tmin

    n_steps = np.where(miss, 0, np.ceil((tmax - tmin) / step)).astype(np.int64)
    color = np.zeros((npix, 3), dtype=np.float64)
    alpha = np.zeros(npix, dtype=np.float64)
    stopped = np.zeros(npix, dtype=bool)

    max_steps = int(n_steps.max()) if npix else 0
    for i in range(max_steps):
        live = np.nonzero(~stopped & (i < n_steps))[0]
        if live.size == 0:
            break
        seg0 = tmin[live] + float(i) * step
        full = seg0 + step <= tmax[live]
        seg_len = np.where(full, step, tmax[live] - seg0)
        t = seg0 + 0.5 * seg_len
        sx = eye_idx[0] + t * dx[live]
        sy = eye_idx[1] + t * dy[live]
        sz = eye_idx[2] + t * dz[live]
        sample = _trilinear(rgba, nx, ny, nz, sx, sy, sz)
        aprime = 1.0 - det_pow(1.0 - sample[:, 3], seg_len)
        w = (1.0 - alpha[live]) * aprime
        color[live, 0] += w * sample[:, 0]
        color[live, 1] += w * sample[:, 1]
        color[live, 2] += w * sample[:, 2]
        alpha[live] += w
        stopped[live] |= alpha[live] >= early_stop

    bg_w = (1.0 - alpha) * background[3]
    out = np.empty((npix, 4), dtype=np.float64)
    out[:, 0] = color[:, 0] + bg_w * background[0]
    out[:, 1] = color[:, 1] + bg_w * background[1]
    out[:, 2] = color[:, 2] + bg_w * background[2]
    out[:, 3] = alpha + bg_w
    quant = np.floor(out * 255.0 + 0.5)
    np.clip(quant, 0.0, 255.0, out=quant)
    return quant.astype(np.uint8).reshape(height, width, 4)
