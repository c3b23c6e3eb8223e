# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels: the hot loops of training, BMU assignment and
raycasting.

Bit-compatibility contract: every floating-point operation sequence here
mirrors _pykernels.py exactly (same association order, no FMA via
-ffp-contract=off, shared det_pow instead of libm pow), so both backends
return identical bits. Parallel loops have no cross-iteration state, so
results are independent of thread count.
"""

import numpy as np

cimport cython
cimport numpy as cnp
from cython.parallel cimport prange
from libc.math cimport INFINITY, acos, ceil, exp, floor, frexp, ldexp, rint, sqrt

cimport openmp

NAME = "native"

cdef double _LN2 = 0.6931471805599453
cdef double _TWO_OVER_LN2 = 2.0 / 0.6931471805599453
cdef double _SQRT_HALF = 0.7071067811865476

cdef double _ATANH_C[8]
cdef double _EXP_C[14]

cdef int _k
for _k in range(8):
    _ATANH_C[_k] = 1.0 / (2 * _k + 1)
_EXP_C[0] = 1.0
for _k in range(1, 14):
    _EXP_C[_k] = _EXP_C[_k - 1] / _k


cdef inline double _det_pow(double base, double expo) nogil:
    """base**expo for base in [0,1], expo > 0; mirrors _pykernels.det_pow."""
    cdef double m, e, s, s2, p, t, log2m, y, n, r, x, q
    cdef int e_i, k, n_int
    if base == 0.0:
        return 0.0
    m = frexp(base, &e_i)
    e = e_i
    if m < _SQRT_HALF:
        m = m + m
        e = e - 1.0
    s = (m - 1.0) / (m + 1.0)
    s2 = s * s
    p = _ATANH_C[7]
    for k in range(6, -1, -1):
        p = p * s2 + _ATANH_C[k]
    t = s * p
    log2m = _TWO_OVER_LN2 * t
    y = (e + log2m) * expo
    n = rint(y)
    r = y - n
    x = r * _LN2
    q = _EXP_C[13]
    for k in range(12, -1, -1):
        q = q * x + _EXP_C[k]
    if n < -2100.0:
        n = -2100.0
    n_int = <int> n
    return ldexp(q, n_int)


def det_pow(base, expo):
    """Elementwise wrapper over the scalar kernel (for parity tests)."""
    bb, ee = np.broadcast_arrays(
        np.asarray(base, dtype=np.float64), np.asarray(expo, dtype=np.float64)
    )
    b = np.ascontiguousarray(bb).reshape(-1)
    e = np.ascontiguousarray(ee).reshape(-1)
    out = np.empty_like(b)
    cdef double[::1] bv = b
    cdef double[::1] ev = e
    cdef double[::1] ov = out
    cdef Py_ssize_t i
    for i in range(bv.shape[0]):
        ov[i] = _det_pow(bv[i], ev[i])
    return out.reshape(bb.shape)


cdef inline double _dist2_full(const double* v, const double* w, const double* s) nogil:
    cdef double acc = 0.0
    cdef double t
    cdef int c
    for c in range(6):
        t = (v[c] - w[c]) * s[c]
        acc += t * t
    return acc


def train_epoch(double[:, ::1] weights, const double[:, ::1] samples,
                const double[::1] scales, const long[::1] order, double eta,
                const double[:, ::1] h_table):
    """One in-place online pass; h_table rows are the per-epoch
    neighborhood factors (shared with the fallback)."""
    cdef Py_ssize_t m = weights.shape[0]
    cdef Py_ssize_t si, n, c, b
    cdef double best, acc, t, a
    cdef const double* v
    with nogil:
        for si in range(order.shape[0]):
            v = &samples[order[si], 0]
            best = INFINITY
            b = 0
            for n in range(m):
                acc = 0.0
                for c in range(6):
                    t = (v[c] - weights[n, c]) * scales[c]
                    acc += t * t
                    if acc >= best:
                        break
                if acc < best:
                    best = acc
                    b = n
            for n in range(m):
                a = eta * h_table[b, n]
                for c in range(6):
                    weights[n, c] = weights[n, c] + a * (v[c] - weights[n, c])


def train_epoch_dynamic(double[:, ::1] weights, const double[:, ::1] samples,
                        const double[::1] scales, const long[::1] order, double eta,
                        const double[:, ::1] positions, double inv_two_sigma_sq):
    """Neighborhood computed on the fly (large lattices). Deterministic,
    but uses libm acos/exp, so not bit-matched to the fallback."""
    cdef Py_ssize_t m = weights.shape[0]
    cdef Py_ssize_t si, n, c, b
    cdef double best, acc, t, a, dot, geo
    cdef const double* v
    cdef const double* pb
    with nogil:
        for si in range(order.shape[0]):
            v = &samples[order[si], 0]
            best = INFINITY
            b = 0
            for n in range(m):
                acc = 0.0
                for c in range(6):
                    t = (v[c] - weights[n, c]) * scales[c]
                    acc += t * t
                    if acc >= best:
                        break
                if acc < best:
                    best = acc
                    b = n
            pb = &positions[b, 0]
            for n in range(m):
                dot = positions[n, 0] * pb[0] + positions[n, 1] * pb[1] + positions[n, 2] * pb[2]
                if dot > 1.0:
                    dot = 1.0
                elif dot < -1.0:
                    dot = -1.0
                geo = acos(dot)
                a = eta * exp(-(geo * geo) * inv_two_sigma_sq)
                for c in range(6):
                    weights[n, c] = weights[n, c] + a * (v[c] - weights[n, c])


cdef void _assign_range(const double[:, ::1] weights, const double[:, ::1] feats,
                        const double[::1] scales, Py_ssize_t lo, Py_ssize_t hi,
                        int[::1] bmu, double[::1] d2) nogil:
    """Warm-started pruned scan over feats[lo:hi].

    The warm start only seeds the pruning bound; results are provably the
    same first-minimum the full scan finds, ties included.
    """
    cdef Py_ssize_t m = weights.shape[0]
    cdef Py_ssize_t i, n, c
    cdef Py_ssize_t seed = 0
    cdef Py_ssize_t best_id
    cdef double best, acc, t
    cdef const double* v
    for i in range(lo, hi):
        v = &feats[i, 0]
        best = _dist2_full(v, &weights[seed, 0], &scales[0])
        best_id = -1
        for n in range(m):
            acc = 0.0
            for c in range(6):
                t = (v[c] - weights[n, c]) * scales[c]
                acc += t * t
                if acc > best:
                    break
            if acc < best:
                best = acc
                best_id = n
            elif acc == best and best_id < 0:
                best_id = n
        bmu[i] = <int> best_id
        d2[i] = best
        seed = best_id


def assign_bmu(const double[:, ::1] weights, const double[:, ::1] feats,
               const double[::1] scales, int num_threads=0, int chunk=4096):
    """BMU id and squared weighted distance per row; ties to lowest id.

    Chunk boundaries are fixed, so output is identical for any thread
    count.
    """
    cdef Py_ssize_t n = feats.shape[0]
    bmu_arr = np.empty(n, dtype=np.int32)
    d2_arr = np.empty(n, dtype=np.float64)
    cdef int[::1] bmu = bmu_arr
    cdef double[::1] d2 = d2_arr
    cdef Py_ssize_t n_chunks = (n + chunk - 1) // chunk
    cdef Py_ssize_t ci, lo, hi
    cdef int nt = num_threads if num_threads > 0 else openmp.omp_get_max_threads()
    for ci in prange(n_chunks, nogil=True, schedule="static", num_threads=nt):
        lo = ci * chunk
        hi = lo + chunk
        if hi > n:
            hi = n
        _assign_range(weights, feats, scales, lo, hi, bmu, d2)
    return bmu_arr, d2_arr


def bmu_top2(const double[:, ::1] weights, const double[:, ::1] feats,
             const double[::1] scales):
    """Best and second-best node per row (for topology checks)."""
    cdef Py_ssize_t n = feats.shape[0]
    cdef Py_ssize_t m = weights.shape[0]
    b1_arr = np.empty(n, dtype=np.int32)
    b2_arr = np.empty(n, dtype=np.int32)
    cdef int[::1] b1 = b1_arr
    cdef int[::1] b2 = b2_arr
    cdef Py_ssize_t i, nn, c
    cdef Py_ssize_t id1, id2
    cdef double d1, d2v, acc, t
    cdef const double* v
    with nogil:
        for i in range(n):
            v = &feats[i, 0]
            d1 = INFINITY
            d2v = INFINITY
            id1 = 0
            id2 = -1
            for nn in range(m):
                acc = 0.0
                for c in range(6):
                    t = (v[c] - weights[nn, c]) * scales[c]
                    acc += t * t
                    if acc >= d2v:
                        break
                if acc < d1:
                    d2v = d1
                    id2 = id1
                    d1 = acc
                    id1 = nn
                elif acc < d2v:
                    d2v = acc
                    id2 = nn
            if id2 < 0:
                id2 = 0
            b1[i] = <int> id1
            b2[i] = <int> id2
    return b1_arr, b2_arr


cdef inline void _trilinear(const float[:, ::1] rgba, Py_ssize_t nx, Py_ssize_t ny,
                            Py_ssize_t nz, double x, double y, double z,
                            double* out) nogil:
    cdef double fi = floor(x)
    cdef double fx = x - fi
    cdef long i0 = <long> fi
    cdef double fj = floor(y)
    cdef double fy = y - fj
    cdef long j0 = <long> fj
    cdef double fk = floor(z)
    cdef double fz = z - fk
    cdef long k0 = <long> fk
    cdef long i1 = i0 + 1
    cdef long j1 = j0 + 1
    cdef long k1 = k0 + 1
    if i1 < 0: i1 = 0
    if i1 > nx - 1: i1 = nx - 1
    if i0 < 0: i0 = 0
    if i0 > nx - 1: i0 = nx - 1
    if j1 < 0: j1 = 0
    if j1 > ny - 1: j1 = ny - 1
    if j0 < 0: j0 = 0
    if j0 > ny - 1: j0 = ny - 1
    if k1 < 0: k1 = 0
    if k1 > nz - 1: k1 = nz - 1
    if k0 < 0: k0 = 0
    if k0 > nz - 1: k0 = nz - 1
    cdef double wx0 = 1.0 - fx
    cdef double wy0 = 1.0 - fy
    cdef double wz0 = 1.0 - fz
    out[0] = 0.0
    out[1] = 0.0
    out[2] = 0.0
    out[3] = 0.0
    cdef double w
    cdef Py_ssize_t idx, c
    cdef long ii[2]
    cdef long jj[2]
    cdef long kk[2]
    cdef double wx[2]
    cdef double wy[2]
    cdef double wz[2]
    ii[0] = i0; ii[1] = i1
    jj[0] = j0; jj[1] = j1
    kk[0] = k0; kk[1] = k1
    wx[0] = wx0; wx[1] = fx
    wy[0] = wy0; wy[1] = fy
    wz[0] = wz0; wz[1] = fz
    cdef int a, b, d
    for d in range(2):
        for b in range(2):
            for a in range(2):
                w = (wx[a] * wy[b]) * wz[d]
                idx = ii[a] + nx * (jj[b] + ny * kk[d])
                for c in range(4):
                    out[c] = out[c] + w * (<double> rgba[idx, c])


cdef void _raycast_pixel(const float[:, ::1] rgba, Py_ssize_t nx, Py_ssize_t ny,
                         Py_ssize_t nz, double ox, double oy, double oz,
                         double rx, double ry, double rz,
                         double ux, double uy, double uz,
                         double fx, double fy, double fz,
                         double tanfov, double aspect,
                         Py_ssize_t width, Py_ssize_t height,
                         double step, double early_stop, const double* bg,
                         Py_ssize_t ix, Py_ssize_t iy,
                         unsigned char[:, :, ::1] out) nogil:
    cdef double px = (2.0 * (ix + 0.5) / (<double> width) - 1.0) * aspect * tanfov
    cdef double py = (1.0 - 2.0 * (iy + 0.5) / (<double> height)) * tanfov
    cdef double dx = (fx + px * rx) + py * ux
    cdef double dy = (fy + px * ry) + py * uy
    cdef double dz = (fz + px * rz) + py * uz
    cdef double norm = sqrt((dx * dx + dy * dy) + dz * dz)
    dx = dx / norm
    dy = dy / norm
    dz = dz / norm

    cdef double tmin = 0.0
    cdef double tmax = INFINITY
    cdef bint miss = 0
    cdef double o, d, lo, hi, t1, t2, axlo, axhi
    cdef Py_ssize_t axis, n
    for axis in range(3):
        if axis == 0:
            o = ox; d = dx; n = nx
        elif axis == 1:
            o = oy; d = dy; n = ny
        else:
            o = oz; d = dz; n = nz
        lo = -0.5
        hi = n - 0.5
        if d == 0.0:
            if o < lo or o > hi:
                miss = 1
        else:
            t1 = (lo - o) / d
            t2 = (hi - o) / d
            if t1 < t2:
                axlo = t1; axhi = t2
            else:
                axlo = t2; axhi = t1
            if axlo > tmin:
                tmin = axlo
            if axhi < tmax:
                tmax = axhi
    if tmax <= tmin:
        miss = 1

    cdef long n_steps = 0
    if not miss:
        n_steps = <long> ceil((tmax - tmin) / step)

    cdef double c0 = 0.0, c1 = 0.0, c2 = 0.0, alpha = 0.0
    cdef double seg0, seg_len, t, sx, sy, sz, aprime, w
    cdef double smp[4]
    cdef long i
    for i in range(n_steps):
        seg0 = tmin + (<double> i) * step
        if seg0 + step <= tmax:
            seg_len = step
        else:
            seg_len = tmax - seg0
        t = seg0 + 0.5 * seg_len
        sx = ox + t * dx
        sy = oy + t * dy
        sz = oz + t * dz
        _trilinear(rgba, nx, ny, nz, sx, sy, sz, smp)
        aprime = 1.0 - _det_pow(1.0 - smp[3], seg_len)
        w = (1.0 - alpha) * aprime
        c0 = c0 + w * smp[0]
        c1 = c1 + w * smp[1]
        c2 = c2 + w * smp[2]
        alpha = alpha + w
        if alpha >= early_stop:
            break

    cdef double bg_w = (1.0 - alpha) * bg[3]
    cdef double v0 = c0 + bg_w * bg[0]
    cdef double v1 = c1 + bg_w * bg[1]
    cdef double v2 = c2 + bg_w * bg[2]
    cdef double v3 = alpha + bg_w
    cdef double q
    cdef double vals[4]
    vals[0] = v0; vals[1] = v1; vals[2] = v2; vals[3] = v3
    cdef Py_ssize_t c
    for c in range(4):
        q = floor(vals[c] * 255.0 + 0.5)
        if q < 0.0:
            q = 0.0
        elif q > 255.0:
            q = 255.0
        out[iy, ix, c] = <unsigned char> q


def raycast(const float[:, ::1] rgba, dims, eye_idx, right, up, forward,
            double tanfov, double aspect, int width, int height,
            double step, double early_stop, background, int num_threads=0):
    """Perspective raycast with front-to-back compositing; mirrors the
    fallback. Pixels are independent, so thread count never changes
    output."""
    cdef Py_ssize_t nx = dims[0], ny = dims[1], nz = dims[2]
    cdef double ox = eye_idx[0], oy = eye_idx[1], oz = eye_idx[2]
    cdef double rx = right[0], ry = right[1], rz = right[2]
    cdef double ux = up[0], uy = up[1], uz = up[2]
    cdef double fx = forward[0], fy = forward[1], fz = forward[2]
    bg_arr = np.ascontiguousarray(background, dtype=np.float64)
    cdef double[::1] bg = bg_arr
    out_arr = np.empty((height, width, 4), dtype=np.uint8)
    cdef unsigned char[:, :, ::1] out = out_arr
    cdef Py_ssize_t pix, ix, iy
    cdef Py_ssize_t npix = (<Py_ssize_t> width) * height
    cdef int nt = num_threads if num_threads > 0 else openmp.omp_get_max_threads()
    for pix in prange(npix, nogil=True, schedule="static", num_threads=nt):
        iy = pix // width
        ix = pix - iy * width
        _raycast_pixel(rgba, nx, ny, nz, ox, oy, oz, rx, ry, rz, ux, uy, uz,
                       fx, fy, fz, tanfov, aspect, width, height, step,
                       early_stop, &bg[0], ix, iy, out)
    return out_arr
