# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled pair sums over sampled paths.

A path set is an array of shape (M, d, n) with a contiguous last axis: coordinate k of
point i of sample m lives at P[m, k, i]. Every routine evaluates a radial
profile f(r2) of the squared distance between two points and sums it over
index pairs, one result per sample:

    kind 0 (gaussian)  f(r2) = exp(-coef * r2)
    kind 1 (table)     f(r2) = linear interpolation of table at r2 * coef,
                       zero at and beyond the last node

Points are processed in time blocks of BLOCK consecutive indices. A block
pair whose bounding boxes are farther apart than the profile cutoff is
skipped: for the gaussian profile that is coef * r2 > 40, i.e. terms below
4e-18 of the peak; for tables it is the exact end of support.
"""
from libc.math cimport exp
from libc.stdlib cimport free, malloc

import numpy as np

cdef enum:
    BLOCK = 128

cdef double GAUSS_CUTOFF = 40.0


ctypedef struct Profile:
    int kind
    double coef
    const double* table
    Py_ssize_t ntab
    double cut2


cdef Profile _make_profile(int kind, double coef, const double[::1] table) except *:
    cdef Profile p
    if kind not in (0, 1):
        raise ValueError(f"unknown profile kind {kind}")
    if coef <= 0:
        raise ValueError("profile coefficient must be positive")
    p.kind = kind
    p.coef = coef
    p.ntab = table.shape[0]
    p.table = &table[0]
    if kind == 0:
        p.cut2 = GAUSS_CUTOFF / coef
    else:
        if p.ntab < 2:
            raise ValueError("table profile needs at least two nodes")
        p.cut2 = (p.ntab - 1) / coef
    return p


cdef void _bounds(const double* x, Py_ssize_t stride, int d, Py_ssize_t n,
                  double* lo, double* hi) noexcept nogil:
    # lo/hi are (d, nblocks) row-major
    cdef Py_ssize_t nb = (n + BLOCK - 1) // BLOCK
    cdef Py_ssize_t b, i, i0, i1
    cdef int k
    cdef double v, mn, mx
    for k in range(d):
        for b in range(nb):
            i0 = b * BLOCK
            i1 = i0 + BLOCK
            if i1 > n:
                i1 = n
            mn = x[k * stride + i0]
            mx = mn
            for i in range(i0 + 1, i1):
                v = x[k * stride + i]
                if v < mn:
                    mn = v
                if v > mx:
                    mx = v
            lo[k * nb + b] = mn
            hi[k * nb + b] = mx


cdef inline double _gap2(const double* alo, const double* ahi, Py_ssize_t anb, Py_ssize_t I,
                         const double* blo, const double* bhi, Py_ssize_t bnb, Py_ssize_t J,
                         int d) noexcept nogil:
    cdef double g2 = 0.0, g
    cdef int k
    for k in range(d):
        g = alo[k * anb + I] - bhi[k * bnb + J]
        if g > 0:
            g2 += g * g
        else:
            g = blo[k * bnb + J] - ahi[k * anb + I]
            if g > 0:
                g2 += g * g
    return g2


cdef double _block(const double* a, Py_ssize_t sa, const double* b, Py_ssize_t sb, int d,
                   Py_ssize_t i0, Py_ssize_t i1, Py_ssize_t j0, Py_ssize_t j1,
                   bint tri, const Profile* p) noexcept nogil:
    # Sum of f(|b_j - a_i|^2) over i in [i0, i1), j in [j0, j1); with tri, only i < j.
    cdef Py_ssize_t i, j, iend, kk
    cdef double tot = 0.0, acc, dx, dy, dz, u, f
    cdef double c = p.coef
    cdef const double* tab = p.table
    cdef double tmax = <double>(p.ntab - 1)
    cdef const double* ax = a
    cdef const double* ay = a + sa
    cdef const double* az = a + 2 * sa
    cdef const double* bx = b
    cdef const double* by = b + sb
    cdef const double* bz = b + 2 * sb
    cdef double xj, yj, zj
    for j in range(j0, j1):
        iend = i1
        if tri and j < iend:
            iend = j
        acc = 0.0
        xj = bx[j]
        if p.kind == 0:
            if d == 1:
                for i in range(i0, iend):
                    dx = xj - ax[i]
                    acc = acc + exp(-c * (dx * dx))
            elif d == 2:
                yj = by[j]
                for i in range(i0, iend):
                    dx = xj - ax[i]
                    dy = yj - ay[i]
                    acc = acc + exp(-c * (dx * dx + dy * dy))
            else:
                yj = by[j]
                zj = bz[j]
                for i in range(i0, iend):
                    dx = xj - ax[i]
                    dy = yj - ay[i]
                    dz = zj - az[i]
                    acc = acc + exp(-c * (dx * dx + dy * dy + dz * dz))
        else:
            for i in range(i0, iend):
                dx = xj - ax[i]
                u = dx * dx
                if d >= 2:
                    dy = by[j] - ay[i]
                    u = u + dy * dy
                if d == 3:
                    dz = bz[j] - az[i]
                    u = u + dz * dz
                u = u * c
                if u < tmax:
                    kk = <Py_ssize_t>u
                    f = u - kk
                    acc = acc + tab[kk] + f * (tab[kk + 1] - tab[kk])
        tot += acc
    return tot


cdef double _pair_sum(const double* a, Py_ssize_t sa, Py_ssize_t na,
                      const double* b, Py_ssize_t sb, Py_ssize_t nb,
                      int d, bint tri, const Profile* p,
                      double* alo, double* ahi, double* blo, double* bhi) noexcept nogil:
    cdef Py_ssize_t anb = (na + BLOCK - 1) // BLOCK
    cdef Py_ssize_t bnb = (nb + BLOCK - 1) // BLOCK
    cdef Py_ssize_t I, J, i0, i1, j0, j1
    cdef double tot = 0.0
    _bounds(a, sa, d, na, alo, ahi)
    if not tri:
        _bounds(b, sb, d, nb, blo, bhi)
    else:
        blo = alo
        bhi = ahi
    for J in range(bnb):
        j0 = J * BLOCK
        j1 = j0 + BLOCK
        if j1 > nb:
            j1 = nb
        for I in range(anb):
            i0 = I * BLOCK
            if tri and i0 >= j1:
                break
            i1 = i0 + BLOCK
            if i1 > na:
                i1 = na
            if _gap2(alo, ahi, anb, I, blo, bhi, bnb, J, d) > p.cut2:
                continue
            tot += _block(a, sa, b, sb, d, i0, i1, j0, j1, tri and I == J, p)
    return tot


def _check_batch(P):
    if P.shape[1] not in (1, 2, 3):
        raise ValueError(f"dimension must be 1, 2 or 3, got {P.shape[1]}")
    if P.shape[2] > 1 and P.strides[2] != sizeof(double):
        raise ValueError("time axis must be contiguous")


def tri_sum_batch(const double[:, :, :] P, int kind, double coef, const double[::1] table):
    """Per sample, sum of f(|p_j - p_i|^2) over 0 <= i < j < n."""
    _check_batch(P)
    cdef Profile prof = _make_profile(kind, coef, table)
    cdef Py_ssize_t M = P.shape[0], n = P.shape[2], m
    cdef int d = P.shape[1]
    out = np.zeros(M)
    cdef double[::1] res = out
    if M == 0 or n < 2:
        return out
    cdef Py_ssize_t nblk = (n + BLOCK - 1) // BLOCK
    cdef double* buf = <double*>malloc(2 * d * nblk * sizeof(double))
    if buf == NULL:
        raise MemoryError()
    try:
        with nogil:
            for m in range(M):
                res[m] = _pair_sum(&P[m, 0, 0], P.strides[1] // 8, n,
                                   &P[m, 0, 0], P.strides[1] // 8, n,
                                   d, True, &prof, buf, buf + d * nblk, NULL, NULL)
    finally:
        free(buf)
    return out


def rect_sum_batch(const double[:, :, :] P, const double[:, :, :] Q,
                   int kind, double coef, const double[::1] table):
    """Per sample, sum of f(|q_j - p_i|^2) over all i, j."""
    _check_batch(P)
    _check_batch(Q)
    if P.shape[0] != Q.shape[0] or P.shape[1] != Q.shape[1]:
        raise ValueError("path batches differ in sample count or dimension")
    cdef Profile prof = _make_profile(kind, coef, table)
    cdef Py_ssize_t M = P.shape[0], na = P.shape[2], nb = Q.shape[2], m
    cdef int d = P.shape[1]
    out = np.zeros(M)
    cdef double[::1] res = out
    if M == 0 or na == 0 or nb == 0:
        return out
    cdef Py_ssize_t ablk = (na + BLOCK - 1) // BLOCK
    cdef Py_ssize_t bblk = (nb + BLOCK - 1) // BLOCK
    cdef double* buf = <double*>malloc(2 * d * (ablk + bblk) * sizeof(double))
    if buf == NULL:
        raise MemoryError()
    try:
        with nogil:
            for m in range(M):
                res[m] = _pair_sum(&P[m, 0, 0], P.strides[1] // 8, na,
                                   &Q[m, 0, 0], Q.strides[1] // 8, nb,
                                   d, False, &prof,
                                   buf, buf + d * ablk,
                                   buf + 2 * d * ablk, buf + 2 * d * ablk + d * bblk)
    finally:
        free(buf)
    return out
