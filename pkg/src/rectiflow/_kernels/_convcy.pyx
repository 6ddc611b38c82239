# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled im2col / col2im kernels for the conv2d hot path.

Patch matrices are (C*kh*kw, B*ho*wo): with stride 1 both the unfold and
the fold-back walk contiguous input rows, so the stride-1 inner loops are a
straight memcpy / vector add over `wo` floats.
"""

from libc.string cimport memcpy

import numpy as np
cimport numpy as cnp

cnp.import_array()

BACKEND = "cython"


def im2col(cnp.ndarray[cnp.float32_t, ndim=4] xp,
           int kh, int kw, int sh, int sw, int ho, int wo):
    cdef int b = xp.shape[0]
    cdef int c = xp.shape[1]
    cdef cnp.ndarray[cnp.float32_t, ndim=2] out = np.empty(
        (c * kh * kw, b * ho * wo), dtype=np.float32)
    cdef float[:, :, :, ::1] x = xp
    cdef float[:, ::1] o = out
    cdef int ib, ic, oh, ow, i, j, row, colbase
    cdef const float* src
    cdef float* dst
    for ic in range(c):
        for i in range(kh):
            for j in range(kw):
                row = (ic * kh + i) * kw + j
                for ib in range(b):
                    for oh in range(ho):
                        colbase = (ib * ho + oh) * wo
                        src = &x[ib, ic, oh * sh + i, j]
                        dst = &o[row, colbase]
                        if sw == 1:
                            memcpy(dst, src, wo * sizeof(float))
                        else:
                            for ow in range(wo):
                                dst[ow] = src[ow * sw]
    return out


def col2im(cnp.ndarray[cnp.float32_t, ndim=2] cols,
           int b, int c, int hp, int wp,
           int kh, int kw, int sh, int sw, int ho, int wo):
    cdef cnp.ndarray[cnp.float32_t, ndim=4] out = np.zeros(
        (b, c, hp, wp), dtype=np.float32)
    cdef float[:, ::1] src = cols
    cdef float[:, :, :, ::1] o = out
    cdef int ib, ic, oh, ow, i, j, row, colbase
    cdef const float* s
    cdef float* d
    for ic in range(c):
        for i in range(kh):
            for j in range(kw):
                row = (ic * kh + i) * kw + j
                for ib in range(b):
                    for oh in range(ho):
                        colbase = (ib * ho + oh) * wo
                        s = &src[row, colbase]
                        d = &o[ib, ic, oh * sh + i, j]
                        if sw == 1:
                            for ow in range(wo):
                                d[ow] += s[ow]
                        else:
                            for ow in range(wo):
                                d[ow * sw] += s[ow]
    return out
