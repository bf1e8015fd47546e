# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled im2col / col2im kernels backing the convolution ops.

Column layout: one row per output position (n, oh, ow), columns ordered
(c, i, j) with i, j the kernel offsets. Padding is virtual (zeros).
"""

import numpy as np
cimport numpy as cnp

ctypedef fused real:
    float
    double


def im2col(real[:, :, :, ::1] x, int kh, int kw, int sh, int sw,
           int ph, int pw, int out_h, int out_w):
    cdef Py_ssize_t n_batch = x.shape[0], channels = x.shape[1]
    cdef Py_ssize_t height = x.shape[2], width = x.shape[3]
    cdef Py_ssize_t ncol = channels * kh * kw
    dtype = np.float32 if real is float else np.float64
    cols_arr = np.zeros((n_batch * out_h * out_w, ncol), dtype=dtype)
    cdef real[:, ::1] cols = cols_arr
    cdef Py_ssize_t n, oh, ow, c, i, j, row, col, ih, iw
    with nogil:
        for n in range(n_batch):
            for oh in range(out_h):
                for ow in range(out_w):
                    row = (n * out_h + oh) * out_w + ow
                    col = 0
                    for c in range(channels):
                        for i in range(kh):
                            ih = oh * sh - ph + i
                            for j in range(kw):
                                iw = ow * sw - pw + j
                                if 0 <= ih < height and 0 <= iw < width:
                                    cols[row, col] = x[n, c, ih, iw]
                                col += 1
    return cols_arr


def col2im(real[:, ::1] cols, int n_batch, int channels, int height, int width,
           int kh, int kw, int sh, int sw, int ph, int pw, int out_h, int out_w):
    dtype = np.float32 if real is float else np.float64
    x_arr = np.zeros((n_batch, channels, height, width), dtype=dtype)
    cdef real[:, :, :, ::1] x = x_arr
    cdef Py_ssize_t n, oh, ow, c, i, j, row, col, ih, iw
    with nogil:
        for n in range(n_batch):
            for oh in range(out_h):
                for ow in range(out_w):
                    row = (n * out_h + oh) * out_w + ow
                    col = 0
                    for c in range(channels):
                        for i in range(kh):
                            ih = oh * sh - ph + i
                            for j in range(kw):
                                iw = ow * sw - pw + j
                                if 0 <= ih < height and 0 <= iw < width:
                                    x[n, c, ih, iw] += cols[row, col]
                                col += 1
    return x_arr
