# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled preprocessing kernels: windowed-sinc resampling and frame RMS.

Numerically equivalent to spoofdet._kernels._fallback (same filter, same
frame rule); the python fallback differs only in float summation order.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport ceil, cos, floor, sin, sqrt

cnp.import_array()

cdef double PI = 3.141592653589793238462643383279502884


cdef inline double _sinc(double t) noexcept nogil:
    if t == 0.0:
        return 1.0
    return sin(PI * t) / (PI * t)


def resample_sinc(x, long src_rate, long dst_rate, long zeros=32):
    """Band-limited resampling of a 1-D float64 signal."""
    cdef cnp.ndarray[cnp.float64_t, ndim=1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef long n_in = xv.shape[0]
    cdef long n_out = <long>floor(n_in * <double>dst_rate / <double>src_rate + 0.5)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.zeros(max(n_out, 0), dtype=np.float64)
    if n_out <= 0:
        return out

    cdef double ratio = <double>dst_rate / <double>src_rate
    cdef double cutoff = ratio if ratio < 1.0 else 1.0
    cdef double support = zeros / cutoff
    cdef double step = <double>src_rate / <double>dst_rate
    cdef long n, k, lo, hi
    cdef double pos, acc, d

    with nogil:
        for n in range(n_out):
            pos = n * step
            lo = <long>ceil(pos - support)
            hi = <long>floor(pos + support)
            if lo < 0:
                lo = 0
            if hi > n_in - 1:
                hi = n_in - 1
            acc = 0.0
            for k in range(lo, hi + 1):
                d = k - pos
                acc += xv[k] * _sinc(d * cutoff) * (0.5 + 0.5 * cos(PI * d / support))
            out[n] = acc * cutoff
    return out


def frame_rms(x, long frame_len, long hop):
    """Root-mean-square energy of successive frames (trailing partial kept)."""
    cdef cnp.ndarray[cnp.float64_t, ndim=1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef long n = xv.shape[0]
    if n == 0:
        return np.zeros(0, dtype=np.float64)
    cdef long n_frames = (n + hop - 1) // hop
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(n_frames, dtype=np.float64)
    cdef long i, k, stop
    cdef double acc

    with nogil:
        for i in range(n_frames):
            stop = i * hop + frame_len
            if stop > n:
                stop = n
            acc = 0.0
            for k in range(i * hop, stop):
                acc += xv[k] * xv[k]
            out[i] = sqrt(acc / (stop - i * hop))
    return out
