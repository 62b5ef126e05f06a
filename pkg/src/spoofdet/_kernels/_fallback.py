"""Numpy implementations of the preprocessing kernels.

Used when the compiled extension is unavailable. Same algorithm as the
Cython version: direct evaluation of a Hann-windowed sinc filter at
fractional positions, chunked so the tap matrices stay small.
"""

import numpy as np

# Output rows processed per chunk; bounds the (rows x taps) scratch arrays.
_CHUNK = 32768


def resample_sinc(x, src_rate, dst_rate, zeros=32):
    """Band-limited resampling of a 1-D float64 signal.

    Output length is round(len(x) * dst_rate / src_rate). The anti-alias
    cutoff is min(1, dst/src) of the source Nyquist, so downsampling is
    properly filtered.
    """
    x = np.asarray(x, dtype=np.float64)
    n_in = x.shape[0]
    # Half-up rounding, kept identical in the compiled twin.
    n_out = int(np.floor(n_in * dst_rate / src_rate + 0.5))
    if n_out <= 0:
        return np.zeros(0, dtype=np.float64)

    ratio = dst_rate / src_rate
    cutoff = min(1.0, ratio)
    support = zeros / cutoff
    out = np.empty(n_out, dtype=np.float64)

    for start in range(0, n_out, _CHUNK):
        stop = min(start + _CHUNK, n_out)
        n = np.arange(start, stop, dtype=np.float64)
        pos = n * (src_rate / dst_rate)
        lo = np.ceil(pos - support).astype(np.int64)
        # Tap index grid, clipped to the valid sample range.
        k = lo[:, None] + np.arange(int(2 * support) + 2, dtype=np.int64)[None, :]
        valid = (k >= 0) & (k < n_in)
        kc = np.clip(k, 0, n_in - 1)
        d = k.astype(np.float64) - pos[:, None]
        w = np.sinc(d * cutoff) * (0.5 + 0.5 * np.cos(np.pi * d / support))
        w[np.abs(d) >= support] = 0.0
        w[~valid] = 0.0
        out[start:stop] = cutoff * np.einsum("ij,ij->i", w, x[kc])
    return out


def frame_rms(x, frame_len, hop):
    """Root-mean-square energy of successive frames.

    A trailing partial frame (at least one sample) becomes a final frame of
    its own, so every sample belongs to some frame.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    if n == 0:
        return np.zeros(0, dtype=np.float64)
    n_frames = (n + hop - 1) // hop
    out = np.empty(n_frames, dtype=np.float64)
    for i in range(n_frames):
        seg = x[i * hop : i * hop + frame_len]
        out[i] = np.sqrt(np.mean(seg * seg))
    return out
