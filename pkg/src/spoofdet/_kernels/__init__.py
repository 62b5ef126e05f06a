"""Hot preprocessing kernels with a compiled core and a numpy fallback.

The compiled extension is preferred when the package was built with
Cython; otherwise the numpy implementations are used. ``BACKEND`` reports
which one is active. ``benchmarks/bench_kernels.py`` compares the two.
"""

from spoofdet._kernels import _fallback

try:
    from spoofdet._kernels import _speedups as _impl

    BACKEND = "cython"
except ImportError:  # pragma: no cover - depends on how the wheel was built
    _impl = _fallback
    BACKEND = "numpy"

resample_sinc = _impl.resample_sinc
frame_rms = _impl.frame_rms

__all__ = ["BACKEND", "resample_sinc", "frame_rms"]
