"""Backend dispatch for the hot numeric kernels.

``SALHASH_BACKEND=numba`` (default when numba imports) uses the jitted
kernels; ``SALHASH_BACKEND=numpy`` forces the pure-numpy path. Bilinear
upsampling always uses the numpy matrix form: it only touches one-channel
score maps and is nowhere near the hot path.

Run ``python benchmarks/bench_kernels.py`` to compare the two backends.
"""

import os

from . import _numpy
from ._numpy import upsample2x_backward, upsample2x_forward

_requested = os.environ.get("SALHASH_BACKEND", "").strip().lower()

if _requested not in ("", "numba", "numpy"):
    raise ValueError(f"SALHASH_BACKEND must be 'numba' or 'numpy', got {_requested!r}")

if _requested == "numpy":
    BACKEND = "numpy"
elif _requested == "numba":
    from . import _numba  # noqa: F401  (import error should surface: backend was explicit)

    BACKEND = "numba"
else:
    try:
        from . import _numba  # noqa: F401

        BACKEND = "numba"
    except ImportError:
        BACKEND = "numpy"

_impl = _numba if BACKEND == "numba" else _numpy

conv2d_forward = _impl.conv2d_forward
conv2d_backward = _impl.conv2d_backward
maxpool2d_forward = _impl.maxpool2d_forward
maxpool2d_backward = _impl.maxpool2d_backward
hamming_matrix = _impl.hamming_matrix

__all__ = [
    "BACKEND",
    "conv2d_forward",
    "conv2d_backward",
    "maxpool2d_forward",
    "maxpool2d_backward",
    "hamming_matrix",
    "upsample2x_forward",
    "upsample2x_backward",
]
