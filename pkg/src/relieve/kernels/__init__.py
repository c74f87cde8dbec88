"""Hot numeric kernels with a numba backend and a pure-numpy fallback.

Backend selection, checked once at import:

- ``RELIEVE_BACKEND=numba``  force the numba JIT kernels (error if missing)
- ``RELIEVE_BACKEND=numpy``  force the vectorized numpy fallback
- unset / ``auto``           numba when importable, else numpy

``benchmarks/bench_kernels.py`` compares the two paths on realistic sizes.
"""

from __future__ import annotations

import os

from . import _numpy

_FLAG = os.environ.get("RELIEVE_BACKEND", "auto").strip().lower()

if _FLAG in ("", "auto"):
    try:
        from . import _numba as _impl

        BACKEND = "numba"
    except ImportError:
        _impl = _numpy
        BACKEND = "numpy"
elif _FLAG == "numba":
    from . import _numba as _impl

    BACKEND = "numba"
elif _FLAG == "numpy":
    _impl = _numpy
    BACKEND = "numpy"
else:
    raise RuntimeError(f"unknown RELIEVE_BACKEND={_FLAG!r} (use 'numba' or 'numpy')")

bilinear_gather = _impl.bilinear_gather
bilinear_scatter = _impl.bilinear_scatter
upsample_apply = _impl.upsample_apply
upsample_adjoint = _impl.upsample_adjoint
reg_terms = _impl.reg_terms
depth_loss_terms = _impl.depth_loss_terms


def warmup() -> None:
    """Trigger JIT compilation up front (no-op on the numpy backend)."""
    if BACKEND == "numba":
        _impl.warmup()
