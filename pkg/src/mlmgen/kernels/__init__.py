"""Backend dispatch for the numeric hot kernels.

Two interchangeable implementations live here: ``numba_backend``
(compiled, default when numba is importable) and ``numpy_backend``
(pure numpy, always available).  Selection happens once at import time
via the ``MLMGEN_BACKEND`` environment variable:

* unset        — numba if it imports, else numpy
* ``numba``    — require numba, raise if unavailable
* ``numpy``    — force the pure-numpy path

``benchmarks/bench_kernels.py`` times the two side by side.
"""

from __future__ import annotations

import os

_requested = os.environ.get("MLMGEN_BACKEND", "").strip().lower()
if _requested not in ("", "numba", "numpy"):
    raise RuntimeError(
        f"MLMGEN_BACKEND must be 'numba' or 'numpy', got {_requested!r}")

if _requested == "numpy":
    from . import numpy_backend as _impl
else:
    try:
        from . import numba_backend as _impl  # type: ignore[no-redef]
    except ImportError:
        if _requested == "numba":
            raise
        from . import numpy_backend as _impl  # type: ignore[no-redef]

softmax_fwd = _impl.softmax_fwd
softmax_bwd = _impl.softmax_bwd
layernorm_fwd = _impl.layernorm_fwd
layernorm_bwd = _impl.layernorm_bwd
gelu_fwd = _impl.gelu_fwd
gelu_bwd = _impl.gelu_bwd
cross_entropy_fwd = _impl.cross_entropy_fwd
cross_entropy_bwd = _impl.cross_entropy_bwd
scatter_add_rows = _impl.scatter_add_rows
scatter_add_bias = _impl.scatter_add_bias
adamw_step = _impl.adamw_step


def backend_name() -> str:
    """Name of the active kernel backend ('numba' or 'numpy')."""
    return _impl.NAME
