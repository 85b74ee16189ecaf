"""Kernel backend selection.

The compiled Cython extension is preferred; a pure-numpy fallback keeps the
package functional without a build step. Override with the environment
variable LESIONBENCH_BACKEND=compiled|fallback|auto (default auto).

Both backends implement the same five functions with identical semantics:
conv2d_forward, conv2d_backward_input, conv2d_backward_kernel,
maxpool_forward, maxpool_backward. See benchmarks/bench_kernels.py for a
speed comparison.
"""

import os

from . import fallback as _fallback

_choice = os.environ.get("LESIONBENCH_BACKEND", "auto").lower()

if _choice not in ("auto", "compiled", "fallback"):
    raise RuntimeError(f"LESIONBENCH_BACKEND must be auto, compiled or fallback, got {_choice!r}")

if _choice == "fallback":
    _impl = _fallback
    BACKEND = "fallback"
else:
    try:
        from . import _convcore as _impl  # type: ignore[no-redef]

        BACKEND = "compiled"
    except ImportError:
        if _choice == "compiled":
            raise RuntimeError(
                "LESIONBENCH_BACKEND=compiled but the extension is not built; "
                "run pip install -e . --no-build-isolation"
            ) from None
        _impl = _fallback
        BACKEND = "fallback"

conv2d_forward = _impl.conv2d_forward
conv2d_backward_input = _impl.conv2d_backward_input
conv2d_backward_kernel = _impl.conv2d_backward_kernel
maxpool_forward = _impl.maxpool_forward
maxpool_backward = _impl.maxpool_backward


def backend_name() -> str:
    """Name of the kernel backend selected at import time."""
    return BACKEND
