"""Kernel backend selection: compiled extension if available, numpy otherwise.

Set DECPG_NO_EXT=1 to force the pure-numpy path (used by the kernel
benchmark and as an escape hatch on platforms where the build failed).
"""

import os

if os.environ.get("DECPG_NO_EXT"):
    from . import _speedups_py as kernels

    HAS_EXT = False
else:
    try:
        from . import _speedups as kernels  # type: ignore[no-redef]

        HAS_EXT = True
    except ImportError:
        from . import _speedups_py as kernels  # type: ignore[no-redef]

        HAS_EXT = False

linear_forward = kernels.linear_forward
linear_relu_forward = kernels.linear_relu_forward
linear_backward = kernels.linear_backward
linear_backward_masked = kernels.linear_backward_masked
relu = kernels.relu
relu_backward = kernels.relu_backward
rmsprop_step = kernels.rmsprop_step
