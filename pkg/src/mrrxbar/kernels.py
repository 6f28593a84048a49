"""Kernel selection: compiled extension when importable, numpy otherwise.

Set ``MRRXBAR_PURE_PYTHON=1`` to force the numpy path.
"""

import os

from . import _kernels_py

IMPLEMENTATIONS = {"python": _kernels_py}

try:
    from . import _kernels as _kernels_cy
except ImportError:  # extension not built
    _kernels_cy = None
else:
    IMPLEMENTATIONS["cython"] = _kernels_cy

if _kernels_cy is not None and not os.environ.get("MRRXBAR_PURE_PYTHON"):
    impl = _kernels_cy
    BACKEND = "cython"
else:
    impl = _kernels_py
    BACKEND = "python"

effective_phases = impl.effective_phases
leak_tensor = impl.leak_tensor
leak_sum = impl.leak_sum
invert_drop = impl.invert_drop
program_loop = impl.program_loop
wrap_phase = impl.wrap_phase
