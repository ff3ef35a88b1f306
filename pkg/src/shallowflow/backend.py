"""Select the kernel backend: compiled extension if available, else pure Python.

Set ``SHALLOWFLOW_PURE_PYTHON=1`` to force the fallback (used by the tests and
the benchmark to compare both implementations).
"""

import os

if os.environ.get("SHALLOWFLOW_PURE_PYTHON", "") == "1":
    from . import _kernels_py as kernels
else:
    try:
        from . import _kernels as kernels  # type: ignore[attr-defined]
    except ImportError:
        from . import _kernels_py as kernels

COMPILED = kernels.COMPILED
