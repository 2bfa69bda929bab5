"""Hot counting kernels, compiled when available.

The Cython build (``dpproofs._ckernels``) is preferred; the numpy fallback in
``dpproofs._kernels_py`` is used when the extension was not built. Set
``DPPROOFS_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if not os.environ.get("DPPROOFS_PURE_PYTHON"):
    try:
        from . import _ckernels as _impl  # noqa: F811
        BACKEND = "cython"
    except ImportError:
        pass

element_counts = _impl.element_counts
max_count = _impl.max_count
max_multiplicity = _impl.max_multiplicity
binned_collisions = _impl.binned_collisions
tv_to_reference = _impl.tv_to_reference
tv_two_sample = _impl.tv_two_sample

__all__ = [
    "BACKEND",
    "element_counts",
    "max_count",
    "max_multiplicity",
    "binned_collisions",
    "tv_to_reference",
    "tv_two_sample",
]
