"""Hot-loop kernels with a compiled fast path.

The Cython extension is used when importable; set HARMDISK_KERNELS=numpy to
force the pure-python backend, or HARMDISK_KERNELS=cython to fail loudly if
the extension is missing.  Both backends share signatures and bit layout,
and the test suite checks them against each other.
"""

import os

from . import numpy_backend

_choice = os.environ.get("HARMDISK_KERNELS", "auto")
if _choice not in ("auto", "cython", "numpy"):
    raise ValueError("HARMDISK_KERNELS must be auto, cython or numpy")

if _choice in ("auto", "cython"):
    try:
        from . import cykernels as _impl

        BACKEND = "cython"
    except ImportError:
        if _choice == "cython":
            raise
        _impl = numpy_backend
        BACKEND = "numpy"
else:
    _impl = numpy_backend
    BACKEND = "numpy"

energy = _impl.energy
energy_gradient = _impl.energy_gradient
hessian_values = _impl.hessian_values
triangle_densities = _impl.triangle_densities
hessian_pattern = numpy_backend.hessian_pattern
