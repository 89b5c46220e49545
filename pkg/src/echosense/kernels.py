"""Backend selection for the per-sample kernels.

The recursive loops (envelope follower, XOR ring integrator) come from the
compiled extension when it imports; set ``ECHOSENSE_PURE_PYTHON=1`` to
force the numpy fallback. FIR smoothing and threshold scans are already
vectorized library calls and always use numpy.
"""

import os

from . import _pykernels

if os.environ.get("ECHOSENSE_PURE_PYTHON", "") not in ("", "0"):
    _impl = _pykernels
    BACKEND = "python"
else:
    try:
        from . import _ckernels as _impl
        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _pykernels
        BACKEND = "python"

envelope_follow = _impl.envelope_follow
xor_integrate = _impl.xor_integrate
fir_valid = _pykernels.fir_valid
first_above = _pykernels.first_above

__all__ = ["BACKEND", "envelope_follow", "xor_integrate", "fir_valid", "first_above"]
