"""Kernel backend selection.

The compiled extension is preferred when it imports cleanly; set
``DOMAINMOE_BACKEND=numpy`` (or ``cython``) to force a choice.  Both
backends expose the same four functions, and ``benchmarks/bench_kernels.py``
compares them head to head.
"""

import os

from . import _npkernels

_forced = os.environ.get("DOMAINMOE_BACKEND", "").lower()

if _forced == "numpy":
    kernels = _npkernels
    BACKEND = "numpy"
elif _forced == "cython":
    from . import _ckernels

    kernels = _ckernels
    BACKEND = "cython"
else:
    try:
        from . import _ckernels

        kernels = _ckernels
        BACKEND = "cython"
    except ImportError:
        kernels = _npkernels
        BACKEND = "numpy"

softmax2d = kernels.softmax2d
layer_norm_fwd = kernels.layer_norm_fwd
layer_norm_bwd = kernels.layer_norm_bwd
adam_update = kernels.adam_update
