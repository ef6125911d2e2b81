"""Kernel backend selection.

The compiled extension is used when it was built; ``RBPF_BACKEND=python``
forces the numpy fallback.
"""

import os

if os.environ.get("RBPF_BACKEND", "").lower() == "python":
    from rbpf import _pykernels as kernels
else:
    try:
        from rbpf import _kernels as kernels
    except ImportError:  # extension not built
        from rbpf import _pykernels as kernels

BACKEND = kernels.BACKEND
