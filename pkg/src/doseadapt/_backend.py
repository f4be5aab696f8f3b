"""Kernel backend selection.

The hot numerical kernels exist twice: a Cython extension (``_kernels``) and a
behaviour-matched pure-NumPy module (``_kernels_py``). The compiled core is
preferred when importable; ``DOSEADAPT_BACKEND=python|compiled`` overrides.
"""
from __future__ import annotations

import os

_requested = os.environ.get("DOSEADAPT_BACKEND", "").strip().lower()

if _requested == "python":
    from . import _kernels_py as kernels
    backend_name = "python"
elif _requested == "compiled":
    from . import _kernels as kernels  # hard error if unavailable: user asked for it
    backend_name = "compiled"
else:
    try:
        from . import _kernels as kernels
        backend_name = "compiled"
    except ImportError:
        from . import _kernels_py as kernels
        backend_name = "python"
