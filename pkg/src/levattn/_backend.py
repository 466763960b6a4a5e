"""Kernel backend selection.

The compiled extension is preferred; set ``LEVATTN_BACKEND=python`` to force
the numpy fallback (the benchmark and parity tests do this explicitly).
"""
import os

from levattn import _pykernels

python_kernels = _pykernels

try:
    from levattn import _ckernels as compiled_kernels
except ImportError:  # extension not built
    compiled_kernels = None

if compiled_kernels is not None and os.environ.get("LEVATTN_BACKEND", "").lower() != "python":
    kernels = compiled_kernels
    BACKEND = "cython"
else:
    kernels = _pykernels
    BACKEND = "python"
