"""Kernel backend selection.

The compiled extension is used when it imports; otherwise the numpy
fallback takes over. Set ``ECSGD_PURE_PYTHON=1`` to force the fallback.
Both backends produce bit-identical output.
"""

import importlib
import os

from . import _pykernels

KERNEL_NAMES = (
    "philox_block",
    "philox_uniform",
    "topk_indices",
    "sign_bits",
    "ternary_codes",
    "quantize_codes",
    "clip_low_bits",
)


def load_backend(name):
    """Return the kernel module for ``name`` ('cython' or 'python')."""
    if name == "python":
        return _pykernels
    if name == "cython":
        return importlib.import_module("ecsgd._ckernels")
    raise ValueError(f"unknown kernel backend {name!r}")


def available_backends():
    names = ["python"]
    try:
        load_backend("cython")
    except ImportError:
        pass
    else:
        names.insert(0, "cython")
    return names


def _select():
    if os.environ.get("ECSGD_PURE_PYTHON", "").strip() not in ("", "0"):
        return "python", _pykernels
    try:
        return "cython", load_backend("cython")
    except ImportError:
        return "python", _pykernels


BACKEND, _impl = _select()

philox_block = _impl.philox_block
philox_uniform = _impl.philox_uniform
topk_indices = _impl.topk_indices
sign_bits = _impl.sign_bits
ternary_codes = _impl.ternary_codes
quantize_codes = _impl.quantize_codes
clip_low_bits = _impl.clip_low_bits
