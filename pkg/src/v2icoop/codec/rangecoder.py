"""Range coder entry point: compiled kernel when built, pure Python otherwise.

Set ``V2ICOOP_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _rangecoder_py
from ._rangecoder_py import CorruptStreamError

_kernel = _rangecoder_py
if os.environ.get("V2ICOOP_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _rangecoder_c as _kernel
    except ImportError:
        _kernel = _rangecoder_py

BACKEND = "cython" if _kernel is not _rangecoder_py else "python"
encode = _kernel.encode
decode = _kernel.decode

__all__ = ["BACKEND", "CorruptStreamError", "decode", "encode"]
