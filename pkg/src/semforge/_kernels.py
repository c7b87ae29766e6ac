"""Kernel selection: compiled coordinate descent when built, pure Python otherwise.

Set ``SEMFORGE_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _cd_py

try:
    if os.environ.get("SEMFORGE_PURE_PYTHON", "") not in ("", "0"):
        raise ImportError("pure-Python kernel requested")
    from . import _cd_fast
except ImportError:
    _cd_fast = None

if _cd_fast is not None:
    cd_gram = _cd_fast.cd_gram
    BACKEND = "cython"
else:
    cd_gram = _cd_py.cd_gram
    BACKEND = "python"

KERNELS = {"python": _cd_py.cd_gram}
if _cd_fast is not None:
    KERNELS["cython"] = _cd_fast.cd_gram
