"""Hot loops: compiled when the extension is built, pure Python otherwise.

Set ``TOPICFLOW_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _pykernels as python

compiled = None
if os.environ.get("TOPICFLOW_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as compiled
    except ImportError:
        compiled = None

_impl = compiled if compiled is not None else python
BACKEND = "cython" if compiled is not None else "python"

lcs_length = _impl.lcs_length
window_cooccurrence = _impl.window_cooccurrence

__all__ = ["BACKEND", "compiled", "lcs_length", "python", "window_cooccurrence"]
