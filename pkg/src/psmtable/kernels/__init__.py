"""Raw-draw kernel with compiled and pure-numpy backends.

The compiled extension is preferred when it imported cleanly; set
``PSMTABLE_PURE=1`` to force the numpy fallback (used by the backend
equivalence tests and the kernel benchmark).
"""

import os

if os.environ.get("PSMTABLE_PURE"):
    from .fallback import BACKEND, raw_block
else:
    try:
        from ._kernels import BACKEND, raw_block  # type: ignore[no-redef]
    except ImportError:
        from .fallback import BACKEND, raw_block  # type: ignore[no-redef]

__all__ = ["BACKEND", "raw_block"]
