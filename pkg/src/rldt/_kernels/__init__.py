"""Kernel backend selection.

The compiled extension is used when it imports cleanly; otherwise the numpy
fallback takes over.  Set ``RLDT_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import fallback

if os.environ.get("RLDT_PURE_PYTHON"):
    impl = fallback
else:
    try:
        from . import _core as impl  # type: ignore[no-redef]
    except ImportError:
        impl = fallback

BACKEND = impl.BACKEND
layernorm_fwd = impl.layernorm_fwd
layernorm_bwd = impl.layernorm_bwd
attn_fwd = impl.attn_fwd
attn_bwd = impl.attn_bwd
adam_update = impl.adam_update
