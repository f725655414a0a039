"""Hot sequential loops: closed-loop simulation and the relay scan.

The compiled extension ``_core`` is used when it was built; otherwise the
pure-Python twin in ``_fallback`` is loaded. Set ``PGNNFF_PURE_PYTHON=1`` to
force the fallback. Both produce bit-identical results.
"""

import os

from . import _fallback

BACKEND = "python"

if os.environ.get("PGNNFF_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _core as _impl
        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _fallback
else:
    _impl = _fallback

quantize = _impl.quantize
parasitic_torque = _impl.parasitic_torque
relay_scan = _impl.relay_scan
simulate = _impl.simulate

__all__ = ["BACKEND", "quantize", "parasitic_torque", "relay_scan", "simulate", "_fallback"]
