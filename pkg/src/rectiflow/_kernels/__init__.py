"""Backend selection for the convolution hot loops.

The compiled Cython kernels are used when the extension built; otherwise the
numpy fallback takes over. Set ``RECTIFLOW_FORCE_FALLBACK=1`` to force the
fallback (used by the kernel benchmark and parity tests).
"""

import os

from . import numpy_ops

if os.environ.get("RECTIFLOW_FORCE_FALLBACK") == "1":
    _impl = numpy_ops
else:
    try:
        from . import _convcy as _impl
    except ImportError:
        _impl = numpy_ops

BACKEND = _impl.BACKEND
im2col = _impl.im2col
col2im = _impl.col2im


def get_backends():
    """Return {name: module} for every backend importable on this machine."""
    backends = {"numpy": numpy_ops}
    try:
        from . import _convcy
        backends["cython"] = _convcy
    except ImportError:
        pass
    return backends
