"""Backend selection for the per-pulse kernels.

The compiled Cython module is used when it was built; otherwise the numpy
implementation is. Set ``TWINQE_BACKEND=python`` to force the fallback.
"""
import os

from . import _pykernel

try:
    from . import _ckernel
except ImportError:  # extension not built
    _ckernel = None

_BACKENDS = {"python": _pykernel}
if _ckernel is not None:
    _BACKENDS["cython"] = _ckernel


def available_backends():
    return sorted(_BACKENDS)


def get_backend(name=None):
    """Return the kernel module called ``name`` (default: the active one)."""
    if name is None:
        return active
    try:
        return _BACKENDS[name]
    except KeyError:
        raise ValueError(f"unknown or unavailable kernel backend {name!r}; have {available_backends()}") from None


_requested = os.environ.get("TWINQE_BACKEND")
if _requested:
    active = get_backend(_requested)
else:
    active = _ckernel if _ckernel is not None else _pykernel

BACKEND = active.BACKEND
