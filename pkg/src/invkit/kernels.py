"""Backend selection for the hot loops.

The compiled extension ``invkit._kernels`` is used when it imports cleanly;
otherwise the numpy implementations in ``invkit._fallback`` are used. Set
``INVKIT_KERNELS=python`` to force the fallback.
"""

import os

from . import _fallback

BACKEND = "python"
_impl = _fallback

if os.environ.get("INVKIT_KERNELS", "").lower() != "python":
    try:
        from . import _kernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        _impl = _fallback

radon_forward = _impl.radon_forward
radon_adjoint = _impl.radon_adjoint
tv_prox = _impl.tv_prox


def get_backend(name=None):
    """Return the kernel namespace for ``name`` ('cython' or 'python')."""
    if name is None:
        return _impl
    if name == "python":
        return _fallback
    if name == "cython":
        from . import _kernels

        return _kernels
    raise ValueError(f"unknown kernel backend {name!r}")
