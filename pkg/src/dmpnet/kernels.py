"""Backend selection for the hot kernels.

The compiled ``_ckernels`` extension is used when it imports; otherwise (or
with ``DMPNET_PURE_PYTHON=1``) the numpy fallback in ``_pykernels`` is used.
Both expose identical functions.
"""

import os

from dmpnet import _pykernels

_impl = _pykernels
BACKEND = "python"

if os.environ.get("DMPNET_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from dmpnet import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels

im2col = _impl.im2col
col2im = _impl.col2im
bilinear_fwd = _impl.bilinear_fwd
bilinear_bwd = _impl.bilinear_bwd
maxpool_fwd = _impl.maxpool_fwd
maxpool_bwd = _impl.maxpool_bwd


def get_backend(name: str):
    """Return the kernel module for ``"python"`` or ``"cython"`` explicitly."""
    if name == "python":
        return _pykernels
    if name == "cython":
        from dmpnet import _ckernels

        return _ckernels
    raise ValueError(f"unknown kernel backend {name!r}")
