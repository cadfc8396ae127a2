"""Kernel backend selection.

The compiled ``_ckernels`` extension is used when it imports; otherwise (or
with ``CMBA_PURE_PYTHON=1`` in the environment) the NumPy versions in
``_pykernels`` are used. ``BACKEND`` names the active choice.
"""
import os

from . import _pykernels

if os.environ.get("CMBA_PURE_PYTHON", "") not in ("", "0"):
    _impl = _pykernels
else:
    try:
        from . import _ckernels as _impl
    except ImportError:
        _impl = _pykernels

BACKEND = "cython" if _impl is not _pykernels else "python"

# the compiled clamp loses to NumPy on 8-element blocks (call overhead), so
# both modes use the NumPy one
clamp = _pykernels.clamp
project_l1_ball = _impl.project_l1_ball
dykstra_l1_box = _impl.dykstra_l1_box
swarm_step = _impl.swarm_step


def available_backends():
    """Map backend name to kernel module for every backend that imports."""
    out = {"python": _pykernels}
    try:
        from . import _ckernels
    except ImportError:
        pass
    else:
        out["cython"] = _ckernels
    return out
