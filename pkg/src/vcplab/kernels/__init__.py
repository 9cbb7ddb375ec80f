"""Hot-kernel dispatch: compiled extension when available, numpy otherwise.

Set ``VCPLAB_PURE_PYTHON=1`` to force the numpy fallback (used by the
benchmark and the equivalence tests).
"""

import os

from . import _ref

if os.environ.get("VCPLAB_PURE_PYTHON"):
    _impl = _ref
else:
    try:
        from . import _fast as _impl
    except ImportError:
        _impl = _ref

IMPL_NAME = _impl.IMPL_NAME
ball_energies = _impl.ball_energies
cross_rhs = _impl.cross_rhs

__all__ = ["IMPL_NAME", "ball_energies", "cross_rhs", "_ref"]
