"""vcplab: numerical laboratory for cross-product geometry.

Exact exterior algebra in low dimensions, the four vector cross products and
their calibration forms, grid diagnostics for conformally cross-product
preserving maps of 3-domains, and a constructive bubble-tree pipeline for
energy-concentrating map sequences.
"""

__version__ = "0.1.0"

from .kernels import IMPL_NAME as kernel_impl  # noqa: F401
