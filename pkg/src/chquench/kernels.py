"""Backend selection for the hot loops.

The compiled extension is used when it imports; setting the environment
variable ``CHQUENCH_PURE_PYTHON=1`` forces the pure-Python version.
"""

import os

from . import _pgs_py

BACKEND = "python"
pgs_sweeps = _pgs_py.pgs_sweeps

if os.environ.get("CHQUENCH_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from ._pgs import pgs_sweeps  # noqa: F811
        BACKEND = "cython"
    except ImportError:  # pragma: no cover - depends on the build
        pass

__all__ = ["BACKEND", "pgs_sweeps"]
