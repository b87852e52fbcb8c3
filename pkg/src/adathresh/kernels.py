"""Backend selection for the hot counting kernels.

The compiled Cython extension is used when it was built; otherwise, or when
``ADATHRESH_PURE_PYTHON=1`` is set, the numpy implementation is used.
"""

import os

from . import _kernels_py

if os.environ.get("ADATHRESH_PURE_PYTHON", "") not in ("", "0"):
    _compiled = None
else:
    try:
        from . import _kernels as _compiled
    except ImportError:  # extension not built
        _compiled = None

BACKEND = "cython" if _compiled is not None else "python"
_impl = _compiled if _compiled is not None else _kernels_py

treated_counts = _impl.treated_counts
accumulate_exposure_counts = _impl.accumulate_exposure_counts
exposure_levels = _kernels_py.exposure_levels
python_backend = _kernels_py
compiled_backend = _compiled
