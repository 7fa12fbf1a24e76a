"""Hot numeric kernels with selectable backend.

Environment flag ``WRITEOFF_NUMBA``:
  "1"/"on"    require the numba backend (ImportError if numba is missing)
  "0"/"off"   force the pure-numpy fallback
  unset/auto  numba when importable, numpy otherwise

Both backends produce bit-identical results for integer case weights; see
``benchmarks/bench_kernels.py`` for a speed comparison.
"""

import os

_FLAG = os.environ.get("WRITEOFF_NUMBA", "auto").strip().lower()

if _FLAG in ("0", "off", "false", "no"):
    from . import numpy_impl as _impl

    BACKEND = "numpy"
elif _FLAG in ("1", "on", "true", "yes"):
    from . import numba_impl as _impl

    BACKEND = "numba"
else:
    try:
        from . import numba_impl as _impl

        BACKEND = "numba"
    except ImportError:
        from . import numpy_impl as _impl

        BACKEND = "numpy"

risk_counts = _impl.risk_counts
split_scan_numeric = _impl.split_scan_numeric
subset_scan = _impl.subset_scan

__all__ = ["BACKEND", "risk_counts", "split_scan_numeric", "subset_scan"]
