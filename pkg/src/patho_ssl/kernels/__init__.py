"""Backend selection for the hot kernels.

PATHO_SSL_BACKEND chooses the implementation:

  auto   - numba if importable, else numpy (default)
  numba  - require the compiled kernels, fail if numba is missing
  numpy  - force the pure numpy fallback

The choice is made once at import time; BACKEND records which one is active.
"""

from __future__ import annotations

import os

_requested = os.environ.get("PATHO_SSL_BACKEND", "auto").strip().lower()
if _requested not in ("auto", "numba", "numpy"):
    raise RuntimeError(
        f"PATHO_SSL_BACKEND must be 'auto', 'numba' or 'numpy', got {_requested!r}"
    )

if _requested == "numpy":
    from . import numpy_impl as _impl

    BACKEND = "numpy"
else:
    try:
        from . import numba_impl as _impl

        BACKEND = "numba"
    except ImportError:
        if _requested == "numba":
            raise
        from . import numpy_impl as _impl

        BACKEND = "numpy"

value_noise_bilerp = _impl.value_noise_bilerp
rgb01_to_lab = _impl.rgb01_to_lab
lab_to_rgb01 = _impl.lab_to_rgb01
rotate_bilinear_reflect = _impl.rotate_bilinear_reflect
conv3x3_forward = _impl.conv3x3_forward
conv3x3_backward = _impl.conv3x3_backward
maxpool2_forward = _impl.maxpool2_forward
maxpool2_backward = _impl.maxpool2_backward
nn_search_other_slide = _impl.nn_search_other_slide
band_candidates = _impl.band_candidates
