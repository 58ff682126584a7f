"""Hot-kernel backend selection.

The compiled extension is preferred when importable; set CYCLEX_KERNELS to
"numpy" or "cython" to force a backend (the latter raises if the extension
was not built).
"""

from __future__ import annotations

import os

from . import fallback as _fallback

_choice = os.environ.get("CYCLEX_KERNELS", "auto").lower()

if _choice not in ("auto", "cython", "numpy"):
    raise ValueError(f"CYCLEX_KERNELS must be auto, cython or numpy, got {_choice!r}")

if _choice == "numpy":
    _impl = _fallback
else:
    try:
        from . import _corek as _impl  # type: ignore[no-redef]
    except ImportError:
        if _choice == "cython":
            raise ImportError(
                "CYCLEX_KERNELS=cython but the compiled extension is not built; "
                "run `pip install -e .` or `python setup.py build_ext --inplace`"
            ) from None
        _impl = _fallback

conv2d_forward = _impl.conv2d_forward
conv2d_backward = _impl.conv2d_backward
blur_separable = _impl.blur_separable
label_components = _impl.label_components


def backend_name() -> str:
    return _impl.BACKEND
