"""Kernel backend selection: compiled extension with NumPy fallback.

Set CLOZETAG_PURE_PYTHON=1 to force the fallback (used by the benchmark
and by CI environments without a C compiler).
"""

from __future__ import annotations

import os

if os.environ.get("CLOZETAG_PURE_PYTHON"):
    from . import _pykernels as _impl
else:
    try:
        from . import _ckernels as _impl  # type: ignore[attr-defined]
    except ImportError:
        from . import _pykernels as _impl

BACKEND: str = _impl.BACKEND_NAME

csr_logits = _impl.csr_logits
csr_grad = _impl.csr_grad
csr_step = _impl.csr_step


def available_backends() -> dict[str, object]:
    """Importable kernel modules by name (for benchmarks and tests)."""
    from . import _pykernels

    found: dict[str, object] = {"python": _pykernels}
    try:
        from . import _ckernels  # type: ignore[attr-defined]

        found["cython"] = _ckernels
    except ImportError:
        pass
    return found
