"""Selects the compiled kernels when available, pure Python otherwise."""

from __future__ import annotations

try:  # pragma: no cover - exercised indirectly by the kernel parity tests
    from psgmt import _speedups as _impl

    BACKEND = "cython"
except ImportError:  # pragma: no cover
    from psgmt import _kernels_py as _impl

    BACKEND = "python"

pair_counts = _impl.pair_counts
apply_merge = _impl.apply_merge
gcn_coefficients = _impl.gcn_coefficients
