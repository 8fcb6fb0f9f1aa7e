"""Kernel dispatch: compiled extension when available, NumPy otherwise.

Set ``PIBIC_PURE_PYTHON=1`` to force the fallback.
"""

from __future__ import annotations

import os

from pibic import _kernels_py

if os.environ.get("PIBIC_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
else:
    try:
        from pibic import _kernels as _impl
    except ImportError:  # extension not built
        _impl = _kernels_py

BACKEND = _impl.BACKEND

log_exp_half_rowsum = _impl.log_exp_half_rowsum
nested_log_terms = _impl.nested_log_terms
order_select = _impl.order_select
running_neyman = _impl.running_neyman
star_whiten = _impl.star_whiten
star_profile_loglik = _impl.star_profile_loglik

__all__ = [
    "BACKEND",
    "log_exp_half_rowsum",
    "nested_log_terms",
    "order_select",
    "running_neyman",
    "star_whiten",
    "star_profile_loglik",
]
