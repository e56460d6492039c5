"""Kernel backend selection.

CHEMOSTOKES_BACKEND=numpy forces the vectorized fallback, =numba forces the
jitted path (ImportError if numba is missing). Default "auto" prefers numba
and falls back silently. The choice is made once at import time.
"""

from __future__ import annotations

import os

_requested = os.environ.get("CHEMOSTOKES_BACKEND", "auto").strip().lower()
if _requested not in ("auto", "numba", "numpy"):
    raise RuntimeError(
        f"CHEMOSTOKES_BACKEND must be auto, numba or numpy, got {_requested!r}"
    )

if _requested == "numpy":
    from . import kernels_numpy as _impl

    BACKEND = "numpy"
else:
    try:
        from . import kernels_numba as _impl

        BACKEND = "numba"
    except ImportError:
        if _requested == "numba":
            raise
        from . import kernels_numpy as _impl

        BACKEND = "numpy"


def active_backend() -> str:
    return BACKEND


lap_neumann = _impl.lap_neumann
grad_x = _impl.grad_x
grad_y = _impl.grad_y
div_faces = _impl.div_faces
lap_dirichlet_x = _impl.lap_dirichlet_x
lap_dirichlet_y = _impl.lap_dirichlet_y
upwind_flux_div = _impl.upwind_flux_div
interp_cc_to_fx = _impl.interp_cc_to_fx
interp_cc_to_fy = _impl.interp_cc_to_fy
gradsq_cell = _impl.gradsq_cell
center_vx = _impl.center_vx
center_vy = _impl.center_vy
cg_helmholtz_neumann = _impl.cg_helmholtz_neumann
cg_poisson_neumann = _impl.cg_poisson_neumann
cg_helmholtz_dirichlet_x = _impl.cg_helmholtz_dirichlet_x
cg_helmholtz_dirichlet_y = _impl.cg_helmholtz_dirichlet_y
