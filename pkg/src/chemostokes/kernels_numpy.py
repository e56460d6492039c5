"""Vectorized numpy kernels for the staggered-grid operators and solvers.

Reference implementations. `kernels_numba` mirrors every public function
here with an njit loop version; the two must agree up to floating-point
associativity. Array conventions:

    cell scalar   (nx, ny)      value at ((i+0.5)*hx, (j+0.5)*hy)
    x-face field  (nx+1, ny)    value at (i*hx, (j+0.5)*hy)
    y-face field  (nx, ny+1)    value at ((i+0.5)*hx, j*hy)

Scalars carry homogeneous Neumann data (even reflection across walls),
velocities homogeneous Dirichlet (normal faces pinned to zero, tangential
ghosts odd-reflected).
"""

from __future__ import annotations

import numpy as np


def lap_neumann(p: np.ndarray, ihx2: float, ihy2: float) -> np.ndarray:
    """Five-point Laplacian with even-reflection (zero-flux) ghosts."""
    g = np.pad(p, 1, mode="edge")
    return (
        (g[2:, 1:-1] - 2.0 * p + g[:-2, 1:-1]) * ihx2
        + (g[1:-1, 2:] - 2.0 * p + g[1:-1, :-2]) * ihy2
    )


def grad_x(p: np.ndarray, ihx: float) -> np.ndarray:
    """x-face gradient; boundary faces zero (Neumann)."""
    nx, ny = p.shape
    g = np.zeros((nx + 1, ny))
    g[1:nx, :] = (p[1:, :] - p[:-1, :]) * ihx
    return g


def grad_y(p: np.ndarray, ihy: float) -> np.ndarray:
    nx, ny = p.shape
    g = np.zeros((nx, ny + 1))
    g[:, 1:ny] = (p[:, 1:] - p[:, :-1]) * ihy
    return g


def div_faces(fx: np.ndarray, fy: np.ndarray, ihx: float, ihy: float) -> np.ndarray:
    return (fx[1:, :] - fx[:-1, :]) * ihx + (fy[:, 1:] - fy[:, :-1]) * ihy


def lap_dirichlet_x(u: np.ndarray, ihx2: float, ihy2: float) -> np.ndarray:
    """Laplacian of an x-face field; rows 0 and nx are pinned (output zero),
    tangential walls use odd reflection (no-slip)."""
    nxp1, ny = u.shape
    out = np.zeros_like(u)
    ui = u[1:-1, :]
    ddx = (u[2:, :] - 2.0 * ui + u[:-2, :]) * ihx2
    up = np.empty_like(ui)
    dn = np.empty_like(ui)
    up[:, :-1] = ui[:, 1:]
    up[:, -1] = -ui[:, -1]
    dn[:, 1:] = ui[:, :-1]
    dn[:, 0] = -ui[:, 0]
    out[1:-1, :] = ddx + (up - 2.0 * ui + dn) * ihy2
    return out


def lap_dirichlet_y(u: np.ndarray, ihx2: float, ihy2: float) -> np.ndarray:
    nx, nyp1 = u.shape
    out = np.zeros_like(u)
    ui = u[:, 1:-1]
    ddy = (u[:, 2:] - 2.0 * ui + u[:, :-2]) * ihy2
    rt = np.empty_like(ui)
    lt = np.empty_like(ui)
    rt[:-1, :] = ui[1:, :]
    rt[-1, :] = -ui[-1, :]
    lt[1:, :] = ui[:-1, :]
    lt[0, :] = -ui[0, :]
    out[:, 1:-1] = ddy + (rt - 2.0 * ui + lt) * ihx2
    return out


def upwind_flux_div(
    vx: np.ndarray, vy: np.ndarray, p: np.ndarray, ihx: float, ihy: float
) -> np.ndarray:
    """Divergence of the first-order upwind flux v*p. Boundary-face fluxes
    are identically zero, so the cell sum of the result telescopes to zero."""
    nx, ny = p.shape
    fx = np.zeros((nx + 1, ny))
    fy = np.zeros((nx, ny + 1))
    vi = vx[1:nx, :]
    fx[1:nx, :] = np.where(vi > 0.0, vi * p[:-1, :], vi * p[1:, :])
    vj = vy[:, 1:ny]
    fy[:, 1:ny] = np.where(vj > 0.0, vj * p[:, :-1], vj * p[:, 1:])
    return div_faces(fx, fy, ihx, ihy)


def interp_cc_to_fx(p: np.ndarray) -> np.ndarray:
    """Two-point average of a cell scalar onto x-faces; boundary faces zero."""
    nx, ny = p.shape
    f = np.zeros((nx + 1, ny))
    f[1:nx, :] = 0.5 * (p[1:, :] + p[:-1, :])
    return f


def interp_cc_to_fy(p: np.ndarray) -> np.ndarray:
    nx, ny = p.shape
    f = np.zeros((nx, ny + 1))
    f[:, 1:ny] = 0.5 * (p[:, 1:] + p[:, :-1])
    return f


def gradsq_cell(fx: np.ndarray, fy: np.ndarray) -> np.ndarray:
    """Cell average of squared face values: the cell sum weighted by hx*hy
    equals the face-sum quadrature of |f|^2 exactly."""
    return 0.5 * (fx[1:, :] ** 2 + fx[:-1, :] ** 2) + 0.5 * (
        fy[:, 1:] ** 2 + fy[:, :-1] ** 2
    )


def center_vx(fx: np.ndarray) -> np.ndarray:
    return 0.5 * (fx[1:, :] + fx[:-1, :])


def center_vy(fy: np.ndarray) -> np.ndarray:
    return 0.5 * (fy[:, 1:] + fy[:, :-1])


# ---------------------------------------------------------------------------
# Conjugate-gradient solves. All return (x, iters, relres); callers decide
# whether relres > tol is fatal.
# ---------------------------------------------------------------------------


def cg_helmholtz_neumann(
    rhs: np.ndarray,
    x0: np.ndarray,
    dt: float,
    ihx2: float,
    ihy2: float,
    tol: float,
    maxiter: int,
):
    """Solve (I - dt*lap_neumann) x = rhs by conjugate gradients."""
    bnorm = np.sqrt(np.sum(rhs * rhs))
    if bnorm == 0.0:
        return np.zeros_like(rhs), 0, 0.0
    x = x0.copy()
    r = rhs - (x - dt * lap_neumann(x, ihx2, ihy2))
    p = r.copy()
    rs = np.sum(r * r)
    target2 = (tol * bnorm) ** 2
    it = 0
    while rs > target2 and it < maxiter:
        ap = p - dt * lap_neumann(p, ihx2, ihy2)
        alpha = rs / np.sum(p * ap)
        x += alpha * p
        r -= alpha * ap
        rs_new = np.sum(r * r)
        p = r + (rs_new / rs) * p
        rs = rs_new
        it += 1
    return x, it, np.sqrt(rs) / bnorm


def cg_poisson_neumann(
    rhs: np.ndarray,
    x0: np.ndarray,
    ihx2: float,
    ihy2: float,
    tol: float,
    maxiter: int,
):
    """Solve lap_neumann q = rhs on the mean-zero subspace; returns a
    mean-zero q. The rhs is centered first (compatibility)."""
    b = rhs - np.mean(rhs)
    b = -b  # CG on the positive-definite operator -lap
    bnorm = np.sqrt(np.sum(b * b))
    if bnorm == 0.0:
        return np.zeros_like(rhs), 0, 0.0
    x = x0 - np.mean(x0)
    r = b + lap_neumann(x, ihx2, ihy2)
    p = r.copy()
    rs = np.sum(r * r)
    target2 = (tol * bnorm) ** 2
    it = 0
    while rs > target2 and it < maxiter:
        ap = -lap_neumann(p, ihx2, ihy2)
        alpha = rs / np.sum(p * ap)
        x += alpha * p
        r -= alpha * ap
        rs_new = np.sum(r * r)
        p = r + (rs_new / rs) * p
        rs = rs_new
        it += 1
    x -= np.mean(x)
    return x, it, np.sqrt(rs) / bnorm


def cg_helmholtz_dirichlet_x(
    rhs: np.ndarray,
    x0: np.ndarray,
    dt: float,
    ihx2: float,
    ihy2: float,
    tol: float,
    maxiter: int,
):
    """Solve (I - dt*lap_dirichlet_x) u = rhs on interior x-faces; pinned
    rows stay zero."""
    b = rhs.copy()
    b[0, :] = 0.0
    b[-1, :] = 0.0
    bnorm = np.sqrt(np.sum(b * b))
    if bnorm == 0.0:
        return np.zeros_like(rhs), 0, 0.0
    x = x0.copy()
    x[0, :] = 0.0
    x[-1, :] = 0.0
    r = b - (x - dt * lap_dirichlet_x(x, ihx2, ihy2))
    r[0, :] = 0.0
    r[-1, :] = 0.0
    p = r.copy()
    rs = np.sum(r * r)
    target2 = (tol * bnorm) ** 2
    it = 0
    while rs > target2 and it < maxiter:
        ap = p - dt * lap_dirichlet_x(p, ihx2, ihy2)
        ap[0, :] = 0.0
        ap[-1, :] = 0.0
        alpha = rs / np.sum(p * ap)
        x += alpha * p
        r -= alpha * ap
        rs_new = np.sum(r * r)
        p = r + (rs_new / rs) * p
        rs = rs_new
        it += 1
    return x, it, np.sqrt(rs) / bnorm


def cg_helmholtz_dirichlet_y(
    rhs: np.ndarray,
    x0: np.ndarray,
    dt: float,
    ihx2: float,
    ihy2: float,
    tol: float,
    maxiter: int,
):
    b = rhs.copy()
    b[:, 0] = 0.0
    b[:, -1] = 0.0
    bnorm = np.sqrt(np.sum(b * b))
    if bnorm == 0.0:
        return np.zeros_like(rhs), 0, 0.0
    x = x0.copy()
    x[:, 0] = 0.0
    x[:, -1] = 0.0
    r = b - (x - dt * lap_dirichlet_y(x, ihx2, ihy2))
    r[:, 0] = 0.0
    r[:, -1] = 0.0
    p = r.copy()
    rs = np.sum(r * r)
    target2 = (tol * bnorm) ** 2
    it = 0
    while rs > target2 and it < maxiter:
        ap = p - dt * lap_dirichlet_y(p, ihx2, ihy2)
        ap[:, 0] = 0.0
        ap[:, -1] = 0.0
        alpha = rs / np.sum(p * ap)
        x += alpha * p
        r -= alpha * ap
        rs_new = np.sum(r * r)
        p = r + (rs_new / rs) * p
        rs = rs_new
        it += 1
    return x, it, np.sqrt(rs) / bnorm
