"""njit twins of kernels_numpy. Same signatures, same math, loop bodies
written out so the CG solves run without temporaries."""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def lap_neumann(p, ihx2, ihy2):
    nx, ny = p.shape
    out = np.empty_like(p)
    for i in range(nx):
        for j in range(ny):
            c = p[i, j]
            w = p[i - 1, j] if i > 0 else c
            e = p[i + 1, j] if i < nx - 1 else c
            s = p[i, j - 1] if j > 0 else c
            n = p[i, j + 1] if j < ny - 1 else c
            out[i, j] = (e - 2.0 * c + w) * ihx2 + (n - 2.0 * c + s) * ihy2
    return out


@njit(cache=True)
def grad_x(p, ihx):
    nx, ny = p.shape
    g = np.zeros((nx + 1, ny))
    for i in range(1, nx):
        for j in range(ny):
            g[i, j] = (p[i, j] - p[i - 1, j]) * ihx
    return g


@njit(cache=True)
def grad_y(p, ihy):
    nx, ny = p.shape
    g = np.zeros((nx, ny + 1))
    for i in range(nx):
        for j in range(1, ny):
            g[i, j] = (p[i, j] - p[i, j - 1]) * ihy
    return g


@njit(cache=True)
def div_faces(fx, fy, ihx, ihy):
    nx = fx.shape[0] - 1
    ny = fy.shape[1] - 1
    out = np.empty((nx, ny))
    for i in range(nx):
        for j in range(ny):
            out[i, j] = (fx[i + 1, j] - fx[i, j]) * ihx + (fy[i, j + 1] - fy[i, j]) * ihy
    return out


@njit(cache=True)
def lap_dirichlet_x(u, ihx2, ihy2):
    nxp1, ny = u.shape
    out = np.zeros_like(u)
    for i in range(1, nxp1 - 1):
        for j in range(ny):
            c = u[i, j]
            s = u[i, j - 1] if j > 0 else -c
            n = u[i, j + 1] if j < ny - 1 else -c
            out[i, j] = (u[i + 1, j] - 2.0 * c + u[i - 1, j]) * ihx2 + (
                n - 2.0 * c + s
            ) * ihy2
    return out


@njit(cache=True)
def lap_dirichlet_y(u, ihx2, ihy2):
    nx, nyp1 = u.shape
    out = np.zeros_like(u)
    for i in range(nx):
        for j in range(1, nyp1 - 1):
            c = u[i, j]
            w = u[i - 1, j] if i > 0 else -c
            e = u[i + 1, j] if i < nx - 1 else -c
            out[i, j] = (e - 2.0 * c + w) * ihx2 + (u[i, j + 1] - 2.0 * c + u[i, j - 1]) * ihy2
    return out


@njit(cache=True)
def upwind_flux_div(vx, vy, p, ihx, ihy):
    nx, ny = p.shape
    fx = np.zeros((nx + 1, ny))
    fy = np.zeros((nx, ny + 1))
    for i in range(1, nx):
        for j in range(ny):
            v = vx[i, j]
            fx[i, j] = v * p[i - 1, j] if v > 0.0 else v * p[i, j]
    for i in range(nx):
        for j in range(1, ny):
            v = vy[i, j]
            fy[i, j] = v * p[i, j - 1] if v > 0.0 else v * p[i, j]
    return div_faces(fx, fy, ihx, ihy)


@njit(cache=True)
def interp_cc_to_fx(p):
    nx, ny = p.shape
    f = np.zeros((nx + 1, ny))
    for i in range(1, nx):
        for j in range(ny):
            f[i, j] = 0.5 * (p[i, j] + p[i - 1, j])
    return f


@njit(cache=True)
def interp_cc_to_fy(p):
    nx, ny = p.shape
    f = np.zeros((nx, ny + 1))
    for i in range(nx):
        for j in range(1, ny):
            f[i, j] = 0.5 * (p[i, j] + p[i, j - 1])
    return f


@njit(cache=True)
def gradsq_cell(fx, fy):
    nx = fx.shape[0] - 1
    ny = fy.shape[1] - 1
    out = np.empty((nx, ny))
    for i in range(nx):
        for j in range(ny):
            out[i, j] = 0.5 * (fx[i, j] ** 2 + fx[i + 1, j] ** 2) + 0.5 * (
                fy[i, j] ** 2 + fy[i, j + 1] ** 2
            )
    return out


@njit(cache=True)
def center_vx(fx):
    nxp1, ny = fx.shape
    out = np.empty((nxp1 - 1, ny))
    for i in range(nxp1 - 1):
        for j in range(ny):
            out[i, j] = 0.5 * (fx[i, j] + fx[i + 1, j])
    return out


@njit(cache=True)
def center_vy(fy):
    nx, nyp1 = fy.shape
    out = np.empty((nx, nyp1 - 1))
    for i in range(nx):
        for j in range(nyp1 - 1):
            out[i, j] = 0.5 * (fy[i, j] + fy[i, j + 1])
    return out


@njit(cache=True)
def _dot(a, b):
    s = 0.0
    for i in range(a.shape[0]):
        for j in range(a.shape[1]):
            s += a[i, j] * b[i, j]
    return s


@njit(cache=True)
def cg_helmholtz_neumann(rhs, x0, dt, ihx2, ihy2, tol, maxiter):
    nx, ny = rhs.shape
    bnorm = np.sqrt(_dot(rhs, rhs))
    if bnorm == 0.0:
        return np.zeros_like(rhs), 0, 0.0
    x = x0.copy()
    lap = lap_neumann(x, ihx2, ihy2)
    r = np.empty_like(rhs)
    for i in range(nx):
        for j in range(ny):
            r[i, j] = rhs[i, j] - (x[i, j] - dt * lap[i, j])
    p = r.copy()
    rs = _dot(r, r)
    target2 = (tol * bnorm) ** 2
    it = 0
    while rs > target2 and it < maxiter:
        lap = lap_neumann(p, ihx2, ihy2)
        pap = 0.0
        for i in range(nx):
            for j in range(ny):
                lap[i, j] = p[i, j] - dt * lap[i, j]
                pap += p[i, j] * lap[i, j]
        alpha = rs / pap
        rs_new = 0.0
        for i in range(nx):
            for j in range(ny):
                x[i, j] += alpha * p[i, j]
                r[i, j] -= alpha * lap[i, j]
                rs_new += r[i, j] * r[i, j]
        beta = rs_new / rs
        for i in range(nx):
            for j in range(ny):
                p[i, j] = r[i, j] + beta * p[i, j]
        rs = rs_new
        it += 1
    return x, it, np.sqrt(rs) / bnorm


@njit(cache=True)
def cg_poisson_neumann(rhs, x0, ihx2, ihy2, tol, maxiter):
    nx, ny = rhs.shape
    mb = 0.0
    for i in range(nx):
        for j in range(ny):
            mb += rhs[i, j]
    mb /= nx * ny
    b = np.empty_like(rhs)
    for i in range(nx):
        for j in range(ny):
            b[i, j] = -(rhs[i, j] - mb)
    bnorm = np.sqrt(_dot(b, b))
    if bnorm == 0.0:
        return np.zeros_like(rhs), 0, 0.0
    mx = 0.0
    for i in range(nx):
        for j in range(ny):
            mx += x0[i, j]
    mx /= nx * ny
    x = np.empty_like(x0)
    for i in range(nx):
        for j in range(ny):
            x[i, j] = x0[i, j] - mx
    lap = lap_neumann(x, ihx2, ihy2)
    r = np.empty_like(b)
    for i in range(nx):
        for j in range(ny):
            r[i, j] = b[i, j] + lap[i, j]
    p = r.copy()
    rs = _dot(r, r)
    target2 = (tol * bnorm) ** 2
    it = 0
    while rs > target2 and it < maxiter:
        lap = lap_neumann(p, ihx2, ihy2)
        pap = 0.0
        for i in range(nx):
            for j in range(ny):
                lap[i, j] = -lap[i, j]
                pap += p[i, j] * lap[i, j]
        alpha = rs / pap
        rs_new = 0.0
        for i in range(nx):
            for j in range(ny):
                x[i, j] += alpha * p[i, j]
                r[i, j] -= alpha * lap[i, j]
                rs_new += r[i, j] * r[i, j]
        beta = rs_new / rs
        for i in range(nx):
            for j in range(ny):
                p[i, j] = r[i, j] + beta * p[i, j]
        rs = rs_new
        it += 1
    mx = 0.0
    for i in range(nx):
        for j in range(ny):
            mx += x[i, j]
    mx /= nx * ny
    for i in range(nx):
        for j in range(ny):
            x[i, j] -= mx
    return x, it, np.sqrt(rs) / bnorm


@njit(cache=True)
def cg_helmholtz_dirichlet_x(rhs, x0, dt, ihx2, ihy2, tol, maxiter):
    nxp1, ny = rhs.shape
    b = rhs.copy()
    for j in range(ny):
        b[0, j] = 0.0
        b[nxp1 - 1, j] = 0.0
    bnorm = np.sqrt(_dot(b, b))
    if bnorm == 0.0:
        return np.zeros_like(rhs), 0, 0.0
    x = x0.copy()
    for j in range(ny):
        x[0, j] = 0.0
        x[nxp1 - 1, j] = 0.0
    lap = lap_dirichlet_x(x, ihx2, ihy2)
    r = np.zeros_like(b)
    for i in range(1, nxp1 - 1):
        for j in range(ny):
            r[i, j] = b[i, j] - (x[i, j] - dt * lap[i, j])
    p = r.copy()
    rs = _dot(r, r)
    target2 = (tol * bnorm) ** 2
    it = 0
    while rs > target2 and it < maxiter:
        lap = lap_dirichlet_x(p, ihx2, ihy2)
        pap = 0.0
        for i in range(1, nxp1 - 1):
            for j in range(ny):
                lap[i, j] = p[i, j] - dt * lap[i, j]
                pap += p[i, j] * lap[i, j]
        alpha = rs / pap
        rs_new = 0.0
        for i in range(1, nxp1 - 1):
            for j in range(ny):
                x[i, j] += alpha * p[i, j]
                r[i, j] -= alpha * lap[i, j]
                rs_new += r[i, j] * r[i, j]
        beta = rs_new / rs
        for i in range(1, nxp1 - 1):
            for j in range(ny):
                p[i, j] = r[i, j] + beta * p[i, j]
        rs = rs_new
        it += 1
    return x, it, np.sqrt(rs) / bnorm


@njit(cache=True)
def cg_helmholtz_dirichlet_y(rhs, x0, dt, ihx2, ihy2, tol, maxiter):
    nx, nyp1 = rhs.shape
    b = rhs.copy()
    for i in range(nx):
        b[i, 0] = 0.0
        b[i, nyp1 - 1] = 0.0
    bnorm = np.sqrt(_dot(b, b))
    if bnorm == 0.0:
        return np.zeros_like(rhs), 0, 0.0
    x = x0.copy()
    for i in range(nx):
        x[i, 0] = 0.0
        x[i, nyp1 - 1] = 0.0
    lap = lap_dirichlet_y(x, ihx2, ihy2)
    r = np.zeros_like(b)
    for i in range(nx):
        for j in range(1, nyp1 - 1):
            r[i, j] = b[i, j] - (x[i, j] - dt * lap[i, j])
    p = r.copy()
    rs = _dot(r, r)
    target2 = (tol * bnorm) ** 2
    it = 0
    while rs > target2 and it < maxiter:
        lap = lap_dirichlet_y(p, ihx2, ihy2)
        pap = 0.0
        for i in range(nx):
            for j in range(1, nyp1 - 1):
                lap[i, j] = p[i, j] - dt * lap[i, j]
                pap += p[i, j] * lap[i, j]
        alpha = rs / pap
        rs_new = 0.0
        for i in range(nx):
            for j in range(1, nyp1 - 1):
                x[i, j] += alpha * p[i, j]
                r[i, j] -= alpha * lap[i, j]
                rs_new += r[i, j] * r[i, j]
        beta = rs_new / rs
        for i in range(nx):
            for j in range(1, nyp1 - 1):
                p[i, j] = r[i, j] + beta * p[i, j]
        rs = rs_new
        it += 1
    return x, it, np.sqrt(rs) / bnorm
