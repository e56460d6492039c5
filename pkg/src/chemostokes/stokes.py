"""Stokes flow pieces: Helmholtz projection, one implicit velocity step,
the first eigenvalue of the projected operator, and the decay-envelope fit.

The velocity update is a Chorin splitting: implicit diffusion with the
Dirichlet Laplacian, then projection onto the discretely divergence-free
subspace through a Neumann Poisson solve. Both solves are matrix-free
conjugate gradients (relative residual below `tolerance`). The projection
is orthogonal in the face-weighted L2 inner product, so kinetic energy
never increases across it.

lambda1 is the smallest eigenvalue of the projected Dirichlet Laplacian
restricted to the solenoidal subspace, computed by inverse power iteration
in which every operator application is projected. The inner solves use a
sparse factorization of the same stencils (assembly happens once per call);
the iteration stops when the relative eigenresidual drops below `tol`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import kernels as K
from .grid import GridSpec, ScalarField, VectorField, integrate, vec_lp_norm


class SolverError(RuntimeError):
    """A linear solve failed to reach its tolerance."""


def _check_dirichlet(v: VectorField) -> None:
    if (
        np.any(v.x[0, :] != 0.0)
        or np.any(v.x[-1, :] != 0.0)
        or np.any(v.y[:, 0] != 0.0)
        or np.any(v.y[:, -1] != 0.0)
    ):
        raise ValueError("velocity field must have zero normal boundary faces")


@dataclass
class StokesSolver:
    grid: GridSpec
    tolerance: float = 1e-10
    maxiter: int = 50000
    last_pressure: ScalarField | None = field(default=None, repr=False)
    _q_warm: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self) -> None:
        if not (0.0 < self.tolerance <= 1e-6):
            raise ValueError(f"tolerance must lie in (0, 1e-6], got {self.tolerance}")

    # -- projection ---------------------------------------------------------

    def project_with_potential(
        self, v: VectorField, q0: np.ndarray | None = None
    ) -> tuple[VectorField, ScalarField]:
        """Return (P v, q) with P v = v - grad q, mean q = 0, and the
        divergence of P v below `tolerance` at every cell (the residual of
        the Poisson solve IS that divergence, so the stop criterion is
        absolute once the right side exceeds unit norm)."""
        _check_dirichlet(v)
        g = self.grid
        rhs = K.div_faces(v.x, v.y, 1.0 / g.hx, 1.0 / g.hy)
        x0 = q0 if q0 is not None else np.zeros_like(rhs)
        bnorm = float(np.linalg.norm(rhs))
        rel = self.tolerance if bnorm <= 1.0 else self.tolerance / bnorm
        q, _, relres = K.cg_poisson_neumann(
            rhs, x0, 1.0 / g.hx**2, 1.0 / g.hy**2, rel, self.maxiter
        )
        if relres > rel:
            raise SolverError(f"projection Poisson solve stalled at relres={relres:.3e}")
        out = VectorField(
            g,
            v.x - K.grad_x(q, 1.0 / g.hx),
            v.y - K.grad_y(q, 1.0 / g.hy),
        )
        return out, ScalarField(g, q)

    def project(self, v: VectorField) -> VectorField:
        return self.project_with_potential(v)[0]

    # -- one implicit Euler step --------------------------------------------

    def stokes_step(
        self, u: VectorField, n: ScalarField, phi: ScalarField, dt: float
    ) -> VectorField:
        """(I - dt lap_D) u* = u + dt (n grad phi)|faces, then project.

        The buoyancy force interpolates n to faces by two-point averaging.
        The new pressure (projection potential divided by dt, mean zero) is
        stored on `last_pressure`.
        """
        if dt <= 0.0:
            raise ValueError("dt must be positive")
        _check_dirichlet(u)
        g = self.grid
        gpx = K.grad_x(phi.values, 1.0 / g.hx)
        gpy = K.grad_y(phi.values, 1.0 / g.hy)
        fx = K.interp_cc_to_fx(n.values) * gpx
        fy = K.interp_cc_to_fy(n.values) * gpy
        ihx2, ihy2 = 1.0 / g.hx**2, 1.0 / g.hy**2
        sx, itx, rx = K.cg_helmholtz_dirichlet_x(
            u.x + dt * fx, u.x, dt, ihx2, ihy2, self.tolerance, self.maxiter
        )
        sy, ity, ry = K.cg_helmholtz_dirichlet_y(
            u.y + dt * fy, u.y, dt, ihx2, ihy2, self.tolerance, self.maxiter
        )
        if rx > self.tolerance or ry > self.tolerance:
            raise SolverError(f"velocity Helmholtz solve stalled ({rx:.3e}, {ry:.3e})")
        star = VectorField(g, sx, sy)
        out, q = self.project_with_potential(star, self._q_warm)
        self._q_warm = q.values.copy()
        self.last_pressure = ScalarField(g, q.values / dt)
        return out


# ---------------------------------------------------------------------------
# Sparse assembly for the eigenvalue extraction. Simulation stays matrix
# free; here a one-off factorization keeps the nested iteration cheap.
# ---------------------------------------------------------------------------


def _difference_matrix(n: int) -> sp.csr_matrix:
    """n x (n-1) incidence: (D u)_i = u_i - u_{i-1} with zero walls."""
    d = sp.lil_matrix((n, n - 1))
    for i in range(n):
        if i <= n - 2:
            d[i, i] = 1.0
        if i >= 1:
            d[i, i - 1] = -1.0
    return d.tocsr()


def _tridiag(n: int, wall_diag: float) -> sp.csr_matrix:
    """1d operator -d^2/ds^2 (unit spacing): 2 on the diagonal, -1 off,
    with `wall_diag` on the first/last diagonal entries."""
    main = np.full(n, 2.0)
    main[0] = wall_diag
    main[-1] = wall_diag
    off = np.full(n - 1, -1.0)
    return sp.diags([off, main, off], [-1, 0, 1]).tocsr()


def _assemble(grid: GridSpec):
    nx, ny, hx, hy = grid.nx, grid.ny, grid.hx, grid.hy
    ix = sp.identity(nx)
    iy = sp.identity(ny)
    # divergence: cells x faces (interior faces only)
    dx = sp.kron(_difference_matrix(nx), iy) / hx
    dy = sp.kron(ix, _difference_matrix(ny)) / hy
    div = sp.hstack([dx, dy]).tocsr()
    grad = (-div.T).tocsr()
    # Dirichlet vector Laplacian (positive definite): interior x-faces see
    # zero walls along x and odd-reflected ghosts along y, and vice versa.
    kxx = sp.kron(_tridiag(nx - 1, 2.0), iy) / hx**2 + sp.kron(
        sp.identity(nx - 1), _tridiag(ny, 3.0)
    ) / hy**2
    kyy = sp.kron(_tridiag(nx, 3.0), sp.identity(ny - 1)) / hx**2 + sp.kron(
        ix, _tridiag(ny - 1, 2.0)
    ) / hy**2
    kmat = sp.block_diag([kxx, kyy]).tocsr()
    # pinned Neumann Poisson operator (-lap with one diagonal bump): for a
    # zero-sum rhs the bump selects the solution with q[0] = 0 exactly
    amat = (div @ div.T).tolil()
    amat[0, 0] += 1.0
    return div, grad, kmat, amat.tocsc()


def lambda1(grid: GridSpec, tol: float = 1e-8, maxiter: int = 500, seed: int = 0) -> float:
    """First eigenvalue of the projected Dirichlet Laplacian on solenoidal
    fields, by projected inverse power iteration (relative eigenresidual
    below tol)."""
    div, grad, kmat, amat = _assemble(grid)
    lu_a = spla.splu(amat)
    lu_k = spla.splu(kmat.tocsc())

    def proj(v: np.ndarray) -> np.ndarray:
        # amat is the NEGATIVE Neumann Laplacian (pinned), so the potential
        # solves amat q = div v and the correction enters with a plus sign
        return v + grad @ lu_a.solve(div @ v)

    def a_s(v: np.ndarray) -> np.ndarray:
        return proj(kmat @ proj(v))

    def m_inv(v: np.ndarray) -> np.ndarray:
        return proj(lu_k.solve(proj(v)))

    def inner_solve(b: np.ndarray, x0: np.ndarray, rtol: float) -> np.ndarray:
        # preconditioned CG on the projected operator
        x = x0.copy()
        r = b - a_s(x)
        z = m_inv(r)
        p = z.copy()
        rz = float(r @ z)
        bnorm = float(np.linalg.norm(b))
        for _ in range(400):
            if np.linalg.norm(r) <= rtol * bnorm:
                break
            ap = a_s(p)
            alpha = rz / float(p @ ap)
            x += alpha * p
            r -= alpha * ap
            z = m_inv(r)
            rz_new = float(r @ z)
            p = z + (rz_new / rz) * p
            rz = rz_new
        return x

    rng = np.random.default_rng(seed)
    v = proj(rng.standard_normal(div.shape[1]))
    v /= np.linalg.norm(v)
    lam = float(v @ a_s(v))
    for _ in range(maxiter):
        w = inner_solve(v, v / lam, 1e-12)
        w = proj(w)
        v = w / np.linalg.norm(w)
        av = a_s(v)
        lam = float(v @ av)
        res = float(np.linalg.norm(av - lam * v))
        if res <= tol * abs(lam):
            return lam
    raise SolverError(f"eigenvalue iteration did not converge (last residual {res:.3e})")


def solenoidal_noise(grid: GridSpec, rng: np.random.Generator,
                     amplitude: float = 1.0, modes: int = 3) -> VectorField:
    """Random exactly-divergence-free velocity from a low-mode stream
    function vanishing on the boundary corners. Normal faces are zero by
    construction and the discrete divergence telescopes to zero at every
    cell in exact arithmetic."""
    xs = np.linspace(0.0, grid.lx, grid.nx + 1)
    ys = np.linspace(0.0, grid.ly, grid.ny + 1)
    psi = np.zeros((grid.nx + 1, grid.ny + 1))
    for j in range(1, modes + 1):
        sx = np.sin(j * np.pi * xs / grid.lx)
        for k in range(1, modes + 1):
            sy = np.sin(k * np.pi * ys / grid.ly)
            psi += rng.standard_normal() * np.outer(sx, sy)
    psi *= amplitude
    # sin(j pi) is only zero to rounding; the walls must be exact
    psi[0, :] = psi[-1, :] = 0.0
    psi[:, 0] = psi[:, -1] = 0.0
    ux = (psi[:, 1:] - psi[:, :-1]) / grid.hy
    uy = -(psi[1:, :] - psi[:-1, :]) / grid.hx
    return VectorField(grid, ux, uy)


# ---------------------------------------------------------------------------
# Decay-envelope constant
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DecayTrial:
    """One velocity trajectory: L4 norms sampled in time, together with the
    time-t0 norm and the mass bound L feeding the envelope."""

    t0: float
    l4_u0: float
    bound_l: float
    times: np.ndarray
    l4_u: np.ndarray


def fit_ku(trials, lam1: float) -> float:
    """Smallest K >= 1 with  |u(t)|_L4 <= K (exp(-lam1 (t-t0)) |u(t0)|_L4 + L)
    across every sample of every trial."""
    k = 1.0
    for tr in trials:
        denom = np.exp(-lam1 * (np.asarray(tr.times) - tr.t0)) * tr.l4_u0 + tr.bound_l
        vals = np.asarray(tr.l4_u)
        ok = denom > 0.0
        if np.any(~ok & (vals > 0.0)):
            raise ValueError("trial has positive norm against a zero envelope")
        if np.any(ok):
            k = max(k, float(np.max(vals[ok] / denom[ok])))
    return k


def l4_trial_from_run(solver: StokesSolver, u0: VectorField, n: ScalarField,
                      phi: ScalarField, dt: float, steps: int,
                      sample_every: int = 1) -> DecayTrial:
    """Integrate the pure Stokes dynamics (fixed n forcing) and collect the
    L4 trace used by fit_ku."""
    u = u0.copy()
    times = [0.0]
    norms = [vec_lp_norm(u, 4.0)]
    bound_l = integrate(ScalarField(n.grid, np.abs(n.values)))
    for k in range(1, steps + 1):
        u = solver.stokes_step(u, n, phi, dt)
        if k % sample_every == 0:
            times.append(k * dt)
            norms.append(vec_lp_norm(u, 4.0))
    return DecayTrial(0.0, norms[0], bound_l, np.array(times), np.array(norms))
