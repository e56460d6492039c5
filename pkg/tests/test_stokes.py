import numpy as np
import pytest

from chemostokes.grid import (
    GridSpec,
    ScalarField,
    VectorField,
    constant,
    divergence,
    gradient,
    vec_l2_norm_sq,
    vec_lp_norm,
    zero_vector,
)
from chemostokes.stokes import (
    DecayTrial,
    SolverError,
    StokesSolver,
    fit_ku,
    l4_trial_from_run,
    lambda1,
    solenoidal_noise,
)

# Stokes eigenvalue of the unit square (continuum), used as the target of
# Richardson extrapolation below.
LAMBDA1_UNIT_SQUARE = 52.3447


def noise_field(grid, seed=0, amplitude=1.0):
    return solenoidal_noise(grid, np.random.default_rng(seed), amplitude=amplitude)


def rough_velocity(grid, seed=1):
    rng = np.random.default_rng(seed)
    ux = rng.standard_normal((grid.nx + 1, grid.ny))
    uy = rng.standard_normal((grid.nx, grid.ny + 1))
    ux[0, :] = ux[-1, :] = 0.0
    uy[:, 0] = uy[:, -1] = 0.0
    return VectorField(grid, ux, uy)


def test_projection_divergence_below_tolerance():
    g = GridSpec(24, 18, 1.0, 0.8)
    solver = StokesSolver(g, tolerance=1e-10)
    pu = solver.project(rough_velocity(g))
    assert np.max(np.abs(divergence(pu).values)) <= 1e-9


def test_projection_idempotent_and_orthogonal():
    g = GridSpec(16, 16, 1.0, 1.0)
    solver = StokesSolver(g, tolerance=1e-12)
    u = rough_velocity(g, seed=4)
    pu = solver.project(u)
    ppu = solver.project(pu)
    assert np.max(np.abs(ppu.x - pu.x)) < 1e-8
    assert np.max(np.abs(ppu.y - pu.y)) < 1e-8
    # removed part is face-orthogonal to the result
    rx, ry = u.x - pu.x, u.y - pu.y
    ip = (np.sum(rx * pu.x) + np.sum(ry * pu.y)) * g.cell_area
    assert abs(ip) < 1e-9
    # energy splits accordingly
    assert vec_l2_norm_sq(u) == pytest.approx(
        vec_l2_norm_sq(pu) + (np.sum(rx**2) + np.sum(ry**2)) * g.cell_area,
        rel=1e-8,
    )


def test_projection_kills_gradients():
    g = GridSpec(20, 20, 1.0, 1.0)
    solver = StokesSolver(g, tolerance=1e-12)
    rng = np.random.default_rng(7)
    p = ScalarField(g, rng.standard_normal((20, 20)))
    gp = gradient(p)
    out = solver.project(gp)
    scale = max(np.max(np.abs(gp.x)), np.max(np.abs(gp.y)))
    assert np.max(np.abs(out.x)) < 1e-8 * scale
    assert np.max(np.abs(out.y)) < 1e-8 * scale


def test_projection_fixes_solenoidal_fields():
    g = GridSpec(16, 16, 1.0, 1.0)
    solver = StokesSolver(g, tolerance=1e-12)
    u = noise_field(g, seed=3)
    pu = solver.project(u)
    assert np.max(np.abs(pu.x - u.x)) < 1e-9
    assert np.max(np.abs(pu.y - u.y)) < 1e-9


def test_stokes_step_requires_wall_zeros():
    g = GridSpec(8, 8, 1.0, 1.0)
    solver = StokesSolver(g)
    ux = np.zeros((9, 8))
    ux[0, 2] = 1.0
    bad = VectorField(g, ux, np.zeros((8, 9)))
    with pytest.raises(ValueError):
        solver.stokes_step(bad, constant(g, 0.0), constant(g, 0.0), 1e-3)


def test_stokes_step_decays_and_keeps_walls():
    g = GridSpec(16, 16, 1.0, 1.0)
    solver = StokesSolver(g)
    u = noise_field(g, seed=2)
    zero = constant(g, 0.0)
    e_prev = vec_l2_norm_sq(u)
    for _ in range(5):
        u = solver.stokes_step(u, zero, zero, 2e-3)
        e = vec_l2_norm_sq(u)
        assert e < e_prev
        e_prev = e
    assert np.all(u.x[0, :] == 0.0) and np.all(u.x[-1, :] == 0.0)
    assert np.all(u.y[:, 0] == 0.0) and np.all(u.y[:, -1] == 0.0)
    assert solver.last_pressure is not None
    assert abs(np.mean(solver.last_pressure.values)) < 1e-12 * (
        1.0 + np.max(np.abs(solver.last_pressure.values))
    )


def test_solver_error_on_starved_iterations():
    g = GridSpec(32, 32, 1.0, 1.0)
    solver = StokesSolver(g, tolerance=1e-12, maxiter=2)
    with pytest.raises(SolverError):
        solver.project(rough_velocity(g, seed=9))


def test_solenoidal_noise_exactly_divergence_free():
    g = GridSpec(21, 17, 1.4, 0.9)
    u = noise_field(g, seed=11, amplitude=2.0)
    assert np.all(u.x[0, :] == 0.0) and np.all(u.x[-1, :] == 0.0)
    assert np.all(u.y[:, 0] == 0.0) and np.all(u.y[:, -1] == 0.0)
    dv = divergence(u).values
    assert np.max(np.abs(dv)) < 1e-12 * max(1.0, vec_lp_norm(u, np.inf) / g.hx)
    again = noise_field(g, seed=11, amplitude=2.0)
    assert np.array_equal(u.x, again.x)
    # amplitude scales the field linearly
    double = noise_field(g, seed=11, amplitude=4.0)
    assert np.allclose(double.x, 2.0 * u.x)


def dense_stokes_matrices(n):
    """Transparent dense assembly of the interior-face Stokes operator on an
    n-by-n unit square: wall faces pinned, odd-reflection ghosts across wall
    planes for the tangential direction."""
    h = 1.0 / n
    ih2 = 1.0 / h**2
    x_ids = {}
    for i in range(1, n):
        for j in range(n):
            x_ids[(i, j)] = len(x_ids)
    y_ids = {}
    off = len(x_ids)
    for i in range(n):
        for j in range(1, n):
            y_ids[(i, j)] = off + len(y_ids)
    ndof = off + len(y_ids)

    K = np.zeros((ndof, ndof))
    for (i, j), r in x_ids.items():
        diag = 0.0
        for ii in (i - 1, i + 1):
            diag += ih2
            if (ii, j) in x_ids:
                K[r, x_ids[(ii, j)]] -= ih2  # wall face value is zero
        for jj in (j - 1, j + 1):
            if (i, jj) in x_ids:
                diag += ih2
                K[r, x_ids[(i, jj)]] -= ih2
            else:
                # ghost = -u across the wall plane: (u_j - u_ghost) = 2 u_j
                diag += 2.0 * ih2
        K[r, r] = diag
    for (i, j), r in y_ids.items():
        diag = 0.0
        for jj in (j - 1, j + 1):
            diag += ih2
            if (i, jj) in y_ids:
                K[r, y_ids[(i, jj)]] -= ih2
        for ii in (i - 1, i + 1):
            if (ii, j) in y_ids:
                diag += ih2
                K[r, y_ids[(ii, j)]] -= ih2
            else:
                diag += 2.0 * ih2
        K[r, r] = diag

    D = np.zeros((n * n, ndof))
    for i in range(n):
        for j in range(n):
            c = i * n + j
            if (i + 1, j) in x_ids:
                D[c, x_ids[(i + 1, j)]] += 1.0 / h
            if (i, j) in x_ids:
                D[c, x_ids[(i, j)]] -= 1.0 / h
            if (i, j + 1) in y_ids:
                D[c, y_ids[(i, j + 1)]] += 1.0 / h
            if (i, j) in y_ids:
                D[c, y_ids[(i, j)]] -= 1.0 / h
    return K, D


def test_lambda1_against_dense_oracle():
    n = 6
    K, D = dense_stokes_matrices(n)
    P = np.eye(K.shape[0]) - D.T @ np.linalg.pinv(D @ D.T) @ D
    S = P @ K @ P
    eigs = np.linalg.eigvalsh(S)
    lam_dense = float(np.min(eigs[eigs > 1e-6]))
    lam = lambda1(GridSpec(n, n, 1.0, 1.0), tol=1e-10)
    assert lam == pytest.approx(lam_dense, rel=1e-7)


def test_lambda1_dilation_and_richardson():
    lam_unit = lambda1(GridSpec(16, 16, 1.0, 1.0))
    lam_double = lambda1(GridSpec(16, 16, 2.0, 2.0))
    assert lam_double == pytest.approx(lam_unit / 4.0, rel=1e-9)
    # second-order convergence toward the continuum value
    lam32 = lambda1(GridSpec(32, 32, 1.0, 1.0))
    lam64 = lambda1(GridSpec(64, 64, 1.0, 1.0))
    extrapolated = lam64 + (lam64 - lam32) / 3.0
    assert extrapolated == pytest.approx(LAMBDA1_UNIT_SQUARE, rel=5e-3)
    assert (lam_unit - lam32) * (lam32 - lam64) > 0.0


def test_fit_ku_synthetic():
    times = np.linspace(0.0, 1.0, 50)
    lam = 3.0
    env = np.exp(-lam * times) * 2.0 + 0.25
    inside = DecayTrial(0.0, 2.0, 0.25, times, 0.7 * env)
    assert fit_ku([inside], lam) == 1.0
    outside = DecayTrial(0.0, 2.0, 0.25, times, 1.4 * env)
    assert fit_ku([inside, outside], lam) == pytest.approx(1.4, rel=1e-12)
    zero_env = DecayTrial(0.0, 0.0, 0.0, times, np.ones_like(times))
    with pytest.raises(ValueError):
        fit_ku([zero_env], lam)


def test_l4_trial_from_run():
    g = GridSpec(12, 12, 1.0, 1.0)
    solver = StokesSolver(g)
    trial = l4_trial_from_run(solver, noise_field(g, seed=5), constant(g, 0.0),
                              constant(g, 0.0), 1e-3, 20, sample_every=5)
    assert len(trial.times) == 5
    assert trial.l4_u[0] == trial.l4_u0
    assert np.all(np.diff(trial.l4_u) < 0.0)
    assert fit_ku([trial], lambda1(g)) >= 1.0
