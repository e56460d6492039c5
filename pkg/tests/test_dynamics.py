import math

import numpy as np
import pytest

from chemostokes.dynamics import (
    CFLError,
    FloorError,
    PotentialData,
    RunOptions,
    SimState,
    run,
    to_log,
    to_original,
)
from chemostokes.grid import (
    GridSpec,
    ScalarField,
    from_function,
    integrate,
    vec_lp_norm,
    zero_vector,
)
from chemostokes.sensitivity import Eps, Identity
from chemostokes.stokes import solenoidal_noise

GRID = GridSpec(16, 16, 1.0, 1.0)


def bump(grid, mass, width=0.12):
    xs, ys = grid.cell_centers()
    shape = np.exp(-((xs - 0.5 * grid.lx) ** 2 + (ys - 0.5 * grid.ly) ** 2)
                   / (2.0 * width**2))
    return ScalarField(grid, shape * (mass / (np.sum(shape) * grid.cell_area)))


def noisy_c(grid, seed=0, floor=0.5, amp=0.5):
    rng = np.random.default_rng(seed)
    vals = rng.standard_normal((grid.nx, grid.ny))
    vals = (vals - vals.min()) / (vals.max() - vals.min())
    # a couple of smoothing passes keep gradients CFL-friendly
    for _ in range(3):
        vals = 0.25 * (np.roll(vals, 1, 0) + np.roll(vals, -1, 0)
                       + np.roll(vals, 1, 1) + np.roll(vals, -1, 1))
    return ScalarField(grid, floor + amp * vals)


def log_state(grid, n, c, u=None):
    c_ref = float(np.max(c.values))
    z = ScalarField(grid, -np.log(c.values / c_ref))
    return SimState(grid, "log", n, u or zero_vector(grid), 0.0, c_ref, None, z)


def zero_pot(grid):
    return PotentialData.from_field(ScalarField(grid, np.zeros((grid.nx, grid.ny))))


def test_state_validation():
    n = bump(GRID, 0.1)
    c = noisy_c(GRID)
    z = ScalarField(GRID, np.zeros((16, 16)))
    with pytest.raises(ValueError):
        SimState(GRID, "log", n, zero_vector(GRID), 0.0, 1.0, c, z)
    with pytest.raises(ValueError):
        SimState(GRID, "log", n, zero_vector(GRID), 0.0, 1.0, c, None)
    with pytest.raises(ValueError):
        SimState(GRID, "original", n, zero_vector(GRID), 0.0, 1.0, None, z)
    with pytest.raises(ValueError):
        SimState(GRID, "weird", n, zero_vector(GRID), 0.0, 1.0, None, z)
    bad_c = ScalarField(GRID, np.full((16, 16), -1.0))
    with pytest.raises(ValueError):
        SimState(GRID, "original", n, zero_vector(GRID), 0.0, 1.0, bad_c, None)


def test_mass_conserved_to_machine_precision():
    state = log_state(GRID, bump(GRID, 0.1), noisy_c(GRID))
    records, final = run(state, zero_pot(GRID), Eps(0.05), 1e-3, 0.1,
                         trace_every=10)
    m0 = 0.1
    for rec in records:
        assert abs(rec.mass_n - state.mass()) <= 1e-13 * m0
    assert final.t == pytest.approx(0.1, abs=1e-12)


def test_log_form_max_principle():
    state = log_state(GRID, bump(GRID, 0.2), noisy_c(GRID, seed=4))
    c_max0 = float(np.max(state.c_values()))
    records, final = run(state, zero_pot(GRID), Eps(0.05), 1e-3, 0.05,
                         trace_every=5)
    for rec in records:
        assert rec.linf_c <= c_max0 * (1.0 + 1e-10)
    assert float(np.min(final.z_values())) >= -1e-8


def test_original_positivity_and_bounds():
    n = bump(GRID, 0.2)
    c = noisy_c(GRID, seed=2)
    state = SimState(GRID, "original", n, zero_vector(GRID), 0.0,
                     float(np.max(c.values)), c, None)
    records, final = run(state, zero_pot(GRID), Eps(0.05), 5e-4, 0.02,
                         trace_every=5)
    assert float(np.min(final.n.values)) >= -1e-12
    assert float(np.min(final.c.values)) > 0.0
    for rec in records:
        assert rec.linf_c <= float(np.max(c.values)) * (1.0 + 1e-10)


def test_formulations_track_each_other():
    n = bump(GRID, 0.1)
    c = noisy_c(GRID, seed=6)
    lg = log_state(GRID, n.copy(), c.copy())
    orig = SimState(GRID, "original", n.copy(), zero_vector(GRID), 0.0,
                    float(np.max(c.values)), c.copy(), None)
    _, f_log = run(lg, zero_pot(GRID), Eps(0.1), 2.5e-4, 0.02)
    _, f_orig = run(orig, zero_pot(GRID), Eps(0.1), 2.5e-4, 0.02)
    gap = np.max(np.abs(f_log.c_values() - f_orig.c_values()))
    assert gap < 5e-3 * float(np.max(c.values))
    gap_n = np.max(np.abs(f_log.n.values - f_orig.n.values))
    assert gap_n < 5e-2 * float(np.max(n.values))


def test_cfl_error_reports_suggestion():
    state = log_state(GRID, bump(GRID, 0.1), noisy_c(GRID),
                      u=solenoidal_noise(GRID, np.random.default_rng(1),
                                         amplitude=50.0))
    with pytest.raises(CFLError) as err:
        run(state, zero_pot(GRID), Eps(0.05), 0.05, 0.1)
    assert err.value.suggested_dt < 0.05
    assert err.value.suggested_dt > 0.0


def test_t_end_must_sit_on_lattice():
    state = log_state(GRID, bump(GRID, 0.1), noisy_c(GRID))
    with pytest.raises(ValueError):
        run(state, zero_pot(GRID), Eps(0.05), 1e-3, 0.0105)
    with pytest.raises(ValueError):
        run(state, zero_pot(GRID), Eps(0.05), -1e-3, 0.01)
    with pytest.raises(ValueError):
        run(state, zero_pot(GRID), Eps(0.05), 1e-3, 0.01, trace_every=0)


def test_record_schedule_and_callback():
    state = log_state(GRID, bump(GRID, 0.1), noisy_c(GRID))
    seen = []
    records, _ = run(state, zero_pot(GRID), Eps(0.05), 1e-3, 0.01,
                     trace_every=3, on_record=lambda rec, st: seen.append(rec.t))
    # steps 3, 6, 9 and the final step 10
    assert [round(r.t / 1e-3) for r in records] == [3, 6, 9, 10]
    assert seen == [r.t for r in records]
    assert records[-1].t == pytest.approx(0.01)


def test_formulation_switch_roundtrip():
    c = noisy_c(GRID, seed=8)
    state = SimState(GRID, "original", bump(GRID, 0.1), zero_vector(GRID), 0.0,
                     float(np.max(c.values)), c, None)
    back = to_original(to_log(state))
    assert np.max(np.abs(back.c.values - state.c.values)) < 1e-14
    big_z = SimState(GRID, "log", bump(GRID, 0.1), zero_vector(GRID), 0.0,
                     1.0, None, ScalarField(GRID, np.full((16, 16), 800.0)))
    with pytest.raises(FloorError):
        to_original(big_z)


def test_transport_sign_switch_changes_trajectory():
    n = bump(GRID, 0.3)
    c = noisy_c(GRID, seed=5)
    u = solenoidal_noise(GRID, np.random.default_rng(3), amplitude=0.2)
    a = log_state(GRID, n.copy(), c.copy(), u=u.copy())
    b = log_state(GRID, n.copy(), c.copy(), u=u.copy())
    _, fa = run(a, zero_pot(GRID), Eps(0.05), 5e-4, 0.01,
                opts=RunOptions(z_transport_sign="chain_rule"))
    _, fb = run(b, zero_pot(GRID), Eps(0.05), 5e-4, 0.01,
                opts=RunOptions(z_transport_sign="printed"))
    assert np.max(np.abs(fa.z.values - fb.z.values)) > 1e-10


def test_buoyancy_forcing_moves_fluid():
    grid = GRID
    phi = from_function(grid, lambda x, y: -0.5 * y)
    pot = PotentialData.from_field(phi)
    assert pot.k1 == pytest.approx(0.5)
    state = log_state(grid, bump(grid, 0.5), noisy_c(grid, seed=9))
    _, final = run(state, pot, Eps(0.05), 5e-4, 0.01)
    assert vec_lp_norm(final.u, np.inf) > 1e-8
    # and without forcing the fluid stays at rest
    state2 = log_state(grid, bump(grid, 0.5), noisy_c(grid, seed=9))
    _, final2 = run(state2, zero_pot(grid), Eps(0.05), 5e-4, 0.01)
    assert vec_lp_norm(final2.u, np.inf) == 0.0


def test_identity_sensitivity_runs():
    state = log_state(GRID, bump(GRID, 0.1), noisy_c(GRID, seed=10))
    records, _ = run(state, zero_pot(GRID), Identity(), 5e-4, 0.01,
                     trace_every=5)
    assert len(records) == 4
    assert all(math.isfinite(r.f_mu) for r in records)


def test_mu_default_is_mean_mass():
    from chemostokes.energy import f_mu

    grid = GRID
    state = log_state(grid, bump(grid, 0.1), noisy_c(grid, seed=12))
    caps = []
    records, _ = run(state, zero_pot(grid), Eps(0.05), 1e-3, 0.005,
                     on_record=lambda rec, st: caps.append((rec, st.copy())))
    rec, st = caps[-1]
    expected = f_mu(st.n, ScalarField(grid, st.z_values()), 0.1 / grid.area)
    assert rec.f_mu == pytest.approx(expected, rel=1e-12)
