"""Time integration of the chemotaxis-Stokes system on the staggered grid.

Two equivalent formulations are supported. The original one evolves the
attractant concentration c directly; it is cheap but degenerates when c
approaches zero because the sensitivity divides by c. The log formulation
evolves z = -ln(c / c_ref) instead, which turns the singular factor into
a bounded gradient coupling and keeps the max principle for c as a simple
sign condition on z.

Scheme, per step of size dt:
  * cell transport (u plus chemotactic drift) by conservative first-order
    upwind fluxes, explicit in time;
  * diffusion implicit via (I - dt lap) conjugate-gradient solves;
  * reaction terms explicit;
  * velocity by one implicit Stokes step with projection.

The n update splits its right-hand side into mean plus fluctuation and
solves only for the fluctuation, so the cell sum of n is conserved to
round-off regardless of the linear-solve tolerance: advective fluxes
telescope exactly and the Helmholtz solve never touches the mean.

Invariants checked while stepping (violations raise, nothing is clamped):
n stays above -positivity_tol, the max of c never grows beyond round-off,
every field stays finite, and in the original formulation c must stay
above floor_factor * c_ref or the step refuses to continue.

The z transport term defaults to the sign obtained by differentiating
z = -ln(c / c_ref) along trajectories (advection with +u, "chain_rule").
The alternative "printed" switch flips the transport velocity; it exists
for side-by-side comparisons and is reported by the CLI when active.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels as K
from . import sensitivity as sens_mod
from .grid import (
    GridSpec,
    ScalarField,
    VectorField,
    grad_norm_sq,
    integrate,
    vec_magnitude,
)
from .stokes import StokesSolver

FORMULATIONS = ("log", "original")


class CFLError(ValueError):
    """Raised when dt exceeds the advective or reactive stability bound."""

    def __init__(self, msg: str, suggested_dt: float):
        super().__init__(msg)
        self.suggested_dt = suggested_dt


class FloorError(RuntimeError):
    """c dropped to the configured floor; the log formulation is the way out."""


class InvariantViolation(RuntimeError):
    """A discrete invariant (positivity, mass, finiteness) failed."""


@dataclass(frozen=True)
class PotentialData:
    """Gravitational potential with cached face gradients and its sup bound."""

    phi: ScalarField
    gx: np.ndarray
    gy: np.ndarray
    k1: float

    @classmethod
    def from_field(cls, phi: ScalarField) -> "PotentialData":
        g = phi.grid
        gx = K.grad_x(phi.values, 1.0 / g.hx)
        gy = K.grad_y(phi.values, 1.0 / g.hy)
        mag = vec_magnitude(VectorField(g, gx, gy))
        k1 = max(float(np.max(np.abs(phi.values))), float(np.max(mag.values)))
        return cls(phi, gx, gy, k1)


@dataclass
class SimState:
    """Solution snapshot. Exactly one of c, z is stored, matching
    `formulation`; the other is derived on demand through c_ref."""

    grid: GridSpec
    formulation: str
    n: ScalarField
    u: VectorField
    t: float
    c_ref: float
    c: ScalarField | None = None
    z: ScalarField | None = None
    p: ScalarField | None = None

    def __post_init__(self) -> None:
        if self.formulation not in FORMULATIONS:
            raise ValueError(f"unknown formulation {self.formulation!r}")
        if self.c_ref <= 0.0 or not math.isfinite(self.c_ref):
            raise ValueError("c_ref must be positive and finite")
        if self.formulation == "log":
            if self.z is None or self.c is not None:
                raise ValueError("log formulation stores z and not c")
        else:
            if self.c is None or self.z is not None:
                raise ValueError("original formulation stores c and not z")
            if np.min(self.c.values) <= 0.0:
                raise ValueError("c must be strictly positive")

    def z_values(self) -> np.ndarray:
        if self.z is not None:
            return self.z.values
        return -np.log(self.c.values / self.c_ref)

    def c_values(self) -> np.ndarray:
        if self.c is not None:
            return self.c.values
        return self.c_ref * np.exp(-self.z.values)

    def mass(self) -> float:
        return integrate(self.n)

    def copy(self) -> "SimState":
        return SimState(
            self.grid,
            self.formulation,
            self.n.copy(),
            self.u.copy(),
            self.t,
            self.c_ref,
            None if self.c is None else self.c.copy(),
            None if self.z is None else self.z.copy(),
            None if self.p is None else self.p.copy(),
        )


def to_log(state: SimState) -> SimState:
    """Switch to the z variable. c_ref is pinned to the current max of c the
    first time; an already-log state is returned as a copy."""
    if state.formulation == "log":
        return state.copy()
    c_ref = float(np.max(state.c.values))
    z = -np.log(state.c.values / c_ref)
    return SimState(state.grid, "log", state.n.copy(), state.u.copy(), state.t,
                    c_ref, None, ScalarField(state.grid, z),
                    None if state.p is None else state.p.copy())


def to_original(state: SimState) -> SimState:
    if state.formulation == "original":
        return state.copy()
    c = state.c_ref * np.exp(-state.z.values)
    if np.min(c) <= 0.0:
        raise FloorError("z too large to represent c in the original variables")
    return SimState(state.grid, "original", state.n.copy(), state.u.copy(), state.t,
                    state.c_ref, ScalarField(state.grid, c), None,
                    None if state.p is None else state.p.copy())


@dataclass
class RunOptions:
    cfl_safety: float = 0.4
    scalar_tol: float = 1e-12
    pressure_tol: float = 1e-10
    maxiter: int = 50000
    z_transport_sign: str = "chain_rule"
    positivity_tol: float = 1e-10
    z_floor_tol: float = 1e-6
    conservation_tol: float = 1e-10
    floor_factor: float = 1e-12

    def __post_init__(self) -> None:
        if self.z_transport_sign not in ("chain_rule", "printed"):
            raise ValueError("z_transport_sign must be 'chain_rule' or 'printed'")
        if not 0.0 < self.cfl_safety <= 1.0:
            raise ValueError("cfl_safety must lie in (0, 1]")


def _check_cfl(grid: GridSpec, dt: float, vx: np.ndarray, vy: np.ndarray,
               opts: RunOptions, reaction_max: float = 0.0) -> None:
    vmax = max(float(np.max(np.abs(vx))), float(np.max(np.abs(vy))))
    h = min(grid.hx, grid.hy)
    bound = math.inf if vmax == 0.0 else opts.cfl_safety * h / vmax
    if reaction_max > 0.0:
        bound = min(bound, 0.9 / reaction_max)
    if dt > bound:
        raise CFLError(
            f"dt={dt:.3e} exceeds the stability bound {bound:.3e}; "
            f"reduce dt to at most {bound:.3e}",
            suggested_dt=bound,
        )


def _solve_n(n: np.ndarray, rhs: np.ndarray, grid: GridSpec, dt: float,
             opts: RunOptions) -> np.ndarray:
    """Mean-exact implicit diffusion: the mean passes through untouched, CG
    only sees the zero-mean fluctuation."""
    mbar = float(np.mean(rhs))
    x0 = n - float(np.mean(n))
    w, _, relres = K.cg_helmholtz_neumann(
        rhs - mbar, x0, dt, 1.0 / grid.hx**2, 1.0 / grid.hy**2,
        opts.scalar_tol, opts.maxiter,
    )
    if relres > opts.scalar_tol:
        raise InvariantViolation(f"cell diffusion solve stalled at relres={relres:.3e}")
    w -= float(np.mean(w))
    return mbar + w


def _solve_scalar(x0: np.ndarray, rhs: np.ndarray, grid: GridSpec, dt: float,
                  opts: RunOptions, label: str) -> np.ndarray:
    out, _, relres = K.cg_helmholtz_neumann(
        rhs, x0, dt, 1.0 / grid.hx**2, 1.0 / grid.hy**2,
        opts.scalar_tol, opts.maxiter,
    )
    if relres > opts.scalar_tol:
        raise InvariantViolation(f"{label} solve stalled at relres={relres:.3e}")
    return out


def _post_checks(n_new: np.ndarray, opts: RunOptions) -> None:
    if not np.all(np.isfinite(n_new)):
        raise InvariantViolation("non-finite values in n")
    mn = float(np.min(n_new))
    if mn < -opts.positivity_tol:
        raise InvariantViolation(f"n dropped to {mn:.3e}, below -positivity_tol")


def step_log(state: SimState, pot: PotentialData, sens, dt: float,
             opts: RunOptions | None = None,
             solver: StokesSolver | None = None) -> SimState:
    """One step of the log formulation."""
    if state.formulation != "log":
        raise ValueError("step_log needs a log-formulation state")
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    opts = opts or RunOptions()
    g = state.grid
    n = state.n.values
    z = state.z.values
    u = state.u
    ihx, ihy = 1.0 / g.hx, 1.0 / g.hy

    gzx = K.grad_x(z, ihx)
    gzy = K.grad_y(z, ihy)
    fp = sens_mod.f_prime(sens, n)
    vx = u.x - K.interp_cc_to_fx(fp) * gzx
    vy = u.y - K.interp_cc_to_fy(fp) * gzy
    _check_cfl(g, dt, vx, vy, opts)

    rhs_n = n - dt * K.upwind_flux_div(vx, vy, n, ihx, ihy)
    n_new = _solve_n(n, rhs_n, g, dt, opts)
    _post_checks(n_new, opts)

    sign = 1.0 if opts.z_transport_sign == "chain_rule" else -1.0
    adv_z = K.upwind_flux_div(sign * u.x, sign * u.y, z, ihx, ihy)
    sink = K.gradsq_cell(gzx, gzy)
    src = sens_mod.f(sens, n)
    rhs_z = z + dt * (src - sink - adv_z)
    z_new = _solve_scalar(z, rhs_z, g, dt, opts, "z diffusion")
    if not np.all(np.isfinite(z_new)):
        raise InvariantViolation("non-finite values in z")
    if float(np.min(z_new)) < -opts.z_floor_tol:
        raise InvariantViolation(
            f"z dropped to {np.min(z_new):.3e}; the max of c is no longer preserved"
        )

    solver = solver or StokesSolver(g, tolerance=opts.pressure_tol, maxiter=opts.maxiter)
    u_new = solver.stokes_step(u, ScalarField(g, n_new), pot.phi, dt)

    return SimState(g, "log", ScalarField(g, n_new), u_new, state.t + dt,
                    state.c_ref, None, ScalarField(g, z_new), solver.last_pressure)


def step_original(state: SimState, pot: PotentialData, sens, dt: float,
                  opts: RunOptions | None = None,
                  solver: StokesSolver | None = None) -> SimState:
    """One step of the original formulation. Refuses to run once c reaches
    floor_factor * c_ref."""
    if state.formulation != "original":
        raise ValueError("step_original needs an original-formulation state")
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    opts = opts or RunOptions()
    g = state.grid
    n = state.n.values
    c = state.c.values
    u = state.u
    ihx, ihy = 1.0 / g.hx, 1.0 / g.hy

    floor = opts.floor_factor * state.c_ref
    cmin = float(np.min(c))
    if cmin <= floor:
        raise FloorError(
            f"min c = {cmin:.3e} is at the floor {floor:.3e}; "
            "switch to the log formulation (to_log) to continue"
        )

    gcx = K.grad_x(c, ihx)
    gcy = K.grad_y(c, ihy)
    fp = sens_mod.f_prime(sens, n)
    ratio = fp / c
    vx = u.x + K.interp_cc_to_fx(ratio) * gcx
    vy = u.y + K.interp_cc_to_fy(ratio) * gcy
    fn = sens_mod.f(sens, n)
    _check_cfl(g, dt, vx, vy, opts, reaction_max=float(np.max(fn)))

    rhs_n = n - dt * K.upwind_flux_div(vx, vy, n, ihx, ihy)
    n_new = _solve_n(n, rhs_n, g, dt, opts)
    _post_checks(n_new, opts)

    rhs_c = c - dt * K.upwind_flux_div(u.x, u.y, c, ihx, ihy) - dt * fn * c
    c_new = _solve_scalar(c, rhs_c, g, dt, opts, "c diffusion")
    if not np.all(np.isfinite(c_new)):
        raise InvariantViolation("non-finite values in c")
    if float(np.min(c_new)) <= 0.0:
        raise InvariantViolation("c lost positivity; reduce dt or switch to log form")
    cmax_old = float(np.max(c))
    if float(np.max(c_new)) > cmax_old * (1.0 + 1e-12) + 1e-300:
        raise InvariantViolation("max of c grew beyond round-off")

    solver = solver or StokesSolver(g, tolerance=opts.pressure_tol, maxiter=opts.maxiter)
    u_new = solver.stokes_step(u, ScalarField(g, n_new), pot.phi, dt)

    return SimState(g, "original", ScalarField(g, n_new), u_new, state.t + dt,
                    state.c_ref, ScalarField(g, c_new), None, solver.last_pressure)


def step(state: SimState, pot: PotentialData, sens, dt: float,
         opts: RunOptions | None = None,
         solver: StokesSolver | None = None) -> SimState:
    if state.formulation == "log":
        return step_log(state, pot, sens, dt, opts, solver)
    return step_original(state, pot, sens, dt, opts, solver)


def run(initial: SimState, pot: PotentialData, sens, dt: float, t_end: float,
        trace_every: int = 1, opts: RunOptions | None = None,
        mu: float | None = None, cert=None, z4_params=None,
        on_record=None):
    """Integrate from initial.t to t_end, emitting a trace record every
    trace_every steps and always at the final step. Returns
    (records, final_state).

    t_end must sit on the step lattice. Mass conservation is enforced at
    every record against the initial mass. on_record, when given, is called
    with (record, state) after each record is appended.
    """
    from . import monitor  # runtime import; monitor never imports dynamics

    opts = opts or RunOptions()
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    if not isinstance(trace_every, int) or trace_every < 1:
        raise ValueError("trace_every must be a positive integer")
    span = t_end - initial.t
    if span < -1e-12:
        raise ValueError("t_end lies before the initial time")
    n_steps = int(round(span / dt))
    if abs(n_steps * dt - span) > 1e-6 * dt:
        raise ValueError(f"t_end - t0 = {span} is not a multiple of dt = {dt}")

    if mu is None:
        m0 = initial.mass()
        mu = m0 / initial.grid.area if m0 > 0.0 else 1.0

    solver = StokesSolver(initial.grid, tolerance=opts.pressure_tol,
                          maxiter=opts.maxiter)
    mass0 = initial.mass()
    g = initial.grid
    z_init = ScalarField(g, initial.z_values())
    int_z0 = integrate(z_init)
    # running trapezoid of the z-gradient term for the zbound residual
    zb_cum = 0.0
    zb_prev_t = initial.t
    zb_prev_g = grad_norm_sq(z_init)
    state = initial.copy()
    records = []
    for k in range(1, n_steps + 1):
        prev = state
        state = step(prev, pot, sens, dt, opts, solver)
        state.t = initial.t + k * dt
        if k % trace_every == 0 or k == n_steps:
            rec = monitor.make_record(prev, state, dt, mu,
                                      cert=cert, z4_params=z4_params)
            zb_cum += 0.5 * (zb_prev_g + rec.int_gradz_sq) * (rec.t - zb_prev_t)
            zb_prev_t, zb_prev_g = rec.t, rec.int_gradz_sq
            rec.residual_zbound = (
                rec.int_z + zb_cum - int_z0 - (rec.t - initial.t) * mass0
            )
            drift = abs(rec.mass_n - mass0)
            if drift > opts.conservation_tol * max(abs(mass0), 1e-300):
                raise InvariantViolation(
                    f"mass drifted by {drift:.3e} at t={state.t:.6g}"
                )
            records.append(rec)
            if on_record is not None:
                on_record(rec, state)
    return records, state
