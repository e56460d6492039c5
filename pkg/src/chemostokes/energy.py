"""Free energy, dissipation, and the smallness certificate.

The central quantity is

    F_mu(n, z) = integral n ln(n/mu) + 1/2 integral |grad z|^2,

evaluated with the same midpoint quadrature the solver uses, so the
pointwise inequalities relating F_mu to integral n |ln n| and to the
gradient term transfer to the discrete level exactly (energy_bounds).

dissipation returns the pair fed into the energy budget:

    d_n = integral |grad n|^2 / n   and   d_z = integral (lap z)^2.

d_n is computed as a sum over faces of (difference of n)^2 over the
harmonic mean of the adjacent cell values. The harmonic mean dominates
the choices that would underestimate the continuum integrand: for every
face the contribution is at least 4 (difference of sqrt n)^2, so the
reported d_n never understates the dissipation the energy argument
needs. Faces where n vanishes on both sides contribute zero; a face
with n = 0 on one side and a nonzero difference makes d_n = +inf.

certify builds the chain of smallness thresholds out of estimated
functional constants in dependency order: entropy level M, reference
mass mu, level margin Gamma, interpolation weight eta, the mass
thresholds m_star and m_star_star, the waiting time t0, the relaxation
time t_star, the a-priori dissipation coefficient kappa, and the
envelope offset L. Flags record which smallness regimes the initial
data lands in. The certificate round-trips through plain text.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace

import numpy as np

from . import kernels as K
from .grid import GridSpec, ScalarField, VectorField, grad_norm_sq, integrate, vec_lp_norm

_E = math.e


def _entropy(nv: np.ndarray, mu: float) -> np.ndarray:
    """Pointwise n ln(n/mu), extended by 0 where n <= 0."""
    out = np.zeros_like(nv)
    pos = nv > 0.0
    out[pos] = nv[pos] * np.log(nv[pos] / mu)
    return out


def f_mu(n: ScalarField, z: ScalarField, mu: float, tol: float = 1e-9) -> float:
    """Free energy F_mu(n, z). n must be nonnegative up to tol."""
    if mu <= 0.0:
        raise ValueError("mu must be positive")
    if float(np.min(n.values)) < -tol:
        raise ValueError("n has negative values beyond tolerance")
    g = n.grid
    ent = float(np.sum(_entropy(n.values, mu))) * g.cell_area
    return ent + 0.5 * grad_norm_sq(z)


@dataclass(frozen=True)
class EnergyBounds:
    """Three checks tied to F_mu, each stored as (lhs, bound) of an
    inequality lhs <= bound that holds exactly in this discretization.
    Slacks are bound - lhs; nonnegative slack means the check passed."""

    value: float
    int_n_abs_ln: float
    int_n_abs_ln_bound: float
    int_gradz_sq: float
    int_gradz_sq_bound: float
    lower_bound: float

    @property
    def nlogn_slack(self) -> float:
        return self.int_n_abs_ln_bound - self.int_n_abs_ln

    @property
    def gradz_slack(self) -> float:
        return self.int_gradz_sq_bound - self.int_gradz_sq

    @property
    def lower_slack(self) -> float:
        return self.value - self.lower_bound

    def ok(self, slack: float = 1e-9) -> bool:
        s = slack * (1.0 + abs(self.value))
        return (
            self.nlogn_slack >= -s
            and self.gradz_slack >= -s
            and self.lower_slack >= -s
        )


def energy_bounds(n: ScalarField, z: ScalarField, mu: float) -> EnergyBounds:
    g = n.grid
    val = f_mu(n, z, mu)
    mass = integrate(n)
    nv = n.values
    pos = nv > 0.0
    n_abs_ln = float(np.sum(np.abs(nv[pos] * np.log(nv[pos])))) * g.cell_area
    gz = grad_norm_sq(z)
    return EnergyBounds(
        value=val,
        int_n_abs_ln=n_abs_ln,
        int_n_abs_ln_bound=val + math.log(mu) * mass + 2.0 * g.area / _E,
        int_gradz_sq=gz,
        int_gradz_sq_bound=2.0 * val + 2.0 * mu * g.area / _E,
        lower_bound=-mu * g.area / _E,
    )


def dissipation(n: ScalarField, z: ScalarField) -> tuple[float, float]:
    """(d_n, d_z). d_n may be +inf when n vanishes on one side of a face
    that still carries a difference; that value is the flag."""
    g = n.grid
    nv = np.clip(n.values, 0.0, None)

    def face_sum(left: np.ndarray, right: np.ndarray, h: float) -> float:
        diff = right - left
        num = 2.0 * left * right
        if np.any((num <= 0.0) & (diff != 0.0)):
            return math.inf
        live = num > 0.0
        total = float(np.sum(diff[live] ** 2 * (left + right)[live] / num[live]))
        return total / h**2

    sx = face_sum(nv[:-1, :], nv[1:, :], g.hx)
    sy = face_sum(nv[:, :-1], nv[:, 1:], g.hy)
    d_n = (sx + sy) * g.cell_area
    lap = K.lap_neumann(z.values, 1.0 / g.hx**2, 1.0 / g.hy**2)
    d_z = float(np.sum(lap * lap)) * g.cell_area
    return d_n, d_z


# ---------------------------------------------------------------------------
# Certificate
# ---------------------------------------------------------------------------

_CERT_FLOATS = (
    "lx", "ly", "area", "k1", "k2", "k3", "k4", "ku", "lam1", "mu", "eta",
    "big_m", "gamma", "m", "ell", "z0_int", "f0", "m_star", "m_star_star",
    "t0", "t_star", "kappa", "bound_l", "t_ref",
)
_CERT_FLAGS = ("small_mass", "thm2_mass", "thm2_energy")


@dataclass(frozen=True)
class Certificate:
    """Smallness thresholds derived from functional constants plus the
    initial data's position relative to them. Times are absolute, measured
    against t_ref (the moment u0 was sampled)."""

    lx: float
    ly: float
    area: float
    k1: float
    k2: float
    k3: float
    k4: float
    ku: float
    lam1: float
    mu: float
    eta: float
    big_m: float
    gamma: float
    m: float
    ell: float
    z0_int: float
    f0: float
    m_star: float
    m_star_star: float
    t0: float
    t_star: float
    kappa: float
    bound_l: float
    t_ref: float
    small_mass: bool
    thm2_mass: bool
    thm2_energy: bool

    def to_text(self) -> str:
        lines = ["# smallness certificate v1"]
        for name in _CERT_FLOATS:
            lines.append(f"{name} = {getattr(self, name)!r}")
        for name in _CERT_FLAGS:
            lines.append(f"{name} = {'true' if getattr(self, name) else 'false'}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "Certificate":
        values: dict = {}
        for raw in text.splitlines():
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key, _, val = line.partition("=")
            key = key.strip()
            val = val.strip()
            if key in _CERT_FLAGS:
                values[key] = val.lower() == "true"
            elif key in _CERT_FLOATS:
                values[key] = float(val)
        missing = [f.name for f in fields(cls) if f.name not in values]
        if missing:
            raise ValueError(f"certificate text is missing fields: {missing}")
        return cls(**values)


def certify(n0: ScalarField, c0: ScalarField, u0: VectorField, consts,
            mu: float | None = None, eta: float | None = None) -> Certificate:
    """Build the certificate for initial data (n0, c0, u0).

    `consts` maps K2, K3, Ku, lambda1 (and K4 unless eta is given; K1 is
    carried along for reporting) to already safety-inflated values. The
    constructive chain: M below 1/(4 K2); mu with 2 mu |O|/e <= M/2; Gamma
    at most M/4 and strictly below 1/(4 K3) - mu |O|/e; eta so that
    eta |O| exp(16 K4) <= Gamma/4; then the mass thresholds, the waiting
    time t0 (smallest solution of ell e^{-lam1 t0} + m = 1/(4 K3^2 Ku
    |O|^{1/4}), zero when the bound already holds at t = 0), and t_star
    with (1+m) t_star >= int z0 + m, m t_star >= int z0, t_star > 2 t0.
    """
    g = n0.grid
    if c0.grid != g or u0.grid != g:
        raise ValueError("fields live on different grids")
    if float(np.min(c0.values)) <= 0.0:
        idx = np.unravel_index(int(np.argmin(c0.values)), c0.values.shape)
        bad = tuple(int(i) for i in idx)
        raise ValueError(f"c0 must be strictly positive; cell {bad} is not")
    if float(np.min(n0.values)) < 0.0:
        raise ValueError("n0 must be nonnegative")
    area = g.area
    k1 = float(consts.get("K1", math.nan))
    k2 = float(consts["K2"])
    k3 = float(consts["K3"])
    ku = float(consts["Ku"])
    lam1 = float(consts["lambda1"])
    if k2 <= 0.0 or k3 <= 0.0 or ku < 1.0 or lam1 <= 0.0:
        raise ValueError("constants must be positive (Ku at least 1)")

    m = integrate(n0)
    ell = vec_lp_norm(u0, 4.0) ** 4
    c_ref = float(np.max(c0.values))
    z0 = ScalarField(g, -np.log(c0.values / c_ref))
    z0_int = integrate(z0)

    big_m = 1.0 / (8.0 * k2)
    if mu is None:
        mu = min(big_m * _E / (4.0 * area), _E / (8.0 * k3 * area), 0.9)
    if not (0.0 < mu < 1.0):
        raise ValueError("mu must lie in (0, 1)")
    if 2.0 * mu * area / _E > big_m / 2.0 + 1e-15:
        raise ValueError("mu too large for the entropy level M")
    margin = 1.0 / (4.0 * k3) - mu * area / _E
    if margin <= 0.0:
        raise ValueError("mu too large for the gradient level")
    gamma = min(big_m / 4.0, (1.0 - 1e-9) * margin)

    if eta is None:
        if "K4" not in consts:
            raise ValueError("eta needs K4 unless passed explicitly")
        k4 = float(consts["K4"])
        # largest admissible eta: eta * area * exp(16 K4) <= gamma / 4,
        # capped at 1/2; done in log space so large K4 cannot overflow
        log_eta = math.log(gamma) - math.log(4.0 * area) - 16.0 * k4
        eta = min(0.5, math.exp(min(log_eta, 0.0)))
    else:
        k4 = float(consts.get("K4", math.nan))
        if not (0.0 < eta <= 0.5):
            raise ValueError("eta must lie in (0, 1/2]")
        if not math.isnan(k4) and math.log(eta) > (
            math.log(gamma) - math.log(4.0 * area) - 16.0 * k4 + 1e-12
        ):
            raise ValueError("eta violates the interpolation budget")

    log_inv = -math.log(eta * mu)
    m_star = min(
        1.0,
        gamma / (4.0 * log_inv),
        gamma / 8.0,
        1.0 / (5.0 * k3**2 * ku * area**0.25),
    )
    m_star_star = 1.0 / (8.0 * k3**2 * ku * area**0.25)

    envelope_cap = 1.0 / (4.0 * k3**2 * ku * area**0.25)
    if ell <= envelope_cap - m:
        t0 = 0.0
    elif m >= envelope_cap:
        t0 = math.inf
    else:
        t0 = math.log(ell / (envelope_cap - m)) / lam1

    parts = [(z0_int + m) / (1.0 + m), 2.0 * t0 + 1e-12 * max(1.0, t0)]
    if m > 0.0:
        parts.append(z0_int / m)
    elif z0_int > 0.0:
        parts.append(math.inf)
    t_star = max(parts)

    f0 = f_mu(n0, z0, mu)
    kappa = max(0.0, 0.25 - k3 * (gamma + mu * area / _E))
    bound_l = gamma + 2.0 * area / _E

    return Certificate(
        lx=g.lx, ly=g.ly, area=area,
        k1=k1, k2=k2, k3=k3, k4=k4, ku=ku, lam1=lam1,
        mu=mu, eta=eta, big_m=big_m, gamma=gamma,
        m=m, ell=ell, z0_int=z0_int, f0=f0,
        m_star=m_star, m_star_star=m_star_star,
        t0=t0, t_star=t_star, kappa=kappa, bound_l=bound_l,
        t_ref=0.0,
        small_mass=m <= m_star,
        thm2_mass=(m <= m_star_star and ell <= m_star_star),
        thm2_energy=f0 < min(1.0 / (4.0 * k3), 1.0 / (8.0 * k2)) - mu * area / _E,
    )


def bracket_coefficient(cert: Certificate, t: float, int_gradz_sq: float) -> float:
    """Coefficient multiplying d_z in the dissipation inequality at time t."""
    envelope = cert.ell * math.exp(-cert.lam1 * (t - cert.t_ref)) + cert.m
    return (
        0.5
        - 0.5 * cert.k3 * int_gradz_sq
        - cert.k3**2 * cert.ku * cert.area**0.25 * envelope
    )


def energy_step_audit(before, after, dt: float, cert: Certificate,
                      t_ref: float | None = None) -> float:
    """Residual of  dF/dt + d_n + coeff * d_z <= 0  across one step pair.

    Dissipations and the gradient term are averaged between the two states;
    the coefficient is evaluated at the midpoint time with the envelope
    referenced to t_ref (default: the certificate's). Nonpositive residual
    means the step respected the energy budget; positive residuals are
    returned as-is, this is a monitor and not an assertion.
    """
    if t_ref is None:
        t_ref = cert.t_ref
    zb = ScalarField(before.grid, before.z_values())
    za = ScalarField(after.grid, after.z_values())
    fb = f_mu(before.n, zb, cert.mu)
    fa = f_mu(after.n, za, cert.mu)
    dnb, dzb = dissipation(before.n, zb)
    dna, dza = dissipation(after.n, za)
    gz = 0.5 * (grad_norm_sq(zb) + grad_norm_sq(za))
    t_mid = 0.5 * (before.t + after.t)
    coeff = bracket_coefficient(replace(cert, t_ref=t_ref), t_mid, gz)
    return (fa - fb) / dt + 0.5 * (dnb + dna) + coeff * 0.5 * (dzb + dza)


# ---------------------------------------------------------------------------
# Growth-constant fit and the integrated budget
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GrowthTrace:
    """One trajectory's ingredients for fit_k4: sampled times, matching
    integrals of (n+1)^2, conserved mass, initial integral of z, area."""

    times: np.ndarray
    int_n1_sq: np.ndarray
    m: float
    z0_int: float
    area: float


def fit_k4(traces) -> float:
    """Smallest K >= 0 making the integrated growth bound

        int_0^t ln( (1/|O|) int (n+1)^2 ) ds  <=  K (1+m) t + K (int z0 + m)

    hold at every sample of every trace. The time integral is a trapezoid
    over the samples with a leading rectangle from t = 0 to the first one.
    """
    k = 0.0
    for tr in traces:
        t = np.asarray(tr.times, dtype=float)
        vals = np.log(np.asarray(tr.int_n1_sq, dtype=float) / tr.area)
        if t.ndim != 1 or t.shape != vals.shape or t.size == 0:
            raise ValueError("trace arrays must be matching one-dimensional samples")
        lhs = np.empty_like(vals)
        lhs[0] = t[0] * vals[0]
        if t.size > 1:
            increments = 0.5 * (vals[1:] + vals[:-1]) * np.diff(t)
            lhs[1:] = lhs[0] + np.cumsum(increments)
        denom = (1.0 + tr.m) * t + (tr.z0_int + tr.m)
        good = denom > 0.0
        if np.any(~good & (lhs > 1e-300)):
            raise ValueError("growth bound has zero budget against positive growth")
        if np.any(good):
            k = max(k, float(np.max(lhs[good] / denom[good])))
    return max(k, 0.0)


def spatiotemporal_budget(records, cert: Certificate,
                          t_start: float) -> tuple[float, float]:
    """Trapezoid of d_n + kappa_run * d_z over records with t >= t_start.

    kappa_run is the smallest bracket coefficient seen over the window,
    floored at zero: the sharp per-trajectory value of the constant that
    weights d_z in the dissipation bound. Returns (budget, kappa_run).
    """
    sel = [r for r in records if r.t >= t_start - 1e-12]
    if len(sel) < 2:
        raise ValueError("need at least two records past t_start")
    coeffs = [bracket_coefficient(cert, r.t, r.int_gradz_sq) for r in sel]
    kappa_run = max(0.0, min(coeffs))
    t = np.array([r.t for r in sel])
    vals = np.array([r.dissipation_n + kappa_run * r.dissipation_z for r in sel])
    budget = float(np.trapezoid(vals, t))
    return budget, kappa_run
