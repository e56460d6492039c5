"""Scenario runner: flat key-value configs in, CSV traces and text
certificates out.

Config files are plain text, one `key = value` per line, '#' comments,
dotted section prefixes (grid.nx = 64). Unknown keys are rejected so typos
fail loudly. Identical config plus seed reproduces bit-identical CSV
artifacts: every random draw goes through one seeded generator and floats
are serialized with repr.

Verbs:
    run <config>                 execute the configured scenario
    estimate-constants <config>  functional-constant estimation only
    report <run-dir>             re-derive report.txt from stored artifacts

Exit codes: 0 success, 1 config/validation error, 2 runtime or solver
failure, 3 scenario assertion failure (a certified claim did not hold).
"""

from __future__ import annotations

import argparse
import hashlib
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import dynamics, energy, monitor, sensitivity, stokes
from . import functional_constants as fc
from .grid import (
    GridSpec,
    ScalarField,
    VectorField,
    constant,
    from_function,
    integrate,
    load_field,
    save_field,
    vec_lp_norm,
    write_snapshot,
    zero_vector,
)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2
EXIT_ASSERT = 3

SCENARIOS = ("small_mass_eventual", "thm2_global", "eps_sweep", "constants",
             "stokes_decay")


class ConfigError(ValueError):
    pass


class Config:
    """Typed access over the flat key-value file with consumption tracking."""

    def __init__(self, pairs: dict):
        self.pairs = pairs
        self.used: set = set()

    @classmethod
    def parse(cls, path) -> "Config":
        pairs: dict = {}
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, _, val = line.partition("=")
            key = key.strip()
            val = val.split("#", 1)[0].strip()
            if not key or not val:
                raise ConfigError(f"{path}:{lineno}: empty key or value")
            if key in pairs:
                raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
            pairs[key] = val
        return cls(pairs)

    def _raw(self, key, default, required):
        if key in self.pairs:
            self.used.add(key)
            return self.pairs[key]
        if required:
            raise ConfigError(f"missing required config key {key!r}")
        return default

    def str(self, key, default=None, required=False, choices=None):
        val = self._raw(key, default, required)
        if val is not None and choices is not None and val not in choices:
            raise ConfigError(f"{key} must be one of {choices}, got {val!r}")
        return val

    def float(self, key, default=None, required=False):
        val = self._raw(key, default, required)
        if val is None or isinstance(val, float):
            return val
        try:
            return float(val)
        except ValueError as exc:
            raise ConfigError(f"{key} must be a number, got {val!r}") from exc

    def int(self, key, default=None, required=False):
        val = self._raw(key, default, required)
        if val is None or isinstance(val, int):
            return val
        try:
            return int(val)
        except ValueError as exc:
            raise ConfigError(f"{key} must be an integer, got {val!r}") from exc

    def bool(self, key, default=None):
        val = self._raw(key, default, False)
        if isinstance(val, bool) or val is None:
            return val
        low = val.lower()
        if low in ("true", "yes", "1"):
            return True
        if low in ("false", "no", "0"):
            return False
        raise ConfigError(f"{key} must be true or false, got {val!r}")

    def float_list(self, key, required=False):
        val = self._raw(key, None, required)
        if val is None:
            return None
        try:
            return [float(x) for x in val.replace(",", " ").split()]
        except ValueError as exc:
            raise ConfigError(f"{key} must be a list of numbers") from exc

    def reject_unknown(self) -> None:
        unknown = sorted(set(self.pairs) - self.used)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")

    def reject_unknown_in(self, prefixes) -> None:
        # scoped variant for verbs that read only part of a shared config:
        # typos inside their own namespaces still fail fast
        unknown = sorted(k for k in set(self.pairs) - self.used
                         if k.startswith(tuple(prefixes)))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")


# ---------------------------------------------------------------------------
# Builders
# ---------------------------------------------------------------------------


def build_grid(cfg: Config) -> GridSpec:
    try:
        return GridSpec(
            cfg.int("grid.nx", 64),
            cfg.int("grid.ny", 64),
            cfg.float("grid.lx", 1.0),
            cfg.float("grid.ly", 1.0),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def build_sensitivity(cfg: Config):
    kind = cfg.str("sensitivity.kind", "identity", choices=("identity", "eps"))
    if kind == "identity":
        return sensitivity.Identity()
    eps = cfg.float("sensitivity.eps", required=True)
    try:
        return sensitivity.Eps(eps)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _gaussian_shape(grid: GridSpec, cx: float, cy: float, width: float) -> np.ndarray:
    xs, ys = grid.cell_centers()
    return np.exp(-((xs - cx) ** 2 + (ys - cy) ** 2) / (2.0 * width**2))


def build_n0(cfg: Config, grid: GridSpec, rng: np.random.Generator,
             mass_override: float | None = None) -> ScalarField:
    recipe = cfg.str("initial.n.recipe", "gaussian_bump",
                     choices=("constant", "gaussian_bump", "filtered_noise", "file"))
    if recipe == "file":
        f = load_field(cfg.str("initial.n.file", required=True))
        if f.grid != grid:
            raise ConfigError("initial.n.file grid does not match config grid")
        if float(np.min(f.values)) < 0.0:
            raise ConfigError("initial.n.file contains negative values")
        return f
    mass = mass_override
    if mass is None:
        mass = cfg.float("initial.n.mass", required=True)
    else:
        cfg.float("initial.n.mass", None)  # consume if present; override wins
    if mass < 0.0:
        raise ConfigError("initial.n.mass must be nonnegative")
    if recipe == "constant":
        return constant(grid, mass / grid.area)
    if recipe == "gaussian_bump":
        base = cfg.float("initial.n.base", 0.0)
        shape = _gaussian_shape(
            grid,
            cfg.float("initial.n.center_x", 0.5 * grid.lx),
            cfg.float("initial.n.center_y", 0.5 * grid.ly),
            cfg.float("initial.n.width", 0.1 * min(grid.lx, grid.ly)),
        )
        bump_mass = mass - base * grid.area
        if bump_mass < 0.0:
            raise ConfigError("initial.n.base already exceeds the requested mass")
        amp = bump_mass / (float(np.sum(shape)) * grid.cell_area)
        return ScalarField(grid, base + amp * shape)
    noise = fc.filtered_noise(grid, rng, cutoff=cfg.int("initial.n.cutoff", None))
    noise -= noise.min()
    total = float(np.sum(noise)) * grid.cell_area
    if total <= 0.0:
        return constant(grid, mass / grid.area)
    return ScalarField(grid, noise * (mass / total))


def build_c0(cfg: Config, grid: GridSpec, rng: np.random.Generator) -> ScalarField:
    recipe = cfg.str("initial.c.recipe", "constant",
                     choices=("constant", "gaussian_bump", "filtered_noise", "file"))
    if recipe == "file":
        f = load_field(cfg.str("initial.c.file", required=True))
        if f.grid != grid:
            raise ConfigError("initial.c.file grid does not match config grid")
        if float(np.min(f.values)) <= 0.0:
            raise ConfigError("initial.c.file must be strictly positive")
        return f
    if recipe == "constant":
        value = cfg.float("initial.c.value", 1.0)
        if value <= 0.0:
            raise ConfigError("initial.c.value must be positive")
        return constant(grid, value)
    floor = cfg.float("initial.c.floor", required=True)
    if floor <= 0.0:
        raise ConfigError("initial.c.floor must be positive")
    amp = cfg.float("initial.c.amplitude", 0.5)
    if recipe == "gaussian_bump":
        shape = _gaussian_shape(
            grid,
            cfg.float("initial.c.center_x", 0.5 * grid.lx),
            cfg.float("initial.c.center_y", 0.5 * grid.ly),
            cfg.float("initial.c.width", 0.2 * min(grid.lx, grid.ly)),
        )
        return ScalarField(grid, floor + amp * shape)
    noise = fc.filtered_noise(grid, rng, cutoff=cfg.int("initial.c.cutoff", None))
    span = noise.max() - noise.min()
    if span > 0.0:
        noise = (noise - noise.min()) / span
    return ScalarField(grid, floor + amp * noise)


def build_u0(cfg: Config, grid: GridSpec, rng: np.random.Generator) -> VectorField:
    recipe = cfg.str("initial.u.recipe", "zero", choices=("zero", "solenoidal_noise"))
    if recipe == "zero":
        return zero_vector(grid)
    return stokes.solenoidal_noise(
        grid, rng,
        amplitude=cfg.float("initial.u.amplitude", 0.01),
        modes=cfg.int("initial.u.modes", 3),
    )


def build_potential(cfg: Config, grid: GridSpec) -> dynamics.PotentialData:
    recipe = cfg.str("potential.recipe", "zero",
                     choices=("zero", "product_sine", "linear", "file"))
    if recipe == "zero":
        phi = ScalarField(grid, np.zeros((grid.nx, grid.ny)))
    elif recipe == "product_sine":
        amp = cfg.float("potential.amplitude", 0.1)
        phi = from_function(
            grid,
            lambda x, y: amp * np.sin(np.pi * x / grid.lx) * np.sin(np.pi * y / grid.ly),
        )
    elif recipe == "linear":
        gx = cfg.float("potential.slope_x", 0.0)
        gy = cfg.float("potential.slope_y", -0.1)
        phi = from_function(grid, lambda x, y: gx * x + gy * y)
    else:
        phi = load_field(cfg.str("potential.file", required=True))
        if phi.grid != grid:
            raise ConfigError("potential.file grid does not match config grid")
    return dynamics.PotentialData.from_field(phi)


def build_run_options(cfg: Config) -> dynamics.RunOptions:
    try:
        return dynamics.RunOptions(
            cfl_safety=cfg.float("run.cfl_safety", 0.4),
            scalar_tol=cfg.float("run.scalar_tol", 1e-12),
            pressure_tol=cfg.float("run.pressure_tol", 1e-10),
            maxiter=cfg.int("run.maxiter", 50000),
            z_transport_sign=cfg.str("run.z_transport_sign", "chain_rule",
                                     choices=("chain_rule", "printed")),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


# ---------------------------------------------------------------------------
# Constants persistence
# ---------------------------------------------------------------------------

_CONST_KEYS = ("K2", "K3", "C_poincare", "K4", "Ku", "lambda1")


def save_constants(path, values: dict, meta: dict) -> None:
    lines = ["# functional constants v1"]
    for key in _CONST_KEYS:
        if key in values:
            lines.append(f"{key} = {values[key]!r}")
    for key in sorted(meta):
        lines.append(f"# {key}: {meta[key]}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_constants(path) -> dict:
    values: dict = {}
    for raw in Path(path).read_text().splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, _, val = line.partition("=")
        key = key.strip()
        if key in _CONST_KEYS:
            values[key] = float(val.strip())
    missing = [k for k in ("K2", "K3", "Ku", "lambda1") if k not in values]
    if missing:
        raise ConfigError(f"constants file {path} is missing {missing}")
    return values


def _settings_hash(cfg: Config) -> str:
    blob = "\n".join(f"{k}={v}" for k, v in sorted(cfg.pairs.items()))
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def _estimate_settings(cfg: Config, grid: GridSpec) -> dict:
    # single place that reads the estimation keys, so verbs can consume
    # them for typo checking before any work starts
    return {
        "est_n": cfg.int("constants.grid", min(48, grid.nx)),
        "ensemble": cfg.int("constants.ensemble", 12),
        "iters": cfg.int("constants.iterations", 40),
        "decay_dt": cfg.float("constants.decay_dt", None),
        "decay_steps": cfg.int("constants.decay_steps", 150),
        "decay_trials": cfg.int("constants.decay_trials", 3),
        "k4_dt": cfg.float("constants.k4_dt", 0.002),
        "k4_t_end": cfg.float("constants.k4_t_end", 0.4),
    }


def estimate_constants(cfg: Config, grid: GridSpec, seed: int,
                       progress=None) -> dict:
    """Estimate every certificate ingredient. Returns raw (uninflated)
    values; inflation is applied by the caller at certify time."""
    s = _estimate_settings(cfg, grid)
    est_grid = GridSpec(s["est_n"], s["est_n"], grid.lx, grid.ly)
    ensemble = s["ensemble"]
    iters = s["iters"]
    values: dict = {}
    for name in ("K2", "K3", "C_poincare"):
        est = fc.estimate(name, est_grid, ensemble_size=ensemble,
                          ascent_iterations=iters, seed=seed)
        values[name] = est.value
        if progress:
            progress(f"estimated {name} = {est.value:.6g}")
    values["lambda1"] = stokes.lambda1(grid)
    if progress:
        progress(f"lambda1 = {values['lambda1']:.6g}")

    # decay trials for the envelope constant
    trials = []
    solver = stokes.StokesSolver(grid)
    zero_n = ScalarField(grid, np.zeros((grid.nx, grid.ny)))
    zero_phi = ScalarField(grid, np.zeros((grid.nx, grid.ny)))
    dt_u = s["decay_dt"] if s["decay_dt"] is not None else 0.02 / values["lambda1"]
    steps_u = s["decay_steps"]
    n_trials = s["decay_trials"]
    for k in range(n_trials):
        rng = np.random.default_rng((seed, 101, k))
        u0 = stokes.solenoidal_noise(grid, rng, amplitude=1.0, modes=3)
        trials.append(stokes.l4_trial_from_run(solver, u0, zero_n, zero_phi,
                                               dt_u, steps_u))
    values["Ku"] = stokes.fit_ku(trials, values["lambda1"])
    if progress:
        progress(f"Ku = {values['Ku']:.6g}")

    # growth-constant fit over short regularized runs
    k4_grid = GridSpec(min(32, grid.nx), min(32, grid.ny), grid.lx, grid.ly)
    traces = []
    pot = dynamics.PotentialData.from_field(
        ScalarField(k4_grid, np.zeros((k4_grid.nx, k4_grid.ny))))
    for idx, eps in enumerate((0.1, 0.05)):
        shape = _gaussian_shape(k4_grid, 0.5 * k4_grid.lx, 0.5 * k4_grid.ly,
                                0.12 * min(k4_grid.lx, k4_grid.ly))
        n0 = ScalarField(k4_grid, shape * (0.5 / (np.sum(shape) * k4_grid.cell_area)))
        st = dynamics.SimState(k4_grid, "log", n0, zero_vector(k4_grid), 0.0,
                               1.0, None, ScalarField(k4_grid, np.zeros_like(shape)))
        recs, _ = dynamics.run(st, pot, sensitivity.Eps(eps), s["k4_dt"],
                               s["k4_t_end"], trace_every=5)
        traces.append(energy.GrowthTrace(
            times=np.array([r.t for r in recs]),
            int_n1_sq=np.array([r.int_n_sq + 2.0 * r.mass_n + k4_grid.area
                                for r in recs]),
            m=integrate(n0),
            z0_int=0.0,
            area=k4_grid.area,
        ))
    values["K4"] = energy.fit_k4(traces)
    if progress:
        progress(f"K4 = {values['K4']:.6g}")
    return values


def inflate(values: dict, factor: float) -> dict:
    """Safety inflation for certificate use. lambda1 stays as computed: it
    is the decay rate of the discrete dynamics itself, and scaling it up
    would err in the unsafe direction."""
    out = dict(values)
    for key in ("K2", "K3", "C_poincare", "K4", "Ku"):
        if key in out:
            out[key] = out[key] * factor
    if "Ku" in out:
        out["Ku"] = max(out["Ku"], 1.0)
    return out


# ---------------------------------------------------------------------------
# Scenario helpers
# ---------------------------------------------------------------------------


def _trace_header(cfg: Config, extra: dict) -> list:
    lines = [f"scenario: {extra.pop('scenario')}"]
    lines += [f"{k}: {v}" for k, v in sorted(extra.items())]
    lines += [f"config {k} = {v}" for k, v in sorted(cfg.pairs.items())]
    return lines


def _make_snapshot_writer(cfg: Config, outdir: Path):
    every = cfg.int("run.snapshot_every", 0)
    if not every:
        return None, every
    snapdir = outdir / "snapshots"
    snapdir.mkdir(parents=True, exist_ok=True)
    counter = {"k": 0, "written": 0}

    def writer(rec, state):
        counter["k"] += 1
        if counter["k"] % every:
            return
        idx = counter["written"]
        counter["written"] += 1
        g = state.grid
        save_field(snapdir / f"n_{idx:06d}.csf", state.n)
        zc = state.z if state.z is not None else state.c
        name = "z" if state.z is not None else "c"
        save_field(snapdir / f"{name}_{idx:06d}.csf", zc)
        write_snapshot(snapdir / f"ux_{idx:06d}.csf", state.u.x, g.lx, g.ly)
        write_snapshot(snapdir / f"uy_{idx:06d}.csf", state.u.y, g.lx, g.ly)

    return writer, every


def _round_up_to_multiple(t: float, dt: float) -> float:
    return math.ceil(t / dt - 1e-9) * dt


def _fit_rate(times, values) -> float:
    t = np.asarray(times)
    v = np.asarray(values)
    if np.any(v <= 0.0):
        return math.nan
    tc = t - t.mean()
    return -float(np.sum(tc * (np.log(v) - np.log(v).mean())) / np.sum(tc**2))


def _write_report(path, lines) -> None:
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Scenarios
# ---------------------------------------------------------------------------


def scenario_small_mass(cfg: Config, outdir: Path, seed: int, echo) -> int:
    grid = build_grid(cfg)
    sens = build_sensitivity(cfg)
    pot = build_potential(cfg, grid)
    rng = np.random.default_rng(seed)
    opts = build_run_options(cfg)

    consts_file = cfg.str("constants.file", None)
    if consts_file:
        raw = load_constants(consts_file)
    else:
        raw = estimate_constants(cfg, grid, seed, progress=echo)
    inflation = cfg.float("constants.inflation", 1.25)
    if inflation < 1.0:
        raise ConfigError("constants.inflation must be at least 1")
    save_constants(outdir / "constants.txt", raw,
                   {"inflation_for_certificate": inflation,
                    "settings": _settings_hash(cfg)})
    consts = inflate(raw, inflation)
    consts["K1"] = pot.k1

    c0 = build_c0(cfg, grid, rng)
    u0 = build_u0(cfg, grid, rng)
    mu = cfg.float("certificate.mu", None)
    eta = cfg.float("certificate.eta", None)

    mass_factor = cfg.float("scenario.mass_factor", None)
    if mass_factor is not None:
        # m_star depends only on the constants, so a provisional certificate
        # fixes the target mass before the real initial data is built
        probe = certify_with(constant(grid, 1.0 / grid.area), c0, u0, consts, mu, eta)
        n0 = build_n0(cfg, grid, rng, mass_override=mass_factor * probe.m_star)
    else:
        n0 = build_n0(cfg, grid, rng)
    cert = certify_with(n0, c0, u0, consts, mu, eta)
    (outdir / "certificate.txt").write_text(cert.to_text())
    echo(f"certificate: m={cert.m:.3e} m_star={cert.m_star:.3e} "
         f"small_mass={cert.small_mass} t_star={cert.t_star:.3f}")

    dt = cfg.float("run.dt", required=True)
    t_end = cfg.float("run.t_end", None)
    if t_end is None:
        target = cfg.float("scenario.t_end_factor", 2.0) * max(cert.t_star, dt)
        if not math.isfinite(target):
            raise ConfigError(
                "t_star is infinite for this data; set run.t_end explicitly")
        t_end = _round_up_to_multiple(target, dt)
    trace_every = cfg.int("run.trace_every", 10)

    state = dynamics.SimState(grid, "log", n0, u0, 0.0,
                              float(np.max(c0.values)), None,
                              ScalarField(grid, -np.log(c0.values / np.max(c0.values))))
    z4 = monitor.Z4Params(cert.eta, monitor.calibrate_z4_constant(grid, cert.eta))
    writer, _ = _make_snapshot_writer(cfg, outdir)
    cfg.reject_unknown()
    echo(f"running to t_end={t_end} with dt={dt} "
         f"({int(round(t_end / dt))} steps, z sign {opts.z_transport_sign})")
    records, _ = dynamics.run(state, pot, sens, dt, t_end,
                              trace_every=trace_every, opts=opts,
                              mu=cert.mu, cert=cert, z4_params=z4,
                              on_record=writer)
    monitor.write_trace(outdir / "trace.csv", records, _trace_header(cfg, {
        "scenario": "small_mass_eventual",
        "z_transport_sign": opts.z_transport_sign,
        "certificate m_star": repr(cert.m_star),
        "certificate t_star": repr(cert.t_star),
    }))

    mean_n0 = cert.m / grid.area
    u0_sup = vec_lp_norm(u0, math.inf)
    thresholds = {
        "linf_n_dev": 1e-3 * mean_n0,
        "linf_gradc_over_c": 1e-3,
        "linf_u": 1e-3 * u0_sup + 1e-9,
    }
    report = monitor.convergence_report(records, thresholds)
    budget, kappa_run = energy.spatiotemporal_budget(records, cert, cert.t_star)
    zb = monitor.audit_zbound(records)

    lines = ["# run report", "scenario = small_mass_eventual"]
    ok = True
    for name, q in report.quantities.items():
        lines.append(f"{name}.final = {q.final_value!r}")
        lines.append(f"{name}.rate = {q.fitted_rate!r}")
        if q.achieved_threshold is not None:
            lines.append(f"{name}.achieved = {str(q.achieved_threshold).lower()}")
            ok = ok and q.achieved_threshold
    lines.append(f"u_decay_rate = {report.u_decay_rate!r}")
    lines.append(f"min_z_slope = {report.min_z_slope!r}")
    lines.append(f"min_z_slope_target = {0.4 * mean_n0!r}")
    slope_ok = report.min_z_slope >= 0.4 * mean_n0
    lines.append(f"min_z_slope_ok = {str(slope_ok).lower()}")
    ok = ok and slope_ok
    lines.append(f"budget = {budget!r}")
    lines.append(f"budget_cap = {1.05 / (4.0 * cert.k3)!r}")
    lines.append(f"kappa_run = {kappa_run!r}")
    lines.append(f"zbound_residual = {zb!r}")
    lines.append(f"small_mass_flag = {str(cert.small_mass).lower()}")
    lines.append(f"stabilized = {str(ok).lower()}")
    _write_report(outdir / "report.txt", lines)
    echo(f"stabilized: {ok} (report.txt written)")
    return EXIT_OK if ok else EXIT_ASSERT


def certify_with(n0, c0, u0, consts, mu, eta):
    try:
        return energy.certify(n0, c0, u0, consts, mu=mu, eta=eta)
    except ValueError as exc:
        raise ConfigError(f"certification failed: {exc}") from exc


def scenario_thm2(cfg: Config, outdir: Path, seed: int, echo) -> int:
    grid = build_grid(cfg)
    sens = build_sensitivity(cfg)
    pot = build_potential(cfg, grid)
    rng = np.random.default_rng(seed)
    opts = build_run_options(cfg)

    consts_file = cfg.str("constants.file", None)
    raw = load_constants(consts_file) if consts_file else estimate_constants(
        cfg, grid, seed, progress=echo)
    inflation = cfg.float("constants.inflation", 1.25)
    save_constants(outdir / "constants.txt", raw,
                   {"inflation_for_certificate": inflation,
                    "settings": _settings_hash(cfg)})
    consts = inflate(raw, inflation)
    consts["K1"] = pot.k1

    c0 = build_c0(cfg, grid, rng)
    u0 = build_u0(cfg, grid, rng)
    mass_factor = cfg.float("scenario.mass_factor", None)
    mu = cfg.float("certificate.mu", None)
    eta = cfg.float("certificate.eta", None)
    if mass_factor is not None:
        probe = certify_with(constant(grid, 1.0 / grid.area), c0, u0, consts, mu, eta)
        n0 = build_n0(cfg, grid, rng,
                      mass_override=mass_factor * probe.m_star_star)
    else:
        n0 = build_n0(cfg, grid, rng)
    cert = certify_with(n0, c0, u0, consts, mu, eta)
    (outdir / "certificate.txt").write_text(cert.to_text())
    echo(f"flags: thm2_mass={cert.thm2_mass} thm2_energy={cert.thm2_energy}")
    if not (cert.thm2_mass and cert.thm2_energy):
        _write_report(outdir / "report.txt", [
            "# run report", "scenario = thm2_global",
            f"thm2_mass = {str(cert.thm2_mass).lower()}",
            f"thm2_energy = {str(cert.thm2_energy).lower()}",
            "verdict = flags_failed",
        ])
        return EXIT_ASSERT

    dt = cfg.float("run.dt", required=True)
    t_end = cfg.float("run.t_end", required=True)
    trace_every = cfg.int("run.trace_every", 10)
    state = dynamics.SimState(grid, "log", n0, u0, 0.0,
                              float(np.max(c0.values)), None,
                              ScalarField(grid, -np.log(c0.values / np.max(c0.values))))
    z4 = monitor.Z4Params(cert.eta, monitor.calibrate_z4_constant(grid, cert.eta))
    writer, _ = _make_snapshot_writer(cfg, outdir)
    cfg.reject_unknown()
    records, _ = dynamics.run(state, pot, sens, dt, t_end,
                              trace_every=trace_every, opts=opts,
                              mu=cert.mu, cert=cert, z4_params=z4,
                              on_record=writer)
    monitor.write_trace(outdir / "trace.csv", records, _trace_header(cfg, {
        "scenario": "thm2_global",
        "z_transport_sign": opts.z_transport_sign,
    }))

    # global-in-time monotonicity, no waiting period
    slack_ok = True
    worst = -math.inf
    for i in range(len(records)):
        for j in range(i + 1, len(records)):
            gap = records[j].f_mu - records[i].f_mu
            allowed = 0.02 * (1.0 + abs(records[i].f_mu))
            worst = max(worst, gap - allowed)
            if gap > allowed:
                slack_ok = False
    budget, kappa_run = energy.spatiotemporal_budget(records, cert, 0.0)
    lines = [
        "# run report", "scenario = thm2_global",
        "thm2_mass = true", "thm2_energy = true",
        f"f_mu_monotone = {str(slack_ok).lower()}",
        f"f_mu_worst_gap = {worst!r}",
        f"budget = {budget!r}",
        f"kappa_run = {kappa_run!r}",
        f"verdict = {'pass' if slack_ok else 'energy_grew'}",
    ]
    _write_report(outdir / "report.txt", lines)
    return EXIT_OK if slack_ok else EXIT_ASSERT


def _run_one_eps(payload):
    """Worker for the eps sweep; also used inline when workers = 1."""
    (grid_tuple, eps, n0_vals, c0_vals, ux, uy, phi_vals, dt, t_end,
     trace_every, opts_kwargs) = payload
    grid = GridSpec(*grid_tuple)
    n0 = ScalarField(grid, n0_vals)
    c0 = ScalarField(grid, c0_vals)
    u0 = VectorField(grid, ux, uy)
    pot = dynamics.PotentialData.from_field(ScalarField(grid, phi_vals))
    opts = dynamics.RunOptions(**opts_kwargs)
    c_ref = float(np.max(c0.values))
    state = dynamics.SimState(grid, "log", n0, u0, 0.0, c_ref, None,
                              ScalarField(grid, -np.log(c0.values / c_ref)))
    frames: list = []

    def keep(rec, st):
        frames.append((rec.t, st.n.values.copy(), st.c_values().copy()))

    records, _ = dynamics.run(state, pot, sensitivity.Eps(eps), dt, t_end,
                              trace_every=trace_every, opts=opts, on_record=keep)
    return eps, records, frames


def scenario_eps_sweep(cfg: Config, outdir: Path, seed: int, echo) -> int:
    grid = build_grid(cfg)
    eps_list = cfg.float_list("sensitivity.eps_list", required=True)
    if len(eps_list) < 2:
        raise ConfigError("sensitivity.eps_list needs at least two values")
    if any(e <= 0.0 for e in eps_list):
        raise ConfigError("sensitivity.eps_list values must be positive")
    pot = build_potential(cfg, grid)
    rng = np.random.default_rng(seed)
    opts = build_run_options(cfg)
    n0 = build_n0(cfg, grid, rng)
    c0 = build_c0(cfg, grid, rng)
    u0 = build_u0(cfg, grid, rng)
    dt = cfg.float("run.dt", required=True)
    t_end = cfg.float("run.t_end", required=True)
    trace_every = cfg.int("run.trace_every", 10)
    workers = cfg.int("workers", 1)
    cfg.reject_unknown()

    opts_kwargs = dict(
        cfl_safety=opts.cfl_safety, scalar_tol=opts.scalar_tol,
        pressure_tol=opts.pressure_tol, maxiter=opts.maxiter,
        z_transport_sign=opts.z_transport_sign,
    )
    payloads = [
        ((grid.nx, grid.ny, grid.lx, grid.ly), eps, n0.values, c0.values,
         u0.x, u0.y, pot.phi.values, dt, t_end, trace_every, opts_kwargs)
        for eps in eps_list
    ]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_one_eps, payloads))
    else:
        results = [_run_one_eps(p) for p in payloads]

    for eps, records, _ in results:
        monitor.write_trace(outdir / f"trace_eps_{eps!r}.csv", records,
                            _trace_header(cfg, {"scenario": "eps_sweep",
                                                "eps": repr(eps)}))
    # matched-time sup distances between consecutive eps trajectories
    lines = ["# run report", "scenario = eps_sweep"]
    distances = []
    for (e1, _, f1), (e2, _, f2) in zip(results, results[1:]):
        if len(f1) != len(f2):
            raise RuntimeError("sweep trajectories sampled different times")
        d = 0.0
        for (t1, n1, c1), (t2, n2, c2) in zip(f1, f2):
            if abs(t1 - t2) > 1e-9:
                raise RuntimeError("sweep trajectories sampled different times")
            d = max(d, float(np.max(np.abs(n1 - n2))),
                    float(np.max(np.abs(c1 - c2))))
        distances.append(d)
        lines.append(f"distance_{e1!r}_{e2!r} = {d!r}")
        echo(f"sup distance eps {e1} vs {e2}: {d:.6g}")
    monotone = all(a > b for a, b in zip(distances, distances[1:]))
    lines.append(f"distances_decreasing = {str(monotone).lower()}")
    _write_report(outdir / "report.txt", lines)
    return EXIT_OK if monotone else EXIT_ASSERT


def scenario_constants(cfg: Config, outdir: Path, seed: int, echo) -> int:
    grid = build_grid(cfg)
    raw = estimate_constants(cfg, grid, seed, progress=echo)
    inflation = cfg.float("constants.inflation", 1.25)
    save_constants(outdir / "constants.txt", raw,
                   {"inflation_for_certificate": inflation,
                    "settings": _settings_hash(cfg)})
    trials = cfg.int("constants.trials", 2000)
    est_n = cfg.int("constants.grid", min(48, grid.nx))
    cfg.reject_unknown()
    est_grid = GridSpec(est_n, est_n, grid.lx, grid.ly)
    lines = ["# run report", "scenario = constants"]
    for key in _CONST_KEYS:
        if key in raw:
            lines.append(f"{key} = {raw[key]!r}")
    sound = True
    for name in ("K2", "K3", "C_poincare"):
        est = fc.ConstantEstimate(name, raw[name], ScalarField(
            est_grid, np.zeros((est_grid.nx, est_grid.ny))), est_grid, 0, 0)
        res = fc.verify(est, trials=trials, inflation=1.1, seed=seed + 77)
        lines.append(f"{name}.violations = {res.violations}")
        lines.append(f"{name}.worst_ratio = {res.worst_ratio!r}")
        sound = sound and res.violations == 0
    lines.append(f"sound = {str(sound).lower()}")
    _write_report(outdir / "report.txt", lines)
    return EXIT_OK if sound else EXIT_ASSERT


def scenario_stokes_decay(cfg: Config, outdir: Path, seed: int, echo) -> int:
    grid = build_grid(cfg)
    n_trials = cfg.int("scenario.trials", 5)
    dt = cfg.float("run.dt", None)
    lam = stokes.lambda1(grid)
    if dt is None:
        dt = 0.02 / lam
    # the slowest mode must dominate before the fit window opens
    steps = cfg.int("run.steps", 600)
    amplitude = cfg.float("initial.u.amplitude", 1.0)
    modes = cfg.int("initial.u.modes", 3)
    cfg.reject_unknown()

    solver = stokes.StokesSolver(grid)
    zero_n = ScalarField(grid, np.zeros((grid.nx, grid.ny)))
    zero_phi = ScalarField(grid, np.zeros((grid.nx, grid.ny)))
    lines = ["# run report", "scenario = stokes_decay",
             f"lambda1 = {lam!r}", f"dt = {dt!r}", f"steps = {steps}"]
    trials = []
    rates = []
    rows = []
    for k in range(n_trials):
        rng = np.random.default_rng((seed, 303, k))
        u0 = stokes.solenoidal_noise(grid, rng, amplitude=amplitude, modes=modes)
        u = u0.copy()
        times = [0.0]
        l2 = [math.sqrt(sum(np.sum(a**2) for a in (u.x, u.y)) * grid.cell_area)]
        l4 = [vec_lp_norm(u, 4.0)]
        for s in range(1, steps + 1):
            u = solver.stokes_step(u, zero_n, zero_phi, dt)
            times.append(s * dt)
            l2.append(math.sqrt(sum(np.sum(a**2) for a in (u.x, u.y)) * grid.cell_area))
            l4.append(vec_lp_norm(u, 4.0))
        third = len(times) // 3
        rate = _fit_rate(times[-third:], l2[-third:])
        rates.append(rate)
        trials.append(stokes.DecayTrial(0.0, l4[0], 0.0, np.array(times), np.array(l4)))
        rows.append((times, l2))
        lines.append(f"trial_{k}.rate = {rate!r}")
        lines.append(f"trial_{k}.rate_over_lambda1 = {rate / lam!r}")
        echo(f"trial {k}: fitted rate {rate:.4f} (lambda1 {lam:.4f})")
    ku = stokes.fit_ku(trials, lam)
    lines.append(f"Ku = {ku!r}")
    within = all(abs(r - lam) <= 0.1 * lam for r in rates)
    lines.append(f"rates_within_10pct = {str(within).lower()}")
    with open(outdir / "decay_l2.csv", "w") as fh:
        fh.write("t," + ",".join(f"trial_{k}" for k in range(n_trials)) + "\n")
        for i in range(len(rows[0][0])):
            fh.write(repr(rows[0][0][i]) + "," +
                     ",".join(repr(rows[k][1][i]) for k in range(n_trials)) + "\n")
    _write_report(outdir / "report.txt", lines)
    return EXIT_OK if within else EXIT_ASSERT


# ---------------------------------------------------------------------------
# Verbs
# ---------------------------------------------------------------------------


def cmd_run(args) -> int:
    cfg = Config.parse(args.config)
    scenario = cfg.str("scenario", required=True, choices=SCENARIOS)
    seed = cfg.int("seed", 0)
    outdir = Path(args.out or cfg.str("output_dir", required=False) or "out")
    echo = (lambda msg: None) if args.quiet else (lambda msg: print(msg, flush=True))

    for key in ("run.dt", "run.t_end"):
        if key in cfg.pairs:
            try:
                val = float(cfg.pairs[key])
            except ValueError as exc:
                raise ConfigError(f"{key} must be a number") from exc
            if val <= 0.0:
                raise ConfigError(f"{key} must be positive")

    outdir.mkdir(parents=True, exist_ok=True)
    fn = {
        "small_mass_eventual": scenario_small_mass,
        "thm2_global": scenario_thm2,
        "eps_sweep": scenario_eps_sweep,
        "constants": scenario_constants,
        "stokes_decay": scenario_stokes_decay,
    }[scenario]
    return fn(cfg, outdir, seed, echo)


def cmd_estimate_constants(args) -> int:
    cfg = Config.parse(args.config)
    cfg.str("scenario", None)  # tolerated, ignored
    cfg.str("constants.file", None)  # certify-time keys, ignored here
    cfg.float("constants.inflation", None)
    seed = cfg.int("seed", 0)
    grid = build_grid(cfg)
    outdir = Path(args.out or cfg.str("output_dir", required=False) or "out")
    outdir.mkdir(parents=True, exist_ok=True)
    echo = (lambda msg: None) if args.quiet else (lambda msg: print(msg, flush=True))
    # a full run config may be passed here; only the namespaces this verb
    # actually reads are checked for typos, and before any work starts
    _estimate_settings(cfg, grid)
    cfg.reject_unknown_in(("constants.", "grid.", "output"))
    raw = estimate_constants(cfg, grid, seed, progress=echo)
    save_constants(outdir / "constants.txt", raw,
                   {"settings": _settings_hash(cfg)})
    echo(f"constants written to {outdir / 'constants.txt'}")
    return EXIT_OK


def cmd_report(args) -> int:
    rundir = Path(args.rundir)
    trace_path = rundir / "trace.csv"
    if not trace_path.exists():
        print(f"no trace.csv in {rundir}", file=sys.stderr)
        return EXIT_CONFIG
    records = monitor.read_trace(trace_path)
    lines = ["# run report (rebuilt)", f"records = {len(records)}"]
    if len(records) >= 10:
        rep = monitor.convergence_report(records)
        for name, q in rep.quantities.items():
            lines.append(f"{name}.final = {q.final_value!r}")
            lines.append(f"{name}.rate = {q.fitted_rate!r}")
        lines.append(f"u_decay_rate = {rep.u_decay_rate!r}")
        lines.append(f"min_z_slope = {rep.min_z_slope!r}")
    lines.append(f"zbound_residual = {monitor.audit_zbound(records)!r}")
    cert_path = rundir / "certificate.txt"
    if cert_path.exists():
        cert = energy.Certificate.from_text(cert_path.read_text())
        try:
            budget, kappa_run = energy.spatiotemporal_budget(
                records, cert, cert.t_star)
            lines.append(f"budget = {budget!r}")
            lines.append(f"kappa_run = {kappa_run!r}")
        except ValueError:
            lines.append("budget = unavailable (too few records past t_star)")
    _write_report(rundir / "report.txt", lines)
    print(f"report written to {rundir / 'report.txt'}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="chemostokes",
        description="chemotaxis-Stokes scenario runner",
    )
    parser.add_argument("--quiet", action="store_true", help="suppress progress output")
    sub = parser.add_subparsers(dest="verb", required=True)
    p_run = sub.add_parser("run", help="execute a configured scenario")
    p_run.add_argument("config")
    p_run.add_argument("--out", default=None, help="output directory override")
    p_est = sub.add_parser("estimate-constants", help="estimate functional constants")
    p_est.add_argument("config")
    p_est.add_argument("--out", default=None)
    p_rep = sub.add_parser("report", help="rebuild report.txt from a run directory")
    p_rep.add_argument("rundir")
    args = parser.parse_args(argv)

    try:
        if args.verb == "run":
            return cmd_run(args)
        if args.verb == "estimate-constants":
            return cmd_estimate_constants(args)
        return cmd_report(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (stokes.SolverError, dynamics.CFLError, dynamics.FloorError,
            dynamics.InvariantViolation, OSError, RuntimeError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except ValueError as exc:
        # library-level validation of values that came from the config
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
