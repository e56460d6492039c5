"""Numerical lower-bound estimation of functional-inequality constants.

Three Rayleigh-type quotients over nonzero cell fields:

    K2:         int |phi|^3 / ( (int |grad phi|^2 + int phi^2) * int |phi| )
    K3:         |grad phi|_L4 / ( |lap phi|_L2^{1/2} * |grad phi|_L2^{1/2} )
    C_poincare: |phi - mean|_L2 / |grad phi|_L1

Each is maximized by projected gradient ascent (ascent on ln Q, renormalized
to unit L2 after every accepted step; the quotients are scale invariant so
the projection changes nothing but conditioning) from an ensemble of
low-pass-filtered noise seeds. The result is a certified lower bound on the
sharp constant: it is a value attained by a concrete field. Certificates
use these values multiplied by a safety inflation.

All derivatives are analytic adjoints of the discrete norms, so ascent
steps cost the same as quotient evaluations. The noise seeds use the
cosine basis that diagonalizes the Neumann Laplacian of this grid, which
keeps every trial field compatible with the reflective ghost convention
the K3 inequality needs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels as K
from .grid import GridSpec, ScalarField

QUOTIENT_NAMES = ("K2", "K3", "C_poincare")
_DEGENERATE = 1e-14


@dataclass(frozen=True)
class ConstantEstimate:
    name: str
    value: float
    argmax_field: ScalarField
    grid: GridSpec
    ensemble_size: int
    ascent_iterations: int


@dataclass(frozen=True)
class VerifyResult:
    violations: int
    worst_ratio: float
    trials: int


def filtered_noise(grid: GridSpec, rng: np.random.Generator,
                   cutoff: int | None = None, amplitude: float = 1.0) -> np.ndarray:
    """Gaussian noise restricted to the lowest cosine modes (cutoff defaults
    to ceil(n/4) per direction), evaluated at cell centers."""
    jx = cutoff if cutoff is not None else max(2, math.ceil(grid.nx / 4))
    jy = cutoff if cutoff is not None else max(2, math.ceil(grid.ny / 4))
    coeffs = rng.standard_normal((jx, jy))
    i = np.arange(grid.nx) + 0.5
    j = np.arange(grid.ny) + 0.5
    cx = np.cos(np.outer(i, np.arange(jx)) * math.pi / grid.nx)
    cy = np.cos(np.outer(j, np.arange(jy)) * math.pi / grid.ny)
    return amplitude * (cx @ coeffs @ cy.T)


# -- norms and their adjoint gradients (with quadrature weights) ------------


def _grads(phi: np.ndarray, g: GridSpec) -> tuple[np.ndarray, np.ndarray]:
    return K.grad_x(phi, 1.0 / g.hx), K.grad_y(phi, 1.0 / g.hy)


def _lap(phi: np.ndarray, g: GridSpec) -> np.ndarray:
    return K.lap_neumann(phi, 1.0 / g.hx**2, 1.0 / g.hy**2)


def _div(fx: np.ndarray, fy: np.ndarray, g: GridSpec) -> np.ndarray:
    return K.div_faces(fx, fy, 1.0 / g.hx, 1.0 / g.hy)


def quotient(name: str, phi: ScalarField) -> float:
    """Evaluate the named quotient; nan when the denominator degenerates."""
    g = phi.grid
    v = phi.values
    a = g.cell_area
    gx, gy = _grads(v, g)
    if name == "K2":
        num = float(np.sum(np.abs(v) ** 3)) * a
        w12 = (float(np.sum(gx**2)) + float(np.sum(gy**2))) * a + float(np.sum(v**2)) * a
        l1 = float(np.sum(np.abs(v))) * a
        den = w12 * l1
    elif name == "K3":
        w = K.gradsq_cell(gx, gy)
        num = (float(np.sum(w**2)) * a) ** 0.25
        lap = _lap(v, g)
        d2 = (float(np.sum(lap**2)) * a) ** 0.5
        g2 = ((float(np.sum(gx**2)) + float(np.sum(gy**2))) * a) ** 0.5
        den = d2**0.5 * g2**0.5
    elif name == "C_poincare":
        dev = v - float(np.mean(v))
        num = (float(np.sum(dev**2)) * a) ** 0.5
        w = K.gradsq_cell(gx, gy)
        den = float(np.sum(np.sqrt(w))) * a
    else:
        raise ValueError(f"unknown quotient {name!r}")
    if den < _DEGENERATE or not math.isfinite(den):
        return math.nan
    return num / den


def _grad_ln_quotient(name: str, v: np.ndarray, g: GridSpec) -> np.ndarray | None:
    """Gradient of ln Q with respect to cell values; None when degenerate.
    Quadrature weights cancel inside the logarithmic derivative, so the
    plain sums are used throughout."""
    gx, gy = _grads(v, g)
    if name == "K2":
        j3 = float(np.sum(np.abs(v) ** 3))
        jw = float(np.sum(gx**2)) + float(np.sum(gy**2)) + float(np.sum(v**2))
        j1 = float(np.sum(np.abs(v)))
        if min(j3, jw, j1) < _DEGENERATE:
            return None
        g3 = 3.0 * v * np.abs(v)
        gw = -2.0 * _lap(v, g) + 2.0 * v
        g1 = np.sign(v)
        return g3 / j3 - gw / jw - g1 / j1
    if name == "K3":
        w = K.gradsq_cell(gx, gy)
        j4 = float(np.sum(w**2))
        lap = _lap(v, g)
        jd = float(np.sum(lap**2))
        jg = float(np.sum(gx**2)) + float(np.sum(gy**2))
        if min(j4, jd, jg) < _DEGENERATE:
            return None
        g4 = -_div(4.0 * gx * K.interp_cc_to_fx(w), 4.0 * gy * K.interp_cc_to_fy(w), g)
        gd = 2.0 * _lap(lap, g)
        gg = -2.0 * lap
        return 0.25 * (g4 / j4 - gd / jd - gg / jg)
    if name == "C_poincare":
        dev = v - float(np.mean(v))
        jp = float(np.sum(dev**2))
        w = K.gradsq_cell(gx, gy)
        sqw = np.sqrt(w)
        jg1 = float(np.sum(sqw))
        if min(jp, jg1) < _DEGENERATE:
            return None
        gp = 2.0 * dev
        s = np.where(sqw > _DEGENERATE, 1.0 / np.maximum(sqw, _DEGENERATE), 0.0)
        gg1 = -_div(gx * K.interp_cc_to_fx(s), gy * K.interp_cc_to_fy(s), g)
        return 0.5 * gp / jp - gg1 / jg1
    raise ValueError(f"unknown quotient {name!r}")


def _ascend(name: str, phi0: np.ndarray, grid: GridSpec, iterations: int,
            step_size: float) -> tuple[float, np.ndarray] | None:
    v = phi0 / max(float(np.sqrt(np.sum(phi0**2))), _DEGENERATE)
    q = quotient(name, ScalarField(grid, v))
    if math.isnan(q):
        return None
    for _ in range(iterations):
        grad = _grad_ln_quotient(name, v, grid)
        if grad is None:
            break
        gn = float(np.sqrt(np.sum(grad**2)))
        if gn < 1e-13:
            break
        direction = grad / gn
        s = step_size
        improved = False
        for _ in range(25):
            trial = v + s * direction
            trial /= float(np.sqrt(np.sum(trial**2)))
            qt = quotient(name, ScalarField(grid, trial))
            if not math.isnan(qt) and qt > q:
                v, q = trial, qt
                improved = True
                break
            s *= 0.5
        if not improved:
            break
    return q, v


def estimate(name: str, grid: GridSpec, ensemble_size: int = 16,
             ascent_iterations: int = 50, step_size: float = 0.2,
             seed: int = 0) -> ConstantEstimate:
    """Maximize the named quotient over an ensemble of filtered-noise seeds.

    Member seeds derive from (seed, index), so enlarging the ensemble keeps
    every earlier member: the estimate is monotone in ensemble_size and,
    through accept-only ascent, in ascent_iterations.
    """
    if name not in QUOTIENT_NAMES:
        raise ValueError(f"unknown quotient {name!r}")
    if ensemble_size < 1 or ascent_iterations < 0:
        raise ValueError("ensemble_size must be >= 1 and iterations >= 0")
    best: tuple[float, np.ndarray] | None = None
    for member in range(ensemble_size):
        rng = np.random.default_rng((seed, member))
        phi0 = filtered_noise(grid, rng)
        out = _ascend(name, phi0, grid, ascent_iterations, step_size)
        if out is None:
            continue
        if best is None or out[0] > best[0]:
            best = out
    if best is None:
        raise RuntimeError("every ensemble member had a degenerate quotient")
    return ConstantEstimate(
        name=name,
        value=best[0],
        argmax_field=ScalarField(grid, best[1]),
        grid=grid,
        ensemble_size=ensemble_size,
        ascent_iterations=ascent_iterations,
    )


def verify(est: ConstantEstimate, trials: int = 1000, inflation: float = 1.1,
           seed: int = 2024) -> VerifyResult:
    """Check the inequality with constant value*inflation on fresh random
    fields. worst_ratio is the largest quotient/value ratio seen (relative
    to the uninflated estimate); degenerate fields are skipped."""
    if inflation < 1.0:
        raise ValueError("inflation must be at least 1")
    rng = np.random.default_rng(seed)
    violations = 0
    worst = 0.0
    for _ in range(trials):
        phi = ScalarField(est.grid, filtered_noise(est.grid, rng))
        q = quotient(est.name, phi)
        if math.isnan(q):
            continue
        ratio = q / est.value
        worst = max(worst, ratio)
        if q > est.value * inflation:
            violations += 1
    return VerifyResult(violations=violations, worst_ratio=worst, trials=trials)
