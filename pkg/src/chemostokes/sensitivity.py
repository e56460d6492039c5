"""Saturating sensitivity family f_eps and its smooth cutoff.

The cutoff rho is the classical smooth partition bump

    rho(s) = g(2 - s) / (g(2 - s) + g(s - 1)),   g(t) = exp(-1/t) for t > 0
                                                 g(t) = 0        otherwise

so rho == 1 on (-inf, 1], rho == 0 on [2, inf), rho is C-infinity and
nonincreasing, and rho(3 - s) = 1 - rho(s). The regularized sensitivity is

    f_eps(s) = integral_0^s rho(eps * sigma) d sigma

which equals s exactly for s <= 1/eps, is constant for s >= 2/eps (the
plateau value is 1.5/eps by the symmetry of rho), and increases to the
identity pointwise as eps decreases. Its derivative is f_eps'(s) =
rho(eps * s), so 0 <= f' <= 1 and f(0) = 0 for every member. Identity is
the eps -> 0 limit member.

Transition-band values of f_eps are computed with a fixed 64-node
Gauss-Legendre rule on [1, eps*s]; rho is C-infinity there, so the rule is
accurate to well below 1e-12 absolute.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Identity:
    """Unregularized sensitivity: f(s) = s."""


@dataclass(frozen=True)
class Eps:
    """Saturating member with threshold 1/epsilon."""

    epsilon: float

    def __post_init__(self) -> None:
        if not (self.epsilon > 0.0):
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")


Sensitivity = Identity | Eps


def _g(t: np.ndarray) -> np.ndarray:
    out = np.zeros_like(t)
    pos = t > 0.0
    with np.errstate(over="ignore", under="ignore"):
        out[pos] = np.exp(-1.0 / t[pos])
    return out


def _rho_arr(s: np.ndarray) -> np.ndarray:
    a = _g(2.0 - s)
    b = _g(s - 1.0)
    out = np.ones_like(s)
    band = b > 0.0
    out[band] = a[band] / (a[band] + b[band])
    return out


def rho(s):
    """Smooth cutoff: 1 on s <= 1, 0 on s >= 2, strictly decreasing between."""
    s_arr = np.atleast_1d(np.asarray(s, dtype=np.float64))
    out = _rho_arr(s_arr)
    return float(out[0]) if np.ndim(s) == 0 else out.reshape(np.shape(s))


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(64)

# integral_1^2 rho = 1/2 by the point symmetry rho(3-s) = 1 - rho(s),
# so the plateau of the antiderivative R(y) = integral_0^y rho is 1.5.
_R_PLATEAU = 1.5


def _R(y: np.ndarray) -> np.ndarray:
    """Antiderivative R(y) = integral_0^y rho; y in (1, 2) handled by
    Gauss-Legendre on [1, y], the rest by the exact branches."""
    out = np.where(y >= 2.0, _R_PLATEAU, y)
    band = (y > 1.0) & (y < 2.0)
    if np.any(band):
        yb = y[band]
        half = 0.5 * (yb - 1.0)
        mid = 0.5 * (yb + 1.0)
        pts = mid[:, None] + half[:, None] * _GL_NODES[None, :]
        out[band] = 1.0 + half * (_rho_arr(pts) @ _GL_WEIGHTS)
    return out


def f(sens: Sensitivity, s):
    """Evaluate the sensitivity. The pre-threshold branch returns s itself,
    so f(s) == s is exact (not merely close) for s <= 1/epsilon."""
    s_arr = np.atleast_1d(np.asarray(s, dtype=np.float64))
    if isinstance(sens, Identity):
        out = s_arr.copy()
    else:
        eps = sens.epsilon
        y = eps * s_arr
        # R(y) <= y exactly, so f <= s; the clamp strips the last-ulp
        # quadrature noise that can otherwise tip f(s) just above s
        out = np.where(y <= 1.0, s_arr, np.minimum(_R(y) / eps, s_arr))
    return float(out[0]) if np.ndim(s) == 0 else out.reshape(np.shape(s))


def f_prime(sens: Sensitivity, s):
    """Derivative f'(s); equals rho(eps*s), so it is exactly 1 below the
    threshold and exactly 0 beyond twice the threshold."""
    s_arr = np.atleast_1d(np.asarray(s, dtype=np.float64))
    if isinstance(sens, Identity):
        out = np.ones_like(s_arr)
    else:
        out = _rho_arr(sens.epsilon * s_arr)
    return float(out[0]) if np.ndim(s) == 0 else out.reshape(np.shape(s))
