import numpy as np
import pytest
from scipy.integrate import quad

from chemostokes.sensitivity import Eps, Identity, f, f_prime, rho


def test_eps_validation():
    with pytest.raises(ValueError):
        Eps(0.0)
    with pytest.raises(ValueError):
        Eps(-0.1)


def test_identity_branch():
    s = np.linspace(0.0, 50.0, 101)
    assert np.array_equal(f(Identity(), s), s)
    assert np.all(f_prime(Identity(), s) == 1.0)
    assert f(Identity(), 7.5) == 7.5


def test_plateau_identities_exact():
    for eps in (0.5, 0.1, 0.037):
        sens = Eps(eps)
        below = np.linspace(0.0, 1.0 / eps, 40)
        assert np.array_equal(f(sens, below), below)
        above = np.linspace(2.0 / eps, 4.0 / eps, 17)
        assert np.all(f(sens, above) == 1.5 / eps)
        assert np.all(f_prime(sens, above) == 0.0)
        assert np.all(f_prime(sens, below[:-1]) == 1.0)


def test_rho_shape():
    assert rho(0.5) == 1.0
    assert rho(2.5) == 0.0
    band = np.linspace(1.1, 1.9, 50)
    vals = rho(band)
    assert np.all((vals > 0.0) & (vals < 1.0))
    assert np.all(np.diff(vals) < 0.0)
    # point symmetry around 3/2
    assert np.max(np.abs(rho(3.0 - band) - (1.0 - vals))) < 1e-14


def test_band_quadrature_matches_quad():
    eps = 0.2
    sens = Eps(eps)
    for s in (5.5, 6.0, 7.3, 9.9):
        y = eps * s
        ref = (1.0 + quad(lambda t: rho(t), 1.0, y, epsabs=1e-13)[0]) / eps
        assert f(sens, s) == pytest.approx(ref, abs=1e-10)


def test_derivative_is_rho():
    eps = 0.08
    s = np.linspace(0.0, 30.0, 200)
    assert np.max(np.abs(f_prime(Eps(eps), s) - rho(eps * s))) == 0.0


def test_monotone_in_eps_and_below_identity():
    s = np.linspace(0.0, 120.0, 100)
    eps_grid = np.geomspace(0.5, 0.01, 10)
    prev = f(Eps(eps_grid[0]), s)
    for eps in eps_grid[1:]:
        cur = f(Eps(eps), s)
        assert np.all(prev <= cur + 1e-15)
        assert np.all(cur <= s + 1e-15)
        prev = cur


def test_zero_and_scalar_handling():
    sens = Eps(0.3)
    assert f(sens, 0.0) == 0.0
    out = f(sens, np.array([[1.0, 2.0], [3.0, 4.0]]))
    assert out.shape == (2, 2)
    assert isinstance(f(sens, 1.5), float)
