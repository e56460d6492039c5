import numpy as np
import pytest

from chemostokes.grid import (
    GridSpec,
    ScalarField,
    VectorField,
    constant,
    divergence,
    export_csv,
    from_function,
    grad_norm_sq,
    gradient,
    integrate,
    laplacian,
    load_field,
    lp_norm,
    mean,
    read_snapshot,
    save_field,
    vec_l2_norm_sq,
    vec_lp_norm,
    vec_magnitude,
    w12_norm_sq,
    write_snapshot,
    zero_vector,
    zeros,
)


def random_fields(nx=17, ny=13, lx=1.3, ly=0.7, seed=0):
    g = GridSpec(nx, ny, lx, ly)
    rng = np.random.default_rng(seed)
    p = ScalarField(g, rng.standard_normal((nx, ny)))
    ux = rng.standard_normal((nx + 1, ny))
    uy = rng.standard_normal((nx, ny + 1))
    # velocity test fields respect the wall condition
    ux[0, :] = ux[-1, :] = 0.0
    uy[:, 0] = uy[:, -1] = 0.0
    return g, p, VectorField(g, ux, uy)


def test_gridspec_validation():
    with pytest.raises(ValueError):
        GridSpec(3, 8, 1.0, 1.0)
    with pytest.raises(ValueError):
        GridSpec(8, 8, -1.0, 1.0)
    g = GridSpec(8, 4, 2.0, 1.0)
    assert g.hx == pytest.approx(0.25)
    assert g.cell_area == pytest.approx(0.25 * 0.25)
    assert g.area == pytest.approx(2.0)


def test_cell_centers():
    g = GridSpec(4, 4, 1.0, 1.0)
    xs, ys = g.cell_centers()
    assert xs.shape == (4, 4)
    assert xs[0, 0] == pytest.approx(0.125)
    assert xs[-1, 0] == pytest.approx(0.875)
    assert ys[0, -1] == pytest.approx(0.875)


def test_field_shape_validation():
    g = GridSpec(6, 5, 1.0, 1.0)
    with pytest.raises(ValueError):
        ScalarField(g, np.zeros((5, 6)))
    with pytest.raises(ValueError):
        VectorField(g, np.zeros((6, 5)), np.zeros((6, 6)))
    v = zero_vector(g)
    assert v.x.shape == (7, 5)
    assert v.y.shape == (6, 6)


def test_gradient_divergence_adjoint():
    """<grad p, v>_faces = -<p, div v>_cells for wall-respecting v."""
    g, p, v = random_fields()
    gp = gradient(p)
    lhs = (np.sum(gp.x * v.x) + np.sum(gp.y * v.y)) * g.cell_area
    rhs = -np.sum(p.values * divergence(v).values) * g.cell_area
    assert lhs == pytest.approx(rhs, abs=1e-12)


def test_laplacian_is_div_grad():
    g, p, _ = random_fields(seed=3)
    direct = laplacian(p).values
    composed = divergence(gradient(p)).values
    assert np.max(np.abs(direct - composed)) < 1e-11


def test_laplacian_neumann_eigenfunction():
    # cos(pi x / lx) is a discrete Neumann eigenfunction; the eigenvalue
    # approaches pi^2 at second order
    errs = []
    for n in (16, 32, 64):
        g = GridSpec(n, 4, 1.0, 1.0)
        f = from_function(g, lambda x, y: np.cos(np.pi * x))
        lam = -laplacian(f).values / f.values
        errs.append(abs(np.max(lam) - np.pi**2))
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.1)
    assert errs[1] / errs[2] == pytest.approx(4.0, rel=0.1)


def test_gradient_of_constant_vanishes():
    g = GridSpec(9, 7, 1.5, 0.5)
    gp = gradient(constant(g, 4.2))
    assert np.all(gp.x == 0.0)
    assert np.all(gp.y == 0.0)


def test_integrate_mean_lp():
    g = GridSpec(20, 20, 2.0, 1.0)
    f = constant(g, 3.0)
    assert integrate(f) == pytest.approx(3.0 * g.area)
    assert mean(f) == pytest.approx(3.0)
    assert lp_norm(f, 2.0) == pytest.approx(3.0 * np.sqrt(g.area))
    assert lp_norm(f, np.inf) == pytest.approx(3.0)
    # midpoint quadrature kills the odd cosine exactly
    c = from_function(g, lambda x, y: np.cos(np.pi * x / 2.0))
    assert abs(integrate(c)) < 1e-13


def test_w12_norm_decomposition():
    g, p, _ = random_fields(seed=5)
    assert w12_norm_sq(p) == pytest.approx(grad_norm_sq(p) + lp_norm(p, 2.0) ** 2)


def test_vec_norms():
    g = GridSpec(8, 8, 1.0, 1.0)
    ux = np.zeros((9, 8))
    uy = np.zeros((8, 9))
    ux[1:-1, :] = 2.0
    v = VectorField(g, ux, uy)
    m = vec_magnitude(v)
    assert m.values.max() == pytest.approx(2.0)
    assert vec_lp_norm(v, np.inf) == pytest.approx(2.0)
    # face quadrature, not the center-averaged magnitude norm
    face_sum = (np.sum(ux**2) + np.sum(uy**2)) * g.cell_area
    assert vec_l2_norm_sq(v) == pytest.approx(face_sum)


def test_zeros_and_from_function():
    g = GridSpec(5, 5, 1.0, 1.0)
    assert np.all(zeros(g).values == 0.0)
    f = from_function(g, lambda x, y: x + 2 * y)
    xs, ys = g.cell_centers()
    assert np.allclose(f.values, xs + 2 * ys)


def test_snapshot_roundtrip(tmp_path):
    g, p, v = random_fields(seed=9)
    path = tmp_path / "field.csf"
    save_field(path, p)
    q = load_field(path)
    assert q.grid == g
    assert np.array_equal(q.values, p.values)
    # raw face arrays go through the same container
    fpath = tmp_path / "faces.csf"
    write_snapshot(fpath, v.x, g.lx, g.ly)
    vals, lx, ly = read_snapshot(fpath)
    assert (lx, ly) == (g.lx, g.ly)
    assert np.array_equal(vals, v.x)


def test_snapshot_rejects_garbage(tmp_path):
    path = tmp_path / "bad.csf"
    path.write_bytes(b"not a snapshot at all")
    with pytest.raises(ValueError):
        read_snapshot(path)


def test_export_csv(tmp_path):
    g = GridSpec(4, 4, 1.0, 1.0)
    f = from_function(g, lambda x, y: x * y)
    path = tmp_path / "f.csv"
    export_csv(path, f)
    rows = [line.split(",") for line in path.read_text().strip().splitlines()[1:]]
    assert len(rows) == 16
    x, y, val = (float(c) for c in rows[0])
    assert val == pytest.approx(x * y)
