"""Uniform staggered (MAC) grid on a rectangle, with the discrete calculus
used everywhere else in the package.

Scalars (cell densities, chemical concentration, potentials) live at cell
centers. Velocity components live on the faces normal to them. The three
core operators form an exact summation-by-parts triple:

    gradient  : cells -> faces, boundary faces zero (homogeneous Neumann)
    divergence: faces -> cells
    laplacian : divergence(gradient(.)), identical stencil entries

so that  sum(div(v) * p) * hx * hy == -sum(v . grad(p)) * hx * hy  holds in
exact arithmetic for any v with zero normal boundary faces, and the discrete
integrals of laplacian(p) and of div(v) telescope to zero. Quadrature is the
midpoint rule; W^{1,2} and gradient norms use the face-sum convention, which
makes  integral(|grad p|^2) == -integral(p * lap p)  exact.

Field snapshots are written in a small binary format (magic "CSF1", then
nx, ny as little-endian int64, lx, ly as little-endian float64, then the
row-major float64 payload) plus a CSV exporter with (x, y, value) rows.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import kernels as K


@dataclass(frozen=True)
class GridSpec:
    """Uniform rectangular grid: nx*ny cells on [0,lx] x [0,ly]."""

    nx: int
    ny: int
    lx: float
    ly: float

    def __post_init__(self) -> None:
        if self.nx < 4 or self.ny < 4:
            raise ValueError(f"grid needs at least 4 cells per axis, got {self.nx}x{self.ny}")
        if not (self.lx > 0.0 and self.ly > 0.0):
            raise ValueError(f"domain lengths must be positive, got {self.lx}, {self.ly}")

    @property
    def hx(self) -> float:
        return self.lx / self.nx

    @property
    def hy(self) -> float:
        return self.ly / self.ny

    @property
    def cell_area(self) -> float:
        return self.hx * self.hy

    @property
    def area(self) -> float:
        return self.lx * self.ly

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Meshgrid arrays (shape (nx, ny)) of cell-center coordinates."""
        x = (np.arange(self.nx) + 0.5) * self.hx
        y = (np.arange(self.ny) + 0.5) * self.hy
        return np.meshgrid(x, y, indexing="ij")


@dataclass
class ScalarField:
    """Cell-centered scalar; values has shape (nx, ny), C-ordered float64."""

    grid: GridSpec
    values: np.ndarray

    def __post_init__(self) -> None:
        self.values = np.ascontiguousarray(self.values, dtype=np.float64)
        if self.values.shape != (self.grid.nx, self.grid.ny):
            raise ValueError(
                f"scalar values shape {self.values.shape} does not match "
                f"grid {(self.grid.nx, self.grid.ny)}"
            )

    def copy(self) -> "ScalarField":
        return ScalarField(self.grid, self.values.copy())


@dataclass
class VectorField:
    """MAC face vector: x has shape (nx+1, ny), y has shape (nx, ny+1).

    Normal boundary faces (x[0,:], x[-1,:], y[:,0], y[:,-1]) are the wall
    values; fields representing velocities keep them at zero.
    """

    grid: GridSpec
    x: np.ndarray
    y: np.ndarray

    def __post_init__(self) -> None:
        self.x = np.ascontiguousarray(self.x, dtype=np.float64)
        self.y = np.ascontiguousarray(self.y, dtype=np.float64)
        if self.x.shape != (self.grid.nx + 1, self.grid.ny):
            raise ValueError(f"x-face shape {self.x.shape} invalid for grid")
        if self.y.shape != (self.grid.nx, self.grid.ny + 1):
            raise ValueError(f"y-face shape {self.y.shape} invalid for grid")

    def copy(self) -> "VectorField":
        return VectorField(self.grid, self.x.copy(), self.y.copy())


def zeros(grid: GridSpec) -> ScalarField:
    return ScalarField(grid, np.zeros((grid.nx, grid.ny)))


def constant(grid: GridSpec, value: float) -> ScalarField:
    return ScalarField(grid, np.full((grid.nx, grid.ny), float(value)))


def zero_vector(grid: GridSpec) -> VectorField:
    return VectorField(grid, np.zeros((grid.nx + 1, grid.ny)), np.zeros((grid.nx, grid.ny + 1)))


def from_function(grid: GridSpec, fn) -> ScalarField:
    """Sample fn(x, y) at cell centers (fn must broadcast over arrays)."""
    xs, ys = grid.cell_centers()
    return ScalarField(grid, np.asarray(fn(xs, ys), dtype=np.float64))


# ---------------------------------------------------------------------------
# Operators
# ---------------------------------------------------------------------------


def laplacian(f: ScalarField) -> ScalarField:
    """Five-point Neumann Laplacian (even-reflection ghosts). Equals
    divergence(gradient(f)) entry for entry."""
    g = f.grid
    return ScalarField(g, K.lap_neumann(f.values, 1.0 / g.hx**2, 1.0 / g.hy**2))


def gradient(f: ScalarField) -> VectorField:
    """Face-centered gradient; boundary faces are zero (no-flux data)."""
    g = f.grid
    return VectorField(g, K.grad_x(f.values, 1.0 / g.hx), K.grad_y(f.values, 1.0 / g.hy))


def divergence(v: VectorField) -> ScalarField:
    g = v.grid
    return ScalarField(g, K.div_faces(v.x, v.y, 1.0 / g.hx, 1.0 / g.hy))


def integrate(f: ScalarField) -> float:
    """Midpoint-rule integral over the rectangle."""
    return float(np.sum(f.values)) * f.grid.cell_area


def mean(f: ScalarField) -> float:
    return integrate(f) / f.grid.area


def lp_norm(f: ScalarField, p: float) -> float:
    """L^p norm for p in [1, inf]; p = inf gives the max norm."""
    if p == np.inf:
        return float(np.max(np.abs(f.values)))
    if p < 1.0:
        raise ValueError(f"lp_norm requires p >= 1, got {p}")
    return float((np.sum(np.abs(f.values) ** p) * f.grid.cell_area) ** (1.0 / p))


def grad_norm_sq(f: ScalarField) -> float:
    """integral(|grad f|^2) with face-sum quadrature; equals
    -integral(f * laplacian f) exactly."""
    g = f.grid
    gx = K.grad_x(f.values, 1.0 / g.hx)
    gy = K.grad_y(f.values, 1.0 / g.hy)
    return float(np.sum(gx * gx) + np.sum(gy * gy)) * g.cell_area


def w12_norm_sq(f: ScalarField) -> float:
    """Squared W^{1,2} norm: integral(f^2) + integral(|grad f|^2)."""
    return float(np.sum(f.values**2)) * f.grid.cell_area + grad_norm_sq(f)


# ---------------------------------------------------------------------------
# Vector-field measures. The L2 norm pairs faces with the same weight used
# by the summation-by-parts identity; pointwise magnitudes (for L^p with
# p != 2 and for sup norms) interpolate components to cell centers first.
# ---------------------------------------------------------------------------


def vec_l2_norm_sq(v: VectorField) -> float:
    return float(np.sum(v.x * v.x) + np.sum(v.y * v.y)) * v.grid.cell_area


def vec_magnitude(v: VectorField) -> ScalarField:
    cx = K.center_vx(v.x)
    cy = K.center_vy(v.y)
    return ScalarField(v.grid, np.sqrt(cx * cx + cy * cy))


def vec_lp_norm(v: VectorField, p: float) -> float:
    """L^p norm of the cell-centered magnitude; p = inf gives the sup."""
    return lp_norm(vec_magnitude(v), p)


def vec_grad_magnitude(v: VectorField) -> ScalarField:
    """Frobenius magnitude of the velocity gradient at cell centers.

    Diagonal entries land on centers naturally; cross derivatives live on
    cell corners (one-sided zero at walls via the stored boundary faces)
    and are averaged back to centers.
    """
    g = v.grid
    dudx = (v.x[1:, :] - v.x[:-1, :]) / g.hx
    dvdy = (v.y[:, 1:] - v.y[:, :-1]) / g.hy
    # corner grids (nx+1, ny+1): tangential derivative of each component
    dudy = np.zeros((g.nx + 1, g.ny + 1))
    dudy[:, 1:-1] = (v.x[:, 1:] - v.x[:, :-1]) / g.hy
    dudy[:, 0] = 2.0 * v.x[:, 0] / g.hy
    dudy[:, -1] = -2.0 * v.x[:, -1] / g.hy
    dvdx = np.zeros((g.nx + 1, g.ny + 1))
    dvdx[1:-1, :] = (v.y[1:, :] - v.y[:-1, :]) / g.hx
    dvdx[0, :] = 2.0 * v.y[0, :] / g.hx
    dvdx[-1, :] = -2.0 * v.y[-1, :] / g.hx

    def corners_to_cells(c: np.ndarray) -> np.ndarray:
        return 0.25 * (c[:-1, :-1] + c[1:, :-1] + c[:-1, 1:] + c[1:, 1:])

    mag2 = (
        dudx**2
        + dvdy**2
        + corners_to_cells(dudy**2)
        + corners_to_cells(dvdx**2)
    )
    return ScalarField(g, np.sqrt(mag2))


# ---------------------------------------------------------------------------
# Snapshot I/O
# ---------------------------------------------------------------------------

_MAGIC = b"CSF1"
_HEADER = struct.Struct("<4sqqdd")


def write_snapshot(path, values: np.ndarray, lx: float, ly: float) -> None:
    """Binary field snapshot: CSF1 magic, int64 dims, float64 extents,
    row-major float64 payload."""
    arr = np.ascontiguousarray(values, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError("snapshot payload must be a 2d array")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, arr.shape[0], arr.shape[1], float(lx), float(ly)))
        fh.write(arr.tobytes(order="C"))


def read_snapshot(path) -> tuple[np.ndarray, float, float]:
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) != _HEADER.size:
            raise ValueError(f"truncated snapshot header in {path}")
        magic, n0, n1, lx, ly = _HEADER.unpack(head)
        if magic != _MAGIC:
            raise ValueError(f"bad snapshot magic {magic!r} in {path}")
        payload = fh.read(8 * n0 * n1)
    if len(payload) != 8 * n0 * n1:
        raise ValueError(f"truncated snapshot payload in {path}")
    arr = np.frombuffer(payload, dtype="<f8").reshape(n0, n1).copy()
    return arr, lx, ly


def save_field(path, f: ScalarField) -> None:
    write_snapshot(path, f.values, f.grid.lx, f.grid.ly)


def load_field(path) -> ScalarField:
    arr, lx, ly = read_snapshot(path)
    return ScalarField(GridSpec(arr.shape[0], arr.shape[1], lx, ly), arr)


def export_csv(path, f: ScalarField) -> None:
    """Plotting-friendly dump: one (x, y, value) row per cell."""
    xs, ys = f.grid.cell_centers()
    with open(path, "w") as fh:
        fh.write("x,y,value\n")
        for i in range(f.grid.nx):
            for j in range(f.grid.ny):
                fh.write(f"{float(xs[i, j])!r},{float(ys[i, j])!r},"
                         f"{float(f.values[i, j])!r}\n")
