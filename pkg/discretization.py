# discretization.py

"""
Grids on the unit interval and the unit disk, the background Neumann Helmholtz
solve, and the background Green's operator.

Both domains use first-order conforming elements with a lumped (diagonal) mass
matrix. On the interval this is the second-order three-point finite difference
scheme with ghost-node Neumann closure. With stiffness S and lumped mass M the
discrete background operator is

    A = -S + k^2 M,        (Delta + k^2) u  ~  M^{-1} A u,

and a boundary flux g enters as the load b = (g, phi_i) on the boundary, so the
background problem reads A u0 = -b. The discrete Green's kernel is A^{-1}
(symmetric), and G(v) = -k^2 int G(x, y) v(y) dy becomes -k^2 A^{-1} M v.
"""

from __future__ import annotations

import logging
import threading
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import pandas as pd
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.spatial import Delaunay
from scipy.special import jnp_zeros

from errors import ConfigurationError, DimensionError, ResonanceError

logger = logging.getLogger(__name__)

SCHEME_INTERVAL = "p1-lumped (3-point finite differences, ghost-node Neumann)"
SCHEME_DISK = "p1-lumped on concentric-ring Delaunay triangulation"
SCHEME_ORDER = 2                 # nodal error O(h^2) for smooth solutions

MIN_RESOLUTION = 8
RESONANCE_TOL = 1e-6
DENSE_EIGEN_LIMIT = 800
MU_MAX_ROWS = 2048


def _frozen(a) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


# ------------------------------------------------------------------
# 1. GRIDS
# ------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Grid:
    dimension: int
    resolution: int
    coordinates: np.ndarray          # (n_nodes, dimension)
    weights: np.ndarray              # lumped mass, sums to |Omega|
    interior: np.ndarray
    boundary: np.ndarray             # interval: [left, right]; disk: counter-clockwise
    normals: np.ndarray              # (n_boundary, dimension), outward
    boundary_weights: np.ndarray
    h: float
    scheme: str
    elements: np.ndarray             # (n_elements, dimension + 1)
    stiffness: sp.csr_matrix = field(repr=False)

    @property
    def n_nodes(self) -> int:
        return self.coordinates.shape[0]

    @property
    def kind(self) -> str:
        return "interval" if self.dimension == 1 else "disk"

    @cached_property
    def mass(self) -> sp.dia_matrix:
        return sp.diags(self.weights)

    @cached_property
    def boundary_angles(self) -> np.ndarray:
        """Polar angle in [0, 2pi) of each boundary node (disk only)."""
        if self.dimension != 2:
            raise DimensionError("boundary angles are only defined on the disk")
        xy = self.coordinates[self.boundary]
        return np.mod(np.arctan2(xy[:, 1], xy[:, 0]), 2.0 * np.pi)

    def check_field(self, values, name: str = "field") -> np.ndarray:
        values = np.asarray(values, dtype=float)
        if values.shape != (self.n_nodes,):
            raise DimensionError(
                f"{name} has shape {values.shape}, grid has {self.n_nodes} nodes"
            )
        return values


def _p1_stiffness(coordinates: np.ndarray, elements: np.ndarray):
    """Assemble P1 stiffness (csr) and lumped mass from simplices."""
    n = coordinates.shape[0]
    if coordinates.shape[1] == 1:
        x = coordinates[:, 0]
        length = x[elements[:, 1]] - x[elements[:, 0]]
        local = np.array([[1.0, -1.0], [-1.0, 1.0]])
        vals = local[None, :, :] / length[:, None, None]
        lumped = np.zeros(n)
        np.add.at(lumped, elements[:, 0], 0.5 * length)
        np.add.at(lumped, elements[:, 1], 0.5 * length)
    else:
        p = coordinates[elements]                       # (m, 3, 2)
        b = np.roll(p[:, :, 1], -1, axis=1) - np.roll(p[:, :, 1], -2, axis=1)
        c = np.roll(p[:, :, 0], -2, axis=1) - np.roll(p[:, :, 0], -1, axis=1)
        area = 0.5 * (b[:, 0] * c[:, 1] - b[:, 1] * c[:, 0])
        vals = (b[:, :, None] * b[:, None, :] + c[:, :, None] * c[:, None, :]) / (4.0 * area[:, None, None])
        lumped = np.zeros(n)
        for i in range(3):
            np.add.at(lumped, elements[:, i], area / 3.0)

    nloc = elements.shape[1]
    rows = np.repeat(elements, nloc, axis=1).ravel()
    cols = np.tile(elements, (1, nloc)).ravel()
    stiffness = sp.coo_matrix((vals.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    stiffness.sum_duplicates()
    return stiffness, lumped


def _interval_grid(resolution: int) -> Grid:
    x = np.linspace(0.0, 1.0, resolution)
    elements = np.column_stack([np.arange(resolution - 1), np.arange(1, resolution)])
    stiffness, weights = _p1_stiffness(x[:, None], elements)
    boundary = np.array([0, resolution - 1])
    return Grid(
        dimension=1,
        resolution=resolution,
        coordinates=_frozen(x[:, None]),
        weights=_frozen(weights),
        interior=_frozen(np.arange(1, resolution - 1)),
        boundary=_frozen(boundary),
        normals=_frozen([[-1.0], [1.0]]),
        boundary_weights=_frozen([1.0, 1.0]),
        h=1.0 / (resolution - 1),
        scheme=SCHEME_INTERVAL,
        elements=_frozen(elements),
        stiffness=stiffness,
    )


def _disk_grid(resolution: int) -> Grid:
    rings = resolution // 2
    pts = [np.zeros((1, 2))]
    for j in range(1, rings + 1):
        n_j = 6 * j
        theta = 2.0 * np.pi * np.arange(n_j) / n_j
        pts.append((j / rings) * np.column_stack([np.cos(theta), np.sin(theta)]))
    coordinates = np.vstack(pts)
    n = coordinates.shape[0]
    n_boundary = 6 * rings
    boundary = np.arange(n - n_boundary, n)

    tri = Delaunay(coordinates)
    elements = np.asarray(tri.simplices, dtype=np.int64)
    p = coordinates[elements]
    signed = 0.5 * (
        (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
        - (p[:, 2, 0] - p[:, 0, 0]) * (p[:, 1, 1] - p[:, 0, 1])
    )
    h = 1.0 / rings
    keep = np.abs(signed) > 1e-12 * h * h
    if not keep.all():
        logger.debug("Dropping %d degenerate triangles", int((~keep).sum()))
    elements, signed = elements[keep], signed[keep]
    flip = signed < 0
    elements[flip] = elements[flip][:, [0, 2, 1]]

    stiffness, weights = _p1_stiffness(coordinates, elements)
    chord = 2.0 * np.sin(np.pi / n_boundary)
    normals = coordinates[boundary] / np.linalg.norm(coordinates[boundary], axis=1)[:, None]
    return Grid(
        dimension=2,
        resolution=resolution,
        coordinates=_frozen(coordinates),
        weights=_frozen(weights),
        interior=_frozen(np.arange(0, n - n_boundary)),
        boundary=_frozen(boundary),
        normals=_frozen(normals),
        boundary_weights=_frozen(np.full(n_boundary, chord)),
        h=h,
        scheme=SCHEME_DISK,
        elements=_frozen(elements),
        stiffness=stiffness,
    )


def build_grid(domain_kind: str, resolution: int) -> Grid:
    """
    Build a grid on the unit interval (resolution = node count) or the unit
    disk (resolution = nodes across a diameter).
    """
    if domain_kind not in ("interval", "disk"):
        raise ConfigurationError(f"unknown domain kind {domain_kind!r}; expected 'interval' or 'disk'")
    if int(resolution) != resolution or resolution < MIN_RESOLUTION:
        raise ConfigurationError(
            f"resolution must be an integer >= {MIN_RESOLUTION}, got {resolution!r}"
        )
    resolution = int(resolution)
    grid = _interval_grid(resolution) if domain_kind == "interval" else _disk_grid(resolution)
    logger.info(
        "Built %s grid: %d nodes, %d boundary nodes, h=%.4g",
        domain_kind, grid.n_nodes, grid.boundary.size, grid.h,
    )
    return grid


def grid_metadata(grid: Grid) -> dict:
    return {
        "dimension": grid.dimension,
        "domain": grid.kind,
        "resolution": grid.resolution,
        "n_nodes": grid.n_nodes,
        "n_boundary": int(grid.boundary.size),
        "scheme": grid.scheme,
        "order": SCHEME_ORDER,
        "h": grid.h,
        "measure": float(grid.weights.sum()),
    }


def field_frame(grid: Grid, values, name: str = "value") -> pd.DataFrame:
    """Node snapshot ready for CSV: node, x[, y], value."""
    values = grid.check_field(values, name)
    columns = {"node": np.arange(grid.n_nodes), "x": grid.coordinates[:, 0]}
    if grid.dimension == 2:
        columns["y"] = grid.coordinates[:, 1]
    columns[name] = values
    return pd.DataFrame(columns)


# ------------------------------------------------------------------
# 2. SPECTRUM + GREEN SOLVER
# ------------------------------------------------------------------

def discrete_eigenwavenumbers(grid: Grid, k: float, count: int = 6) -> np.ndarray:
    """Discrete Neumann eigenwavenumbers closest to k (all of them in 1D)."""
    if grid.dimension == 1:
        m = np.arange(grid.n_nodes)
        return (2.0 / grid.h) * np.sin(m * np.pi * grid.h / 2.0)

    stiffness = grid.stiffness
    if grid.n_nodes <= DENSE_EIGEN_LIMIT:
        lam = scipy.linalg.eigh(stiffness.toarray(), np.diag(grid.weights), eigvals_only=True)
    else:
        try:
            lam = spla.eigsh(
                stiffness.tocsc(), k=count, M=grid.mass.tocsc(), sigma=k * k,
                which="LM", return_eigenvectors=False,
            )
        except RuntimeError:
            # shift-invert factor is singular: k^2 is an eigenvalue
            return np.array([k])
    return np.sqrt(np.clip(lam, 0.0, None))


def continuous_eigenwavenumbers(grid: Grid, k: float) -> np.ndarray:
    """Exact Neumann eigenwavenumbers of the domain up to k + 1."""
    if grid.dimension == 1:
        return np.pi * np.arange(int((k + 1.0) / np.pi) + 2)
    out = [0.0]
    nt = int((k + 1.0) / np.pi) + 2
    for m in range(int(k) + 3):
        out.extend(jnp_zeros(m, nt))
    return np.asarray(out)


def check_resonance(grid: Grid, k: float, tol: float = RESONANCE_TOL) -> None:
    for label, kappas in (
        ("discrete", discrete_eigenwavenumbers(grid, k)),
        ("continuous", continuous_eigenwavenumbers(grid, k)),
    ):
        gap = np.abs(kappas - k)
        i = int(np.argmin(gap))
        if gap[i] < tol:
            raise ResonanceError(k, kappas[i], label)


class GreenSolver:
    """
    Factorized background operator A = -S + k^2 M for one wavenumber.

    The factorization is built once; solves are serialized through a lock so
    one solver can be shared across worker threads.
    """

    def __init__(self, grid: Grid, k: float, resonance_tol: float = RESONANCE_TOL):
        if not np.isfinite(k) or k <= 0:
            raise ConfigurationError(f"wavenumber must be positive and finite, got {k!r}")
        self.grid = grid
        self.k = float(k)
        check_resonance(grid, self.k, resonance_tol)
        self.matrix = (-grid.stiffness + self.k ** 2 * grid.mass).tocsc()
        try:
            self._lu = spla.splu(self.matrix)
        except RuntimeError as exc:
            raise ResonanceError(self.k, self.k, "discrete") from exc
        self._lock = threading.Lock()
        logger.debug("Factorized background operator: k=%.6g, n=%d", self.k, grid.n_nodes)

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """A^{-1} rhs; rhs may carry several right-hand sides as columns."""
        rhs = np.asarray(rhs, dtype=float)
        if rhs.shape[0] != self.grid.n_nodes:
            raise DimensionError(f"right-hand side has {rhs.shape[0]} rows, grid has {self.grid.n_nodes} nodes")
        with self._lock:
            return self._lu.solve(np.ascontiguousarray(rhs))

    def apply_green(self, v) -> np.ndarray:
        v = self.grid.check_field(v, "v")
        return -self.k ** 2 * self.solve(self.grid.weights * v)

    def apply_operator(self, u) -> np.ndarray:
        """Discrete (Delta + k^2) u, i.e. M^{-1} A u."""
        u = self.grid.check_field(u, "u")
        return (self.matrix @ u) / self.grid.weights

    @cached_property
    def mu(self) -> float:
        return estimate_mu(self)


def apply_green(solver: GreenSolver, v) -> np.ndarray:
    """G(v) = -k^2 int G(x, y) v(y) dy, solving (Delta + k^2) w = -k^2 v with zero flux."""
    return solver.apply_green(v)


def mu_rows(grid: Grid, max_rows: int) -> np.ndarray:
    if grid.n_nodes <= max_rows:
        return np.arange(grid.n_nodes)
    return np.unique(np.linspace(0, grid.n_nodes - 1, max_rows).round().astype(int))


def estimate_mu(solver: GreenSolver, max_rows: int = MU_MAX_ROWS, block: int = 256) -> float:
    """mu = k^2 max_x sum_y |G(x, y)| w_y, rows of A^{-1} solved in blocks."""
    grid = solver.grid
    rows = mu_rows(grid, max_rows)
    if rows.size < grid.n_nodes:
        logger.info("estimate_mu: sampling %d of %d rows", rows.size, grid.n_nodes)
    best = 0.0
    for start in range(0, rows.size, block):
        chunk = rows[start:start + block]
        unit = np.zeros((grid.n_nodes, chunk.size))
        unit[chunk, np.arange(chunk.size)] = 1.0
        kernel_rows = solver.solve(unit)           # A symmetric: columns are rows
        best = max(best, float((np.abs(kernel_rows) * grid.weights[:, None]).sum(axis=0).max()))
    mu = solver.k ** 2 * best
    logger.info("mu(k=%.6g) = %.6g", solver.k, mu)
    return mu


# ------------------------------------------------------------------
# 3. BACKGROUND FIELD
# ------------------------------------------------------------------

@dataclass(frozen=True)
class SourceSpec:
    """Point source on the boundary: location, amplitude scale and wavenumber."""
    location: tuple
    scale: float
    k: float

    def to_dict(self) -> dict:
        return {"location": list(self.location), "scale": self.scale, "k": self.k}


def boundary_load(grid: Grid, location, scale: float) -> np.ndarray:
    """
    Load vector of a boundary point flux of total strength `scale`.

    On a boundary node this is the discrete delta (flux scale / boundary
    weight at that node); between two disk nodes it splits by the boundary hat
    functions.
    """
    loc = np.atleast_1d(np.asarray(location, dtype=float))
    if loc.size != grid.dimension:
        raise DimensionError(f"source location {tuple(loc)} does not match dimension {grid.dimension}")
    load = np.zeros(grid.n_nodes)

    if grid.dimension == 1:
        ends = grid.coordinates[grid.boundary, 0]
        hit = np.flatnonzero(np.abs(ends - loc[0]) < 1e-12)
        if hit.size == 0:
            raise ConfigurationError(f"source location {loc[0]!r} is not an end of the interval")
        load[grid.boundary[hit[0]]] = scale
        return load

    radius = float(np.hypot(*loc))
    if abs(radius - 1.0) > 1e-6:
        raise ConfigurationError(f"source location {tuple(loc)} is not on the unit circle")
    n_b = grid.boundary.size
    step = 2.0 * np.pi / n_b
    theta = np.mod(np.arctan2(loc[1], loc[0]), 2.0 * np.pi)
    angles = grid.boundary_angles
    a = int(np.floor(theta / step)) % n_b
    t = (theta - angles[a]) / step
    t = min(max(t, 0.0), 1.0)
    load[grid.boundary[a]] += scale * (1.0 - t)
    load[grid.boundary[(a + 1) % n_b]] += scale * t
    return load


@dataclass(frozen=True, eq=False)
class BackgroundField:
    solver: GreenSolver
    source: SourceSpec
    values: np.ndarray
    load: np.ndarray

    @property
    def grid(self) -> Grid:
        return self.solver.grid

    @property
    def k(self) -> float:
        return self.solver.k

    @property
    def trace(self) -> np.ndarray:
        return self.values[self.grid.boundary]

    def residual(self) -> float:
        """Relative residual of A u0 + b = 0."""
        r = self.solver.matrix @ self.values + self.load
        return float(np.linalg.norm(r) / np.linalg.norm(self.load))


def solve_background(grid: Grid, source: SourceSpec, solver: GreenSolver | None = None) -> BackgroundField:
    """Solve (Delta + k^2) u0 = 0 with the point-source flux of `source`."""
    if solver is None:
        solver = GreenSolver(grid, source.k)
    elif solver.grid is not grid or solver.k != source.k:
        raise ConfigurationError("solver grid/wavenumber does not match the source")
    load = boundary_load(grid, source.location, source.scale)
    values = _frozen(-solver.solve(load))
    return BackgroundField(solver=solver, source=source, values=values, load=_frozen(load))


def interpolate_boundary(values, from_grid: Grid, to_grid: Grid) -> np.ndarray:
    """Carry a boundary trace (or a (..., n_boundary) stack) between grids."""
    values = np.asarray(values, dtype=float)
    if values.shape[-1] != from_grid.boundary.size:
        raise DimensionError("trace length does not match the source grid boundary")
    if from_grid.dimension != to_grid.dimension:
        raise DimensionError("cannot interpolate between domains of different dimension")
    if from_grid.dimension == 1:
        return values.copy()
    src, dst = from_grid.boundary_angles, to_grid.boundary_angles
    flat = values.reshape(-1, values.shape[-1])
    out = np.array([np.interp(dst, src, row, period=2.0 * np.pi) for row in flat])
    return out.reshape(values.shape[:-1] + (dst.size,))
