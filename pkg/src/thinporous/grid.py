"""Periodic MAC grids on the unit cell (-1/2, 1/2)^2, optionally extruded
over z3 in (0, 1), with parametric obstacles and staggered operators.

Layout (2D, arrays indexed ``[ix, iy]``):

* pressure ``p[ix, iy]`` at the cell centre ``(xc[ix], xc[iy])``
* ``u[ix, iy]`` on the x-face at ``(xf[ix], xc[iy])`` (left face of cell ix)
* ``v[ix, iy]`` on the y-face at ``(xc[ix], xf[iy])``

with ``xc = -1/2 + (i + 1/2) h`` and ``xf = -1/2 + i h``.  In 3D a third
index ``k`` is appended.  ``u``, ``v`` and ``p`` live on the z3 levels
``k h3``, ``k = 0..nz``; the levels ``k = 0`` and ``k = nz`` lie on the walls,
where ``u = v = 0`` is imposed exactly (``p`` is unused there).  ``w[..., k]``
sits on the half level ``(k + 1/2) h3``, ``k = 0..nz-1``; the two outermost
half levels border the walls and carry ``w = 0``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components


class GeometryError(ValueError):
    pass


SHAPE_KINDS = ("none", "disk", "ellipse", "rectangle")


@dataclass(frozen=True)
class ObstacleShape:
    """Obstacle S' in cell units.  ``rotation`` is in radians."""

    kind: str = "none"
    center: tuple = (0.0, 0.0)
    radius: float = 0.0
    semi_axes: tuple = (0.0, 0.0)
    rotation: float = 0.0
    half_widths: tuple = (0.0, 0.0)

    def __post_init__(self):
        if self.kind not in SHAPE_KINDS:
            raise GeometryError(f"unknown obstacle kind {self.kind!r}")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        if self.kind == "disk" and not self.radius > 0:
            raise GeometryError("disk radius must be positive")
        if self.kind == "ellipse" and not min(self.semi_axes) > 0:
            raise GeometryError("ellipse semi-axes must be positive")
        if self.kind == "rectangle" and not min(self.half_widths) > 0:
            raise GeometryError("rectangle half-widths must be positive")

    @classmethod
    def none(cls):
        return cls("none")

    @classmethod
    def disk(cls, radius, center=(0.0, 0.0)):
        return cls("disk", center=center, radius=float(radius))

    @classmethod
    def ellipse(cls, a, b, rotation=0.0, center=(0.0, 0.0)):
        return cls("ellipse", center=center, semi_axes=(float(a), float(b)),
                   rotation=float(rotation))

    @classmethod
    def rectangle(cls, hx, hy, center=(0.0, 0.0)):
        return cls("rectangle", center=center, half_widths=(float(hx), float(hy)))

    @property
    def is_empty(self) -> bool:
        return self.kind == "none"

    def contains(self, x, y):
        """Closed membership test (inside or on the boundary), vectorised."""
        x = np.asarray(x, dtype=float) - self.center[0]
        y = np.asarray(y, dtype=float) - self.center[1]
        if self.kind == "none":
            return np.zeros(np.broadcast(x, y).shape, dtype=bool)
        if self.kind == "disk":
            return x * x + y * y <= self.radius ** 2
        if self.kind == "rectangle":
            return (np.abs(x) <= self.half_widths[0]) & (np.abs(y) <= self.half_widths[1])
        c, s = math.cos(self.rotation), math.sin(self.rotation)
        xr = c * x + s * y
        yr = -s * x + c * y
        a, b = self.semi_axes
        return (xr / a) ** 2 + (yr / b) ** 2 <= 1.0

    def half_extent(self):
        """Half-widths of the axis-aligned bounding box."""
        if self.kind == "none":
            return (0.0, 0.0)
        if self.kind == "disk":
            return (self.radius, self.radius)
        if self.kind == "rectangle":
            return self.half_widths
        a, b = self.semi_axes
        c, s = math.cos(self.rotation), math.sin(self.rotation)
        return (math.hypot(a * c, b * s), math.hypot(a * s, b * c))

    def area(self) -> float:
        if self.kind == "none":
            return 0.0
        if self.kind == "disk":
            return math.pi * self.radius ** 2
        if self.kind == "rectangle":
            return 4.0 * self.half_widths[0] * self.half_widths[1]
        return math.pi * self.semi_axes[0] * self.semi_axes[1]

    def transposed(self) -> "ObstacleShape":
        """Mirror image about the diagonal z1 = z2."""
        cx, cy = self.center
        if self.kind == "rectangle":
            return ObstacleShape.rectangle(self.half_widths[1], self.half_widths[0], (cy, cx))
        if self.kind == "ellipse":
            return ObstacleShape.ellipse(*self.semi_axes, rotation=math.pi / 2 - self.rotation,
                                         center=(cy, cx))
        if self.kind == "disk":
            return ObstacleShape.disk(self.radius, (cy, cx))
        return self

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.kind != "none":
            d["center"] = list(self.center)
        if self.kind == "disk":
            d["radius"] = self.radius
        elif self.kind == "ellipse":
            d["semi_axes"] = list(self.semi_axes)
            d["rotation"] = self.rotation
        elif self.kind == "rectangle":
            d["half_widths"] = list(self.half_widths)
        return d


def cell_centers(n: int) -> np.ndarray:
    # written so that xc[n-1-i] == -xc[i] exactly
    return (np.arange(n) + 0.5 - n / 2) / n


def face_coords(n: int) -> np.ndarray:
    return (np.arange(n) - n / 2) / n


def z_levels(nz: int) -> np.ndarray:
    return np.arange(nz + 1) / nz


@dataclass(frozen=True, eq=False)
class CellGeometry:
    """Unit cell with its obstacle masks.  Build with :func:`build_geometry`."""

    shape: ObstacleShape
    n: int
    nz: Optional[int]
    solid_cell: np.ndarray = field(repr=False)
    solid_u: np.ndarray = field(repr=False)
    solid_v: np.ndarray = field(repr=False)

    @property
    def h(self) -> float:
        return 1.0 / self.n

    @property
    def h3(self) -> float:
        if self.nz is None:
            raise GeometryError("geometry has no z3 resolution")
        return 1.0 / self.nz

    @property
    def fluid_fraction(self) -> float:
        return float((~self.solid_cell).sum()) / self.n ** 2

    @property
    def fluid_cell(self):
        return ~self.solid_cell

    @property
    def fluid_u(self):
        return ~self.solid_u

    @property
    def fluid_v(self):
        return ~self.solid_v

    @property
    def has_obstacle(self) -> bool:
        return bool(self.solid_cell.any() or self.solid_u.any() or self.solid_v.any())

    def extruded(self, mask2d: np.ndarray, depth: int) -> np.ndarray:
        return np.repeat(mask2d[:, :, None], depth, axis=2)


def build_geometry(shape: ObstacleShape, n: int, nz: Optional[int] = None) -> CellGeometry:
    """Rasterise ``shape`` onto an ``n x n`` MAC grid and validate it.

    Velocity faces are solid when their centre lies in the closed obstacle or
    when either neighbouring pressure cell is solid, so every face of a solid
    cell carries a zero velocity.
    """
    if n < 8:
        raise GeometryError(f"n must be >= 8, got {n}")
    if nz is not None and nz < 8:
        raise GeometryError(f"nz must be >= 8, got {nz}")
    h = 1.0 / n
    if not shape.is_empty:
        ex, ey = shape.half_extent()
        cx, cy = shape.center
        gap = min(0.5 - (abs(cx) + ex), 0.5 - (abs(cy) + ey))
        if gap < h * (1 - 1e-12):
            raise GeometryError(
                f"obstacle must be strictly inside the cell: clearance {gap:.4g} "
                f"is below one grid spacing {h:.4g}")
    xc = cell_centers(n)
    xf = face_coords(n)
    X, Y = np.meshgrid(xc, xc, indexing="ij")
    solid_cell = shape.contains(X, Y)
    Xu, Yu = np.meshgrid(xf, xc, indexing="ij")
    solid_u = shape.contains(Xu, Yu) | solid_cell | np.roll(solid_cell, 1, axis=0)
    Xv, Yv = np.meshgrid(xc, xf, indexing="ij")
    solid_v = shape.contains(Xv, Yv) | solid_cell | np.roll(solid_cell, 1, axis=1)
    for a in (solid_cell, solid_u, solid_v):
        a.flags.writeable = False
    geom = CellGeometry(shape, n, nz, solid_cell, solid_u, solid_v)
    if geom.fluid_fraction <= 0:
        raise GeometryError("obstacle fills the whole cell")
    ncomp = fluid_components(geom)
    if ncomp != 1:
        raise GeometryError(f"fluid region is disconnected ({ncomp} components)")
    return geom


def fluid_components(geom: CellGeometry) -> int:
    """Number of periodic components of fluid cells linked through fluid faces."""
    n = geom.n
    idx = np.arange(n * n).reshape(n, n)
    fu = geom.fluid_u
    fv = geom.fluid_v
    rows = np.concatenate([idx[fu], idx[fv]])
    cols = np.concatenate([np.roll(idx, 1, axis=0)[fu], np.roll(idx, 1, axis=1)[fv]])
    adj = sp.coo_matrix((np.ones(rows.size), (rows, cols)), shape=(n * n, n * n))
    _, labels = connected_components(adj, directed=False)
    return len(np.unique(labels[geom.fluid_cell.ravel()]))


# ---------------------------------------------------------------------------
# staggered fields and array operators


@dataclass
class StaggeredField2D:
    u: np.ndarray
    v: np.ndarray
    p: Optional[np.ndarray] = None

    @property
    def n(self):
        return self.u.shape[0]

    def components(self):
        out = {"u": self.u, "v": self.v}
        if self.p is not None:
            out["p"] = self.p
        return out


@dataclass
class StaggeredField3D:
    u: np.ndarray  # (n, n, nz + 1), wall levels included
    v: np.ndarray  # (n, n, nz + 1)
    w: np.ndarray  # (n, n, nz), half levels
    p: Optional[np.ndarray] = None

    @property
    def n(self):
        return self.u.shape[0]

    @property
    def nz(self):
        return self.u.shape[2] - 1

    def components(self):
        out = {"u": self.u, "v": self.v, "w": self.w}
        if self.p is not None:
            out["p"] = self.p
        return out


def _check_layout(f):
    n = f.u.shape[0]
    if isinstance(f, StaggeredField3D):
        nz = f.u.shape[2] - 1
        expected = {"u": (n, n, nz + 1), "v": (n, n, nz + 1), "w": (n, n, nz)}
    else:
        expected = {"u": (n, n), "v": (n, n)}
    for name, shp in expected.items():
        if getattr(f, name).shape != shp:
            raise ValueError(f"component {name} has shape {getattr(f, name).shape}, expected {shp}")


def discrete_div(f) -> np.ndarray:
    """Face-difference divergence, cell centred, periodic laterally."""
    _check_layout(f)
    n = f.n
    h = 1.0 / n
    div = (np.roll(f.u, -1, axis=0) - f.u) / h + (np.roll(f.v, -1, axis=1) - f.v) / h
    if isinstance(f, StaggeredField3D):
        div[:, :, 1:-1] += np.diff(f.w, axis=2) * f.nz
        div[:, :, [0, -1]] = 0.0
    return div


def discrete_grad(p: np.ndarray):
    """Gradient of a cell-centred array onto faces.

    For 3D arrays (levels ``0..nz``) the wall levels are ignored and the
    result vanishes on wall levels and wall-adjacent half levels.
    """
    n = p.shape[0]
    if p.shape[1] != n:
        raise ValueError("pressure array must be n x n (x nz)")
    h = 1.0 / n
    u = (p - np.roll(p, 1, axis=0)) / h
    v = (p - np.roll(p, 1, axis=1)) / h
    if p.ndim == 2:
        return StaggeredField2D(u, v)
    nz = p.shape[2] - 1
    u[:, :, [0, -1]] = 0.0
    v[:, :, [0, -1]] = 0.0
    w = np.zeros((n, n, nz))
    w[:, :, 1:-1] = np.diff(p[:, :, 1:-1], axis=2) * nz
    return StaggeredField3D(u, v, w)


def _lap2(a, h):
    return (np.roll(a, 1, 0) + np.roll(a, -1, 0) + np.roll(a, 1, 1) + np.roll(a, -1, 1)
            - 4.0 * a) / h ** 2


def _lapz_dirichlet(a, h3):
    # second difference on interior levels; end levels are zero boundary values
    out = np.zeros_like(a)
    out[:, :, 1:-1] = (a[:, :, 2:] - 2.0 * a[:, :, 1:-1] + a[:, :, :-2]) / h3 ** 2
    return out


def discrete_laplacian(x):
    """Five/seven-point Laplacian of a cell array or a staggered field.

    Cell arrays and 2D fields are treated as fully periodic.  For 3D fields
    the first and last z3 entries of every component are zero boundary
    values (no-slip) and the result is zero there.
    """
    if isinstance(x, np.ndarray):
        n = x.shape[0]
        if x.ndim != 2:
            raise ValueError("cell Laplacian expects an n x n array")
        return _lap2(x, 1.0 / n)
    _check_layout(x)
    h = 1.0 / x.n
    if isinstance(x, StaggeredField2D):
        return StaggeredField2D(_lap2(x.u, h), _lap2(x.v, h))
    h3 = 1.0 / x.nz
    out = []
    for c in (x.u, x.v, x.w):
        lc = _lap2(c, h) + _lapz_dirichlet(c, h3)
        lc[:, :, [0, -1]] = 0.0
        out.append(lc)
    return StaggeredField3D(*out)


def inner(a, b) -> float:
    """Plain Euclidean inner product of two fields or arrays (no h weights)."""
    if isinstance(a, np.ndarray):
        return float(np.sum(a * b))
    return float(sum(np.sum(ca * cb) for ca, cb in zip(_vel(a), _vel(b))))


def _vel(f):
    if isinstance(f, StaggeredField3D):
        return (f.u, f.v, f.w)
    return (f.u, f.v)


# ---------------------------------------------------------------------------
# sparse assembly


def periodic_difference(n: int) -> sp.csr_matrix:
    """(D u)_i = (u_{i+1} - u_i) / h on a periodic 1D grid."""
    h = 1.0 / n
    e = np.ones(n)
    D = sp.diags([-e, e[:-1]], [0, 1], shape=(n, n), format="lil")
    D[n - 1, 0] = 1.0
    return sp.csr_matrix(D) / h


def wall_difference(m: int, h3: float) -> sp.csr_matrix:
    """Map the m-1 interior half levels onto m levels: (w_{k+1/2} - w_{k-1/2}) / h3.

    The two outer half levels are zero.
    """
    e = np.ones(m - 1)
    D = sp.diags([e, -e], [0, -1], shape=(m, m - 1))
    return sp.csr_matrix(D) / h3


def dirichlet_second_difference(m: int, h3: float) -> sp.csr_matrix:
    """Second difference on m interior levels with zero values beyond both ends."""
    e = np.ones(m)
    L = sp.diags([e[:-1], -2.0 * e, e[:-1]], [-1, 0, 1])
    return sp.csr_matrix(L) / h3 ** 2


def _kron(*mats):
    out = mats[0]
    for m in mats[1:]:
        out = sp.kron(out, m, format="csr")
    return sp.csr_matrix(out)


@dataclass
class StokesOperators:
    """Masked MAC blocks for -lap(w) + grad(pi) = f, div(w) = 0.

    ``A`` acts on the fluid velocity DOFs (u, v[, w] concatenated) and ``D``
    maps them to fluid cells.  The discrete gradient is ``-D.T``.
    """

    geom: CellGeometry
    A: sp.csr_matrix
    D: sp.csr_matrix
    vel_index: list  # flat indices of fluid DOFs per component
    vel_shapes: list
    cell_index: np.ndarray
    cell_shape: tuple
    weight: float  # quadrature weight per DOF (h^2 or h^2 h3)

    @property
    def nvel(self):
        return self.A.shape[0]

    @property
    def ncell(self):
        return self.D.shape[0]

    def saddle_matrix(self) -> sp.csr_matrix:
        B = -self.D
        return sp.csr_matrix(sp.bmat([[self.A, B.T], [B, None]], format="csr"))

    def scatter_velocity(self, x):
        """Split the fluid velocity vector into full component arrays."""
        comps = []
        start = 0
        for idx, shp in zip(self.vel_index, self.vel_shapes):
            a = np.zeros(int(np.prod(shp)))
            a[idx] = x[start:start + idx.size]
            start += idx.size
            comps.append(a.reshape(shp))
        return comps

    def scatter_cells(self, p):
        a = np.zeros(int(np.prod(self.cell_shape)))
        a[self.cell_index] = p
        return a.reshape(self.cell_shape)

    def gather_velocity(self, comps):
        return np.concatenate([np.asarray(c).ravel()[idx] for c, idx in zip(comps, self.vel_index)])


def stokes_operators_2d(geom: CellGeometry) -> StokesOperators:
    n = geom.n
    I = sp.identity(n, format="csr")
    D1 = periodic_difference(n)
    L1 = -(D1.T @ D1)
    lap = _kron(L1, I) + _kron(I, L1)
    fu = np.flatnonzero(geom.fluid_u.ravel())
    fv = np.flatnonzero(geom.fluid_v.ravel())
    fc = np.flatnonzero(geom.fluid_cell.ravel())
    Au = -lap[fu][:, fu]
    Av = -lap[fv][:, fv]
    Dx = _kron(D1, I)[fc][:, fu]
    Dy = _kron(I, D1)[fc][:, fv]
    A = sp.block_diag([Au, Av], format="csr")
    D = sp.hstack([Dx, Dy], format="csr")
    return StokesOperators(geom, _clean(A), _clean(D), [fu, fv], [(n, n), (n, n)],
                           fc, (n, n), geom.h ** 2)


def stokes_operators_3d(geom: CellGeometry) -> StokesOperators:
    """3D blocks on the interior levels 1..nz-1 (walls carry zero velocity)."""
    n, nz = geom.n, geom.nz
    if nz is None:
        raise GeometryError("3D operators need nz")
    h3 = geom.h3
    m = nz - 1
    In = sp.identity(n, format="csr")
    Im = sp.identity(m, format="csr")
    Iw = sp.identity(m - 1, format="csr")
    D1 = periodic_difference(n)
    L1 = -(D1.T @ D1)
    Lz = dirichlet_second_difference(m, h3)
    Dz = wall_difference(m, h3)
    Lzw = -(Dz.T @ Dz)
    lap_c = _kron(L1, In, Im) + _kron(In, L1, Im) + _kron(In, In, Lz)
    lap_w = _kron(L1, In, Iw) + _kron(In, L1, Iw) + _kron(In, In, Lzw)
    fu = np.flatnonzero(geom.extruded(geom.fluid_u, m).ravel())
    fv = np.flatnonzero(geom.extruded(geom.fluid_v, m).ravel())
    fw = np.flatnonzero(geom.extruded(geom.fluid_cell, m - 1).ravel())
    fc = np.flatnonzero(geom.extruded(geom.fluid_cell, m).ravel())
    A = sp.block_diag([-lap_c[fu][:, fu], -lap_c[fv][:, fv], -lap_w[fw][:, fw]], format="csr")
    D = sp.hstack([_kron(D1, In, Im)[fc][:, fu],
                   _kron(In, D1, Im)[fc][:, fv],
                   _kron(In, In, Dz)[fc][:, fw]], format="csr")
    return StokesOperators(geom, _clean(A), _clean(D), [fu, fv, fw],
                           [(n, n, m), (n, n, m), (n, n, m - 1)],
                           fc, (n, n, m), geom.h ** 2 * h3)


def neumann_operators(geom: CellGeometry):
    """Gradient ``G`` from fluid cells to fluid faces (u-faces then v-faces).

    ``-G.T @ G`` is the cell Laplacian with zero flux through solid faces.
    Returns ``(G, cell_index, face_index)``.
    """
    n = geom.n
    I = sp.identity(n, format="csr")
    D1 = periodic_difference(n)
    fu = np.flatnonzero(geom.fluid_u.ravel())
    fv = np.flatnonzero(geom.fluid_v.ravel())
    fc = np.flatnonzero(geom.fluid_cell.ravel())
    Gx = -_kron(D1, I).T.tocsr()[fu][:, fc]
    Gy = -_kron(I, D1).T.tocsr()[fv][:, fc]
    G = sp.vstack([Gx, Gy], format="csr")
    return _clean(G), fc, (fu, fv)


def cell_laplacian_matrix(n: int) -> sp.csr_matrix:
    """Assembled periodic five-point Laplacian on cell centres."""
    I = sp.identity(n, format="csr")
    D1 = periodic_difference(n)
    L1 = -(D1.T @ D1)
    return _clean(_kron(L1, I) + _kron(I, L1))


def _clean(M):
    M = sp.csr_matrix(M)
    M.eliminate_zeros()
    M.sort_indices()
    return M


# ---------------------------------------------------------------------------
# CSV field dumps


def _coords_for(name: str, shp: tuple):
    n = shp[0]
    xc, xf = cell_centers(n), face_coords(n)
    xs = {"u": (xf, xc), "v": (xc, xf)}.get(name, (xc, xc))
    coords = list(xs)
    if len(shp) == 3:
        if name == "w":
            nz = shp[2]
            coords.append((np.arange(nz) + 0.5) / nz)
        else:
            nz = shp[2] - 1
            coords.append(np.arange(nz + 1) / nz)
    return coords


def write_field_csv(path, name: str, values: np.ndarray, coords=None) -> Path:
    """Write one component as ``i,j[,k],x,y[,z],value`` rows.

    ``coords`` defaults to the unit-cell MAC coordinates for component
    ``name`` (u, v, w or a cell quantity).
    """
    path = Path(path)
    values = np.asarray(values)
    if coords is None:
        coords = _coords_for(name, values.shape)
    three = values.ndim == 3
    header = ["i", "j", "k", "x", "y", "z", "value"] if three else ["i", "j", "x", "y", "value"]
    with path.open("w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh)
        wr.writerow(header)
        for idx in np.ndindex(values.shape):
            xyz = [format(float(coords[d][i]), ".17g") for d, i in enumerate(idx)]
            wr.writerow([*idx, *xyz, format(float(values[idx]), ".17g")])
    return path


def read_field_csv(path) -> np.ndarray:
    """Inverse of :func:`write_field_csv` (values only)."""
    with Path(path).open(encoding="utf-8") as fh:
        rd = csv.reader(fh)
        header = next(rd)
        nidx = 3 if "k" in header else 2
        rows = [r for r in rd]
    idx = np.array([[int(r[d]) for d in range(nidx)] for r in rows])
    vals = np.array([float(r[-1]) for r in rows])
    out = np.zeros(tuple(idx.max(axis=0) + 1))
    out[tuple(idx.T)] = vals
    return out
