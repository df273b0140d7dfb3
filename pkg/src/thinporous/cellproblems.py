"""Periodic cell problems and the effective permeability tensors.

* HTPM: 2D Stokes in Z'_f, ``K_ij = int_{Z'_f} w^i_j``
* PTPM: 3D Stokes in Z_f = Z'_f x (0, 1) with no-slip walls at z3 = 0, 1
* VTPM: Hele-Shaw problem for pi^i, ``K_ij = int_{Z'_f} (grad pi^i + e_i) . e_j``

Stokes systems are solved as symmetric saddle-point systems with MINRES,
pressures normalised to zero mean over the fluid cells.
"""

from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .grid import (CellGeometry, GeometryError, StaggeredField2D, StaggeredField3D,
                   neumann_operators, stokes_operators_2d, stokes_operators_3d)
from .linsolve import SolverConfig, SolveStats, cg_solve, dense_solve, minres_solve
from .regimes import Regime

log = logging.getLogger(__name__)


class IncompatibleProblemError(ValueError):
    """The cell problem has no solution for the requested geometry."""


def worker_count(tasks: int) -> int:
    cap = os.environ.get("TPM_THREADS")
    limit = int(cap) if cap else (os.cpu_count() or 1)
    return max(1, min(tasks, limit))


def _map(fn, items):
    items = list(items)
    workers = worker_count(len(items))
    if workers == 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


@dataclass
class PermeabilityTensor:
    regime: Regime
    k: np.ndarray
    n: int
    nz: Optional[int] = None
    residuals: list = field(default_factory=list)
    iterations: list = field(default_factory=list)
    asymmetry: float = 0.0

    def eigenvalues(self):
        return np.linalg.eigvalsh(0.5 * (self.k + self.k.T))

    def is_spd(self) -> bool:
        return bool(np.allclose(self.k, self.k.T, rtol=0, atol=1e-12 * np.abs(self.k).max())
                    and self.eigenvalues().min() > 0)

    def to_dict(self) -> dict:
        return {
            "regime": Regime(self.regime).value,
            "k": [[float(v) for v in row] for row in self.k],
            "n": self.n,
            "nz": self.nz,
            "residuals": [float(r) for r in self.residuals],
            "asymmetry": float(self.asymmetry),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PermeabilityTensor":
        k = np.array(d["k"], dtype=float)
        if k.shape != (2, 2):
            raise ValueError("permeability 'k' must be a 2x2 array")
        return cls(Regime(d["regime"]), k, int(d.get("n") or 0), d.get("nz"),
                   list(d.get("residuals", [])), [], float(d.get("asymmetry", 0.0)))

    @classmethod
    def from_json(cls, text: str) -> "PermeabilityTensor":
        return cls.from_dict(json.loads(text))


@dataclass
class CellSolution:
    """Per-direction cell fields.

    ``velocity[i]`` is a staggered field (``None`` for Hele-Shaw), ``pressure[i]``
    the cell-centred pressure with zeros in the solid.  For Hele-Shaw the
    face field ``flux[i] = grad pi^i + e_i`` (zero on solid faces) is kept.
    """

    geom: CellGeometry
    regime: Regime
    pressure: list
    velocity: list
    flux: list = field(default_factory=list)
    stats: list = field(default_factory=list)
    vectors: list = field(default_factory=list, repr=False)


# ---------------------------------------------------------------------------
# Stokes


def _saddle_system(ops):
    M = ops.saddle_matrix()
    # symmetric diagonal scaling keeps velocity/pressure blocks balanced;
    # without it the attainable residual stalls near 1e-10 at n = 128
    s_vel = 2.0 / np.sqrt(ops.A.diagonal().max())
    s = np.concatenate([np.full(ops.nvel, s_vel), np.ones(ops.ncell)])
    S = sp.diags(s)
    Ms = sp.csr_matrix(S @ M @ S)
    null = np.concatenate([np.zeros(ops.nvel), np.ones(ops.ncell)])
    return Ms, s, null


def _force_vector(ops, force):
    comps = []
    for c, shp in enumerate(ops.vel_shapes):
        comps.append(np.full(shp, float(force[c]) if c < len(force) else 0.0))
    return ops.gather_velocity(comps)


def _solve_stokes(ops, forces, cfg: SolverConfig, method: str):
    Ms, s, null = _saddle_system(ops)
    scfg = cfg.with_nullspace([null])

    def one(force):
        b = np.concatenate([_force_vector(ops, force), np.zeros(ops.ncell)])
        if method == "dense":
            y = dense_solve(Ms, s * b, nullspace=[null])
            bs = np.linalg.norm(s * b)
            res = np.linalg.norm(Ms @ y - s * b) / bs if bs > 0 else 0.0
            stats = SolveStats("dense", 0, float(res), True)
        elif method == "minres":
            y, stats = minres_solve(Ms, s * b, scfg)
        else:
            raise ValueError(f"unknown method {method!r}")
        return s * y, stats

    return _map(one, forces)


def _stokes_cell(geom, forces, cfg, method, three_d):
    ops = stokes_operators_3d(geom) if three_d else stokes_operators_2d(geom)
    results = _solve_stokes(ops, forces, cfg, method)
    vel, pres, stats, vectors = [], [], [], []
    for x, st in results:
        xv, xp = x[:ops.nvel], x[ops.nvel:]
        comps = ops.scatter_velocity(xv)
        p = ops.scatter_cells(xp)
        if three_d:
            u, v, pp = (_pad_levels(a) for a in (comps[0], comps[1], p))
            w = _pad_levels(comps[2])
            vel.append(StaggeredField3D(u, v, w, pp))
            p = pp
        else:
            vel.append(StaggeredField2D(comps[0], comps[1], p))
        pres.append(p)
        stats.append(st)
        vectors.append(x)
    k = np.zeros((len(forces), 2))
    for i, f in enumerate(vel):
        k[i, 0] = f.u.sum() * ops.weight
        k[i, 1] = f.v.sum() * ops.weight
    return vel, pres, stats, vectors, k, ops


def _pad_levels(a):
    # interior z3 levels -> full array with zero wall entries on both ends
    return np.pad(a, ((0, 0), (0, 0), (1, 1)))


def _tensor(regime, geom, k, stats):
    k = np.asarray(k, dtype=float)
    return PermeabilityTensor(regime, k, geom.n, geom.nz,
                              [s.residual for s in stats], [s.iterations for s in stats],
                              _asymmetry(k))


def _asymmetry(k):
    norm = np.linalg.norm(k)
    return float(abs(k[0, 1] - k[1, 0]) / norm) if norm > 0 else 0.0


def solve_stokes2d_cell(geom: CellGeometry, cfg: SolverConfig = SolverConfig(),
                        method: str = "minres"):
    """Solve -lap w^i + grad pi^i = e_i, div w^i = 0 on the periodic cell.

    Returns ``(CellSolution, PermeabilityTensor)``; the tensor is not
    symmetrised here.
    """
    if not geom.has_obstacle:
        raise IncompatibleProblemError(
            "periodic 2D Stokes cell problem without an obstacle has no solution: "
            "the body force cannot be balanced")
    forces = [(1.0, 0.0), (0.0, 1.0)]
    vel, pres, stats, vecs, k, _ = _stokes_cell(geom, forces, cfg, method, False)
    sol = CellSolution(geom, Regime.HTPM, pres, vel, stats=stats, vectors=vecs)
    return sol, _tensor(Regime.HTPM, geom, k, stats)


def solve_stokes3d_cell(geom: CellGeometry, cfg: SolverConfig = SolverConfig(),
                        method: str = "minres", forces: Optional[Sequence] = None):
    """Solve the 3D cell problem in Z_f with no-slip walls at z3 = 0 and 1.

    ``forces`` defaults to the two horizontal unit vectors; only those
    columns enter the tensor.  A zero force (the i = 3 problem) may be passed
    explicitly to check that its solution vanishes.
    """
    if geom.nz is None:
        raise GeometryError("3D cell problem needs a geometry with nz")
    forces = [(1.0, 0.0, 0.0), (0.0, 1.0, 0.0)] if forces is None else [tuple(f) for f in forces]
    vel, pres, stats, vecs, k, _ = _stokes_cell(geom, forces, cfg, method, True)
    sol = CellSolution(geom, Regime.PTPM, pres, vel, stats=stats, vectors=vecs)
    return sol, _tensor(Regime.PTPM, geom, k[:2] if len(forces) >= 2 else k, stats)


def dirichlet_energy(field, geom: CellGeometry) -> float:
    """Independent quadrature of int |grad w|^2 for a masked MAC field."""
    h = geom.h
    total = 0.0
    if isinstance(field, StaggeredField2D):
        for c in (field.u, field.v):
            for ax in (0, 1):
                total += np.sum((c - np.roll(c, 1, axis=ax)) ** 2)
        return float(total)  # (diff/h)^2 * h^2
    h3 = geom.h3
    vol = h * h * h3
    for c in (field.u, field.v, field.w):
        for ax in (0, 1):
            total += np.sum(((c - np.roll(c, 1, axis=ax)) / h) ** 2) * vol
        # end entries are the zero wall values
        total += np.sum((np.diff(c, axis=2) / h3) ** 2) * vol
    return float(total)


# ---------------------------------------------------------------------------
# Hele-Shaw


def solve_heleshaw_cell(geom: CellGeometry, cfg: SolverConfig = SolverConfig(),
                        method: str = "cg"):
    """Solve -lap pi^i = 0 in Z'_f with (grad pi^i + e_i) . n = 0 on dS'.

    Finite volumes on the fluid cells; solid faces carry zero flux.
    """
    G, fc, (fu, fv) = neumann_operators(geom)
    h2 = geom.h ** 2
    L = sp.csr_matrix(h2 * (G.T @ G))
    null = np.ones(fc.size)
    n = geom.n
    nfu = fu.size

    def one(i):
        e = np.concatenate([np.full(nfu, 1.0 if i == 0 else 0.0),
                            np.full(fv.size, 1.0 if i == 1 else 0.0)])
        b = -h2 * (G.T @ e)
        if method == "dense":
            x = dense_solve(L, b, nullspace=[null])
            bn = np.linalg.norm(b)
            st = SolveStats("dense", 0, float(np.linalg.norm(L @ x - b) / bn) if bn else 0.0, True)
        elif method == "cg":
            x, st = cg_solve(L, b, cfg.with_nullspace([null]))
        else:
            raise ValueError(f"unknown method {method!r}")
        q = G @ x + e
        return x, q, st

    results = _map(one, (0, 1))
    pres, flux, stats, vecs = [], [], [], []
    k = np.zeros((2, 2))
    for i, (x, q, st) in enumerate(results):
        p = np.zeros(n * n)
        p[fc] = x
        qu = np.zeros(n * n)
        qv = np.zeros(n * n)
        qu[fu] = q[:nfu]
        qv[fv] = q[nfu:]
        pres.append(p.reshape(n, n))
        flux.append(StaggeredField2D(qu.reshape(n, n), qv.reshape(n, n)))
        k[i, 0] = qu.sum() * h2
        k[i, 1] = qv.sum() * h2
        stats.append(st)
        vecs.append(x)
    sol = CellSolution(geom, Regime.VTPM, pres, [None, None], flux, stats, vecs)
    return sol, _tensor(Regime.VTPM, geom, k, stats)


def heleshaw_energy(sol: CellSolution, i: int) -> float:
    """int_{Z'_f} |grad pi^i + e_i|^2 by face quadrature."""
    q = sol.flux[i]
    return float((np.sum(q.u ** 2) + np.sum(q.v ** 2)) * sol.geom.h ** 2)


def vertical_profile(z):
    """Poiseuille profile (z3^2 - z3) / 2 of the reduced velocity."""
    z = np.asarray(z, dtype=float)
    return 0.5 * (z * z - z)


def profile_integral(rule: str = "exact", nz: Optional[int] = None) -> float:
    """int_0^1 (z^2 - z)/2 dz = -1/12 by the chosen rule.

    ``exact`` integrates the polynomial, ``gauss`` uses 2-point
    Gauss-Legendre (exact for quadratics), ``midpoint`` uses ``nz`` cells.
    """
    if rule == "exact":
        P = np.polynomial.Polynomial([0.0, -0.5, 0.5]).integ()
        return float(P(1.0) - P(0.0))
    if rule == "gauss":
        z, wts = _gauss01(2)
        return float(np.sum(wts * vertical_profile(z)))
    if rule == "midpoint":
        if not nz:
            raise ValueError("midpoint rule needs nz")
        z = (np.arange(nz) + 0.5) / nz
        return float(np.sum(vertical_profile(z)) / nz)
    raise ValueError(f"unknown rule {rule!r}")


def _gauss01(npts):
    x, w = np.polynomial.legendre.leggauss(npts)
    return 0.5 * (x + 1.0), 0.5 * w


def reconstruct_velocity(sol: CellSolution, i: int, z):
    """Explicit 3D velocity w^i(z', z3) = (z3^2 - z3)/2 (grad pi^i + e_i).

    Returns arrays ``(u, v)`` of shape (n, n, len(z)) on the MAC faces.
    """
    if sol.regime is not Regime.VTPM or not sol.flux:
        raise ValueError("reconstruction needs a Hele-Shaw solution")
    prof = vertical_profile(z)
    q = sol.flux[i]
    return q.u[:, :, None] * prof, q.v[:, :, None] * prof


def reduced3d_crosscheck(geom: CellGeometry, cfg: SolverConfig = SolverConfig(),
                         solution: Optional[CellSolution] = None):
    """Return ``(A, B)``: A from the explicit vertical reconstruction, B = K_V.

    A_ij = -12 int_{Z_f} w^i_j dz with w^i rebuilt from pi^i at Gauss points
    in z3; the identity A = B holds up to round-off.
    """
    if solution is None:
        solution, kt = solve_heleshaw_cell(geom, cfg)
        B = kt.k
    else:
        if solution.regime is not Regime.VTPM or not solution.flux:
            raise ValueError("crosscheck needs a Hele-Shaw cell solution")
        B = _heleshaw_k(solution)
    z, wts = _gauss01(3)
    h2 = geom.h ** 2
    A = np.zeros((2, 2))
    for i in range(2):
        u, v = reconstruct_velocity(solution, i, z)
        A[i, 0] = -12.0 * h2 * np.sum(u * wts)
        A[i, 1] = -12.0 * h2 * np.sum(v * wts)
    return A, B


def _heleshaw_k(sol):
    h2 = sol.geom.h ** 2
    return np.array([[q.u.sum() * h2, q.v.sum() * h2] for q in sol.flux])


# ---------------------------------------------------------------------------


def permeability(regime: Regime, geom: CellGeometry, cfg: SolverConfig = SolverConfig(),
                 return_solution: bool = False):
    """Dispatch to the regime's cell problem and symmetrise the tensor.

    The asymmetry before symmetrisation is kept in ``asymmetry``.
    """
    regime = Regime(regime)
    if regime is Regime.HTPM:
        sol, kt = solve_stokes2d_cell(geom, cfg)
    elif regime is Regime.PTPM:
        if geom.nz is None:
            raise GeometryError("PTPM permeability needs a 3D geometry (nz)")
        sol, kt = solve_stokes3d_cell(geom, cfg)
    else:
        sol, kt = solve_heleshaw_cell(geom, cfg)
    kt.asymmetry = _asymmetry(kt.k)
    kt.k = 0.5 * (kt.k + kt.k.T)
    if return_solution:
        return kt, sol
    return kt
