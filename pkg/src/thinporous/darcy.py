"""Macroscale Darcy problem on a rectangle with no-flux walls.

    V = c K (f - grad P),  div V = 0 in omega,  V . n = 0 on the boundary,

with c = 1/eta (HTPM, PTPM) or 1/(12 eta) (VTPM).  Cell-centred finite
volumes: P at cell centres, V normal components on faces.  The tensor is
applied face-wise through ``K_h``; tangential components are averaged from
the four neighbouring interior faces, which keeps ``G.T K_h G`` symmetric.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from .cellproblems import PermeabilityTensor
from .linsolve import SolverConfig, SolveStats, cg_solve
from .regimes import ExponentReport, Regime, ValidityError


class DarcyError(ValueError):
    pass


@dataclass
class MacroDomain:
    """Rectangle (0, Lx) x (0, Ly) with an m x my cell grid and body force f'."""

    Lx: float
    Ly: float
    m: int
    my: int
    eta: float = 1.0
    fx: Optional[np.ndarray] = None
    fy: Optional[np.ndarray] = None

    def __post_init__(self):
        if not (self.Lx > 0 and self.Ly > 0):
            raise DarcyError("domain lengths must be positive")
        if self.m < 2 or self.my < 2:
            raise DarcyError("need at least 2 x 2 cells")
        if not self.eta > 0:
            raise DarcyError("viscosity must be positive")
        shape = (self.m, self.my)
        self.fx = np.zeros(shape) if self.fx is None else np.broadcast_to(
            np.asarray(self.fx, dtype=float), shape).copy()
        self.fy = np.zeros(shape) if self.fy is None else np.broadcast_to(
            np.asarray(self.fy, dtype=float), shape).copy()
        if not (np.all(np.isfinite(self.fx)) and np.all(np.isfinite(self.fy))):
            raise DarcyError("body force must be finite")

    @property
    def hx(self):
        return self.Lx / self.m

    @property
    def hy(self):
        return self.Ly / self.my

    def centers(self):
        x = (np.arange(self.m) + 0.5) * self.hx
        y = (np.arange(self.my) + 0.5) * self.hy
        return np.meshgrid(x, y, indexing="ij")

    @classmethod
    def from_force(cls, Lx, Ly, m, my, force: Callable, eta=1.0):
        """Sample ``force(x, y) -> (fx, fy)`` at the cell centres."""
        dom = cls(Lx, Ly, m, my, eta)
        X, Y = dom.centers()
        fx, fy = force(X, Y)
        dom.fx = np.broadcast_to(np.asarray(fx, dtype=float), X.shape).copy()
        dom.fy = np.broadcast_to(np.asarray(fy, dtype=float), X.shape).copy()
        return dom


@dataclass
class DarcySolution:
    domain: MacroDomain
    P: np.ndarray  # (m, my), zero mean
    Vx: np.ndarray  # (m + 1, my), boundary faces zero
    Vy: np.ndarray  # (m, my + 1)
    prefactor: float
    k: np.ndarray
    stats: SolveStats = field(repr=False, default=None)

    def divergence(self):
        d = self.domain
        return np.diff(self.Vx, axis=0) / d.hx + np.diff(self.Vy, axis=1) / d.hy

    def cell_velocity(self):
        """Face velocities averaged to cell centres."""
        return 0.5 * (self.Vx[1:] + self.Vx[:-1]), 0.5 * (self.Vy[:, 1:] + self.Vy[:, :-1])

    def summary(self) -> dict:
        d = self.domain
        vx, vy = self.Vx, self.Vy
        return {
            "prefactor": self.prefactor,
            "k": self.k.tolist(),
            "residual": self.stats.residual if self.stats else None,
            "iterations": self.stats.iterations if self.stats else None,
            "max_abs_velocity": float(max(np.abs(vx).max(), np.abs(vy).max())),
            "boundary_flux": float((vx[0].sum() - vx[-1].sum()) * d.hy
                                   + (vy[:, 0].sum() - vy[:, -1].sum()) * d.hx),
            "flux_x_midline": float(vx[d.m // 2].sum() * d.hy),
            "flux_y_midline": float(vy[:, d.my // 2].sum() * d.hx),
            "max_abs_divergence": float(np.abs(self.divergence()).max()),
            "mean_pressure": float(self.P.mean()),
        }


def prefactor(regime: Regime, eta: float) -> float:
    return 1.0 / (12.0 * eta) if Regime(regime) is Regime.VTPM else 1.0 / eta


def _difference(m, h):
    # interior faces 1..m-1 from cells: (P_{i} - P_{i-1}) / h
    e = np.ones(m)
    return sp.csr_matrix(sp.diags([-e[:-1], e[:-1]], [0, 1], shape=(m - 1, m))) / h


def _tangential_average(m, my):
    """Average the y-face values around each interior x-face (weights 1/4).

    x-face (i + 1/2, j), i = 0..m-2, touches the y-faces (i, j +- 1/2) and
    (i + 1, j +- 1/2); boundary y-faces are absent from the unknowns.
    """
    nxf = (m - 1) * my
    nyf = m * (my - 1)
    rows, cols = [], []
    for i in range(m - 1):
        for j in range(my):
            r = i * my + j
            for ic in (i, i + 1):
                for jf in (j - 1, j):  # y-face between cells jf and jf + 1
                    if 0 <= jf < my - 1:
                        rows.append(r)
                        cols.append(ic * (my - 1) + jf)
    return sp.csr_matrix((np.full(len(rows), 0.25), (rows, cols)), shape=(nxf, nyf))


@dataclass
class _Operators:
    G: sp.csr_matrix
    Kh: sp.csr_matrix
    nxf: int


def _operators(dom: MacroDomain, k: np.ndarray) -> _Operators:
    m, my = dom.m, dom.my
    Gx = sp.kron(_difference(m, dom.hx), sp.identity(my), format="csr")
    Gy = sp.kron(sp.identity(m), _difference(my, dom.hy), format="csr")
    G = sp.vstack([Gx, Gy], format="csr")
    T = _tangential_average(m, my)
    nxf, nyf = Gx.shape[0], Gy.shape[0]
    Kh = sp.bmat([[k[0, 0] * sp.identity(nxf), k[0, 1] * T],
                  [k[1, 0] * T.T, k[1, 1] * sp.identity(nyf)]], format="csr")
    return _Operators(G, Kh, nxf)


def _face_force(dom: MacroDomain):
    fx = 0.5 * (dom.fx[1:] + dom.fx[:-1])
    fy = 0.5 * (dom.fy[:, 1:] + dom.fy[:, :-1])
    return np.concatenate([fx.ravel(), fy.ravel()])


def _check_spd(k):
    k = np.asarray(k, dtype=float)
    if k.shape != (2, 2) or not np.all(np.isfinite(k)):
        raise DarcyError("permeability must be a finite 2x2 matrix")
    if abs(k[0, 1] - k[1, 0]) > 1e-12 * np.abs(k).max():
        raise DarcyError("permeability must be symmetric")
    if np.linalg.eigvalsh(k).min() <= 0:
        raise DarcyError("permeability must be positive definite")
    return k


def gauss_balance(dom: MacroDomain, K) -> tuple:
    """(sum of cell divergences of c K f', net boundary flux) -- both vanish.

    The first term telescopes over interior faces; the second is zero by
    the no-flux construction.  Equality is the Neumann solvability condition.
    """
    k, c = _k_and_prefactor(K, dom)
    ops = _operators(dom, k)
    b = ops.G.T @ (ops.Kh @ _face_force(dom)) * c
    return float(b.sum() * dom.hx * dom.hy), 0.0


def _k_and_prefactor(K, dom):
    if isinstance(K, PermeabilityTensor):
        return _check_spd(K.k), prefactor(K.regime, dom.eta)
    k, regime = K
    return _check_spd(k), prefactor(regime, dom.eta)


def solve_darcy(dom: MacroDomain, K, cfg: SolverConfig = SolverConfig(), x0=None) -> DarcySolution:
    """Solve the Darcy problem.  ``K`` is a PermeabilityTensor or ``(k, regime)``."""
    k, c = _k_and_prefactor(K, dom)
    ops = _operators(dom, k)
    F = _face_force(dom)
    L = sp.csr_matrix(ops.G.T @ ops.Kh @ ops.G)
    b = ops.G.T @ (ops.Kh @ F)
    ones = np.ones(dom.m * dom.my)
    P, stats = cg_solve(L, b, cfg.with_nullspace([ones]), x0=x0)
    P -= P.mean()
    flux = c * (ops.Kh @ (F - ops.G @ P))
    m, my = dom.m, dom.my
    Vx = np.zeros((m + 1, my))
    Vy = np.zeros((m, my + 1))
    Vx[1:-1] = flux[:ops.nxf].reshape(m - 1, my)
    Vy[:, 1:-1] = flux[ops.nxf:].reshape(m, my - 1)
    return DarcySolution(dom, P.reshape(m, my), Vx, Vy, c, k, stats)


@dataclass
class ScaledApproximation:
    epsilon: float
    exponent: float
    factor: float
    Vx: np.ndarray
    Vy: np.ndarray
    P: np.ndarray


def scale_back(sol: DarcySolution, report: ExponentReport, epsilon: float) -> ScaledApproximation:
    """Physical-scale averages: velocity times eps**vel_scale_exp, P unchanged.

    Refused (ValidityError) when gamma exceeds the critical value.
    """
    if not report.darcy_valid:
        raise ValidityError(
            f"gamma={report.gamma} > gamma_c={report.gamma_c}: inertia is not negligible, "
            "Darcy reconstruction refused")
    if not 0 < epsilon <= 1:
        raise ValueError(f"epsilon must lie in (0, 1], got {epsilon}")
    expo = float(report.vel_scale_exp)
    factor = float(epsilon) ** expo
    return ScaledApproximation(float(epsilon), expo, factor, sol.Vx * factor, sol.Vy * factor,
                               sol.P.copy())


def manufactured_pressure(X, Y, Lx=1.0, Ly=1.0):
    return np.cos(np.pi * X / Lx) * np.cos(np.pi * Y / Ly)


def manufactured_force(Lx=1.0, Ly=1.0):
    """f = grad P* + rot psi with psi = sin^2(pi x/Lx) sin^2(pi y/Ly).

    For isotropic K the rotational part is divergence-free and vanishes
    normal to the walls, so P* (minus its mean) is the exact pressure and
    c K rot psi the exact velocity.
    """
    ax, ay = np.pi / Lx, np.pi / Ly

    def force(X, Y):
        gx = ay * np.sin(ax * X) ** 2 * np.sin(2 * ay * Y)
        gy = -ax * np.sin(2 * ax * X) * np.sin(ay * Y) ** 2
        px = -ax * np.sin(ax * X) * np.cos(ay * Y)
        py = -ay * np.cos(ax * X) * np.sin(ay * Y)
        return px + gx, py + gy

    return force
