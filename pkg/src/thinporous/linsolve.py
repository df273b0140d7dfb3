"""Symmetric sparse solvers: CG, MINRES, nullspace projection, dense oracle.

Matrices are stored as ``scipy.sparse.csr_matrix`` (row offsets, column
indices, values).  Both Krylov iterations are written out here so that the
nullspace is projected out of every Lanczos/search vector and the iterates
are fully deterministic.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.linalg
import scipy.sparse as sp

log = logging.getLogger(__name__)

DENSE_MAX_DIM = 20_000


class SolverError(RuntimeError):
    """Raised when an iteration fails to reach the requested tolerance."""

    def __init__(self, message: str, stats: "SolveStats"):
        super().__init__(message)
        self.stats = stats


class SingularMatrixError(np.linalg.LinAlgError):
    pass


@dataclass
class SolverConfig:
    rel_tol: float = 1e-10
    max_iter: Optional[int] = None
    nullspace: Optional[Sequence[np.ndarray]] = None
    # None or "jacobi"
    precond: Optional[str] = None

    def __post_init__(self):
        if not 0.0 < self.rel_tol < 1.0:
            raise ValueError(f"rel_tol must lie in (0, 1), got {self.rel_tol}")
        if self.max_iter is not None and self.max_iter < 1:
            raise ValueError(f"max_iter must be >= 1, got {self.max_iter}")
        if self.precond not in (None, "jacobi"):
            raise ValueError(f"unknown preconditioner {self.precond!r}")

    def iteration_cap(self, dim: int) -> int:
        if self.max_iter is not None:
            return self.max_iter
        return max(10_000, int(50 * math.sqrt(dim)))

    def with_nullspace(self, nullspace) -> "SolverConfig":
        return SolverConfig(self.rel_tol, self.max_iter, nullspace, self.precond)


@dataclass
class SolveStats:
    method: str
    iterations: int
    residual: float  # ||b - A x|| / ||b||, recomputed explicitly at exit
    converged: bool
    rhs_projected: bool = False
    history: list = field(default_factory=list, repr=False)

    def as_dict(self):
        return {
            "method": self.method,
            "iterations": self.iterations,
            "residual": self.residual,
            "converged": self.converged,
            "rhs_projected": self.rhs_projected,
        }


def as_sparse(A) -> sp.csr_matrix:
    """CSR copy of ``A`` with explicit zeros dropped."""
    A = sp.csr_matrix(A, dtype=float, copy=True)
    A.eliminate_zeros()
    A.sort_indices()
    return A


def check_symmetric(A, rtol: float = 1e-13) -> float:
    """Return the relative asymmetry of ``A``; raise if above ``rtol``."""
    A = sp.csr_matrix(A)
    scale = abs(A).max() if A.nnz else 0.0
    diff = A - A.T
    asym = abs(diff).max() if diff.nnz else 0.0
    rel = asym / scale if scale > 0 else 0.0
    if rel > rtol:
        raise ValueError(f"matrix is not symmetric (relative asymmetry {rel:.3e})")
    return rel


class NullspaceProjector:
    """Orthogonal projector onto the complement of span(vectors)."""

    def __init__(self, vectors: Optional[Sequence[np.ndarray]], dim: int):
        if vectors is None or len(vectors) == 0:
            self.basis = np.zeros((dim, 0))
        else:
            V = np.column_stack([np.asarray(v, dtype=float) for v in vectors])
            if V.shape[0] != dim:
                raise ValueError("nullspace vector length does not match system size")
            Q, R = np.linalg.qr(V)
            keep = np.abs(np.diag(R)) > 1e-12 * max(1.0, np.abs(R).max())
            self.basis = Q[:, keep]

    def __bool__(self):
        return self.basis.shape[1] > 0

    def __call__(self, x: np.ndarray) -> np.ndarray:
        if not self:
            return x
        return x - self.basis @ (self.basis.T @ x)

    def component(self, x: np.ndarray) -> float:
        if not self:
            return 0.0
        return float(np.linalg.norm(self.basis.T @ x))


def _jacobi(A, n):
    d = np.abs(np.asarray(A.diagonal(), dtype=float)) if sp.issparse(A) else np.abs(np.diag(A))
    d[d == 0.0] = 1.0
    return 1.0 / d


def _prepare(A, b, cfg: SolverConfig):
    b = np.asarray(b, dtype=float)
    n = b.shape[0]
    if A.shape != (n, n):
        raise ValueError(f"shape mismatch: A is {A.shape}, b has length {n}")
    proj = NullspaceProjector(cfg.nullspace, n)
    projected = False
    if proj:
        bn = np.linalg.norm(b)
        if bn > 0 and proj.component(b) > 1e-12 * bn:
            log.warning("right-hand side has a nullspace component; projecting it out")
            projected = True
        b = proj(b)
        if np.linalg.norm(b) <= 1e-14 * bn:
            # rhs lies entirely in the nullspace: x = 0 exactly
            b = np.zeros(n)
    return b, n, proj, projected


def _finish(method, A, b, x, proj, it, projected, cfg, history):
    bnorm = np.linalg.norm(b)
    res = np.linalg.norm(b - A @ x) / bnorm if bnorm > 0 else 0.0
    # the Krylov estimate can run slightly ahead of the true residual
    stats = SolveStats(method, it, float(res), res <= cfg.rel_tol * 1.01 or bnorm == 0,
                       projected, history)
    if not stats.converged:
        raise SolverError(
            f"{method} did not converge: residual {res:.3e} after {it} iterations "
            f"(tolerance {cfg.rel_tol:.1e})", stats)
    return x, stats


def cg_solve(A, b, cfg: SolverConfig = SolverConfig(), x0=None):
    """Conjugate gradients for symmetric positive (semi)definite ``A``.

    Returns ``(x, stats)``.  With a declared nullspace the right-hand side,
    every residual and the final iterate are projected onto its complement.
    """
    b, n, proj, projected = _prepare(A, b, cfg)
    bnorm = np.linalg.norm(b)
    x = np.zeros(n) if x0 is None else proj(np.array(x0, dtype=float))
    if bnorm == 0.0:
        return _finish("cg", A, b, np.zeros(n), proj, 0, projected, cfg, [])
    dinv = _jacobi(A, n) if cfg.precond == "jacobi" else None
    target = cfg.rel_tol * bnorm
    r = proj(b - A @ x)
    z = r * dinv if dinv is not None else r
    z = proj(z)
    p = z.copy()
    rz = r @ z
    history = []
    it = 0
    rnorm = np.linalg.norm(r)
    cap = cfg.iteration_cap(n)
    while it < cap:
        if rnorm <= target:
            # confirm against the true residual; restart on drift
            r = proj(b - A @ x)
            rnorm = np.linalg.norm(r)
            if rnorm <= target:
                break
            z = proj(r * dinv) if dinv is not None else r
            p = z.copy()
            rz = r @ z
        Ap = A @ p
        pAp = p @ Ap
        if pAp <= 0:
            break
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        if proj:
            r = proj(r)
        z = r * dinv if dinv is not None else r
        if proj and dinv is not None:
            z = proj(z)
        rz_new = r @ z
        p *= rz_new / rz
        p += z
        rz = rz_new
        rnorm = np.linalg.norm(r)
        history.append(rnorm / bnorm)
        it += 1
    x = proj(x)
    return _finish("cg", A, b, x, proj, it, projected, cfg, history)


def minres_solve(A, b, cfg: SolverConfig = SolverConfig(), x0=None):
    """MINRES (Paige & Saunders) for symmetric, possibly indefinite ``A``.

    The optional Jacobi preconditioner uses ``|diag(A)|`` with zero entries
    replaced by one, which keeps it positive definite on saddle-point blocks.
    """
    b, n, proj, projected = _prepare(A, b, cfg)
    bnorm = np.linalg.norm(b)
    x = np.zeros(n) if x0 is None else proj(np.array(x0, dtype=float))
    if bnorm == 0.0:
        return _finish("minres", A, b, np.zeros(n), proj, 0, projected, cfg, [])
    dinv = _jacobi(A, n) if cfg.precond == "jacobi" else None

    def prec(v):
        return proj(v * dinv) if dinv is not None else v

    target = cfg.rel_tol * bnorm
    r1 = proj(b - A @ x)
    y = prec(r1)
    beta1 = math.sqrt(max(r1 @ y, 0.0))
    if beta1 == 0.0:
        return _finish("minres", A, b, x, proj, 0, projected, cfg, [])

    oldb, beta, dbar, epsln, phibar = 0.0, beta1, 0.0, 0.0, beta1
    cs, sn = -1.0, 0.0
    w = np.zeros(n)
    w2 = np.zeros(n)
    r2 = r1.copy()
    history = []
    cap = cfg.iteration_cap(n)
    it = 0
    # phibar tracks ||r|| exactly only without preconditioning; in both cases
    # the true residual is confirmed before stopping
    est_target = target if dinv is None else cfg.rel_tol * beta1
    next_check = 0
    while it < cap:
        it += 1
        v = y / beta
        y = A @ v
        if proj:
            y = proj(y)
        if it >= 2:
            y -= (beta / oldb) * r1
        alfa = v @ y
        y -= (alfa / beta) * r2
        r1 = r2
        r2 = y
        y = prec(r2)
        oldb = beta
        beta = math.sqrt(max(r2 @ y, 0.0))

        oldeps = epsln
        delta = cs * dbar + sn * alfa
        gbar = sn * dbar - cs * alfa
        epsln = sn * beta
        dbar = -cs * beta
        gamma = max(math.hypot(gbar, beta), np.finfo(float).tiny)
        cs = gbar / gamma
        sn = beta / gamma
        phi = cs * phibar
        phibar = sn * phibar

        w1 = w2
        w2 = w
        w = (v - oldeps * w1 - delta * w2) / gamma
        x += phi * w
        history.append(phibar / beta1)
        if beta == 0.0:
            break
        if phibar <= est_target and it >= next_check:
            if np.linalg.norm(b - A @ proj(x)) <= target:
                break
            next_check = it + 10
    x = proj(x)
    return _finish("minres", A, b, x, proj, it, projected, cfg, history)


def dense_solve(A, b, nullspace: Optional[Sequence[np.ndarray]] = None):
    """Direct partial-pivoting LU solve; used as an oracle in tests.

    With a declared nullspace the system is bordered by the nullspace
    vectors, which yields the solution orthogonal to them.
    """
    A = A.toarray() if sp.issparse(A) else np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    n = A.shape[0]
    if n > DENSE_MAX_DIM:
        raise ValueError(f"dense_solve limited to dimension {DENSE_MAX_DIM}, got {n}")
    if nullspace is not None and len(nullspace) > 0:
        N = NullspaceProjector(nullspace, n).basis
        k = N.shape[1]
        M = np.block([[A, N], [N.T, np.zeros((k, k))]])
        rhs = np.concatenate([b - N @ (N.T @ b), np.zeros(k)])
        return _lu(M, rhs)[:n]
    return _lu(A, b)


def _lu(M, rhs):
    lu, piv = scipy.linalg.lu_factor(M, check_finite=True)
    d = np.abs(np.diag(lu))
    if d.min() <= 1e-13 * d.max():
        raise SingularMatrixError("matrix is numerically singular; declare its nullspace")
    return scipy.linalg.lu_solve((lu, piv), rhs)
