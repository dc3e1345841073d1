"""Fixed-boundary stretch energy minimization (VSEM).

Starting from the Laplacian of the source mesh, the interior coordinates
are solved from

    L_II f_I = -L_IB f_B            (one solve per coordinate)

and the Laplacian is re-assembled at the new map until the energy stops
decreasing by more than the tolerance, or the iteration budget runs out.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import List, Optional

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as spla

from . import stretch_laplacian as sl
from .mesh import TetMesh, folding_count

logger = logging.getLogger(__name__)

COND_LIMIT = 1e14
RESIDUAL_TOL = 1e-10


class SolverError(RuntimeError):
    """A linear solve inside VSEM failed (singular, ill-conditioned or non-finite)."""


@dataclass(frozen=True)
class VsemConfig:
    """Settings for :func:`run`.

    Attributes
    ----------
    tol : float
        Stop once the energy decrease of one cycle is ``<= tol``.
    max_iters : int
        Maximum number of re-assembly cycles after the initial solve.
    solver : {"direct", "cg"}
        ``"cg"`` uses Jacobi-preconditioned conjugate gradients, but only
        when ``L_II`` passes an M-matrix probe; otherwise it falls back to
        the sparse LU factorization.
    keep_history : bool
        Store every iterate in the report (needed by the diagnostics).
    """

    tol: float = 1e-6
    max_iters: int = 5
    solver: str = "direct"
    keep_history: bool = False

    def __post_init__(self):
        if not self.tol >= 0:
            raise ValueError(f"tol must be >= 0, got {self.tol}")
        if int(self.max_iters) < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.solver not in ("direct", "cg"):
            raise ValueError(f"unknown solver {self.solver!r}")


@dataclass
class SolverReport:
    """Per-iteration record of a VSEM run.

    Entry ``m`` of each history list belongs to iterate ``f^(m)``; entry 0
    is the initial solve. ``eps_norm[0]`` measures ``f^(0)`` against the
    source vertex positions.
    """

    energy: List[float] = field(default_factory=list)
    eps_norm: List[float] = field(default_factory=list)
    sigma_mean: List[float] = field(default_factory=list)
    sigma_std: List[float] = field(default_factory=list)
    cond_estimate: List[float] = field(default_factory=list)
    termination: str = ""
    iterations: int = 0
    foldings: int = 0
    solver: str = "direct"
    maps: Optional[List[np.ndarray]] = field(default=None, repr=False)

    def summary(self) -> dict:
        d = asdict(self)
        d.pop("maps")
        return d


def _mmatrix_probe(A) -> bool:
    """True when ``A`` is a weakly diagonally dominant Z-matrix with a strictly dominant row."""
    A = A.tocsr()
    d = A.diagonal()
    off = A - sparse.diags(d)
    if off.nnz and off.data.max() > 0:
        return False
    slack = d - np.asarray(abs(off).sum(axis=1)).ravel()
    return bool(np.all(d > 0) and np.all(slack >= -1e-14 * d) and np.any(slack > 1e-14 * d))


def _condest(A, lu) -> float:
    n = A.shape[0]
    inv = spla.LinearOperator((n, n), matvec=lu.solve, rmatvec=lambda x: lu.solve(x, trans="T"),
                              dtype=float)
    return float(spla.onenormest(A) * spla.onenormest(inv))


def solve_interior(L, boundary, interior_index, boundary_index, solver: str = "direct",
                   iteration: int = 0, return_cond: bool = False):
    """Solve ``L_II f_I = -L_IB f_B`` for the three coordinates at once.

    Parameters
    ----------
    L : sparse (n, n) matrix
    boundary : (b, 3) array
        Boundary images, rows aligned with ``boundary_index``.
    interior_index, boundary_index : int arrays
    solver : {"direct", "cg"}
    iteration : int
        Only used to name the failing iteration in error messages.

    Returns
    -------
    (i, 3) array, plus the condition estimate when ``return_cond``.

    Raises
    ------
    SolverError
        If ``L_II`` is singular, its condition estimate exceeds ``1e14``,
        or the solve produces non-finite values.
    """
    I = np.asarray(interior_index)
    B = np.asarray(boundary_index)
    fB = np.asarray(boundary, dtype=float)
    if len(I) == 0:
        out = np.zeros((0, 3))
        return (out, 1.0) if return_cond else out
    L = sparse.csr_matrix(L)
    A = L[I][:, I].tocsc()
    b = -(L[I][:, B] @ fB)
    bnorm = np.linalg.norm(b)

    if solver == "cg" and _mmatrix_probe(A):
        dinv = 1.0 / A.diagonal()
        M = spla.LinearOperator(A.shape, matvec=lambda x: dinv * x, dtype=float)
        x = np.empty_like(b)
        for s in range(3):
            x[:, s], info = spla.cg(A, b[:, s], rtol=1e-13, atol=0.0, M=M, maxiter=20 * A.shape[0])
            if info != 0:
                raise SolverError(f"iteration {iteration}: conjugate gradients did not converge (info={info})")
        cond = float("nan")
    else:
        if solver == "cg":
            logger.info("iteration %d: L_II failed the definiteness probe; using LU", iteration)
        try:
            lu = spla.splu(A)
        except RuntimeError as exc:
            raise SolverError(f"iteration {iteration}: L_II is singular ({exc})") from exc
        cond = _condest(A, lu)
        if not cond <= COND_LIMIT:
            raise SolverError(f"iteration {iteration}: L_II is badly conditioned (estimate {cond:.3e})")
        x = lu.solve(np.ascontiguousarray(b))
        r = b - A @ x
        # one step of iterative refinement if the residual is not yet small
        if np.linalg.norm(r) > RESIDUAL_TOL * bnorm:
            x = x + lu.solve(np.ascontiguousarray(r))
    if not np.all(np.isfinite(x)):
        raise SolverError(f"iteration {iteration}: interior solve produced non-finite values")
    return (x, cond) if return_cond else x


def _record(report, mesh, f, prev, cond, keep):
    L = sl.assemble(mesh, f)
    e = sl.energy(mesh, f, L)
    if not math.isfinite(e):
        raise SolverError(f"iteration {len(report.energy)}: non-finite energy")
    st = sl.stretch_factors(mesh, f)
    report.energy.append(e)
    report.eps_norm.append(float(np.linalg.norm(f - prev)))
    report.sigma_mean.append(st.mean)
    report.sigma_std.append(st.std)
    report.cond_estimate.append(cond)
    if keep:
        report.maps.append(f.copy())
    return L, e


def run(mesh: TetMesh, boundary, config: VsemConfig = VsemConfig(),
        initial_laplacian=None):
    """Volume-preserving map of ``mesh`` into the ball with a fixed boundary.

    Parameters
    ----------
    mesh : TetMesh
        Measures should sum to ``4 pi / 3`` (see
        :func:`volmap.mesh.normalize_total_measure`).
    boundary : (b, 3) array
        Images of ``mesh.boundary_index``, normally on the unit sphere.
    config : VsemConfig
    initial_laplacian : sparse matrix, optional
        Replaces ``L(id)`` for the first solve.

    Returns
    -------
    f : (n, 3) array
    report : SolverReport

    Notes
    -----
    A cycle whose energy goes up is rejected: the run stops with
    termination ``"energy-increase"`` and returns the previous iterate.
    """
    fB = np.asarray(boundary, dtype=float)
    if fB.shape != (len(mesh.boundary_index), 3):
        raise ValueError(f"boundary must have shape ({len(mesh.boundary_index)}, 3), got {fB.shape}")
    I, B = mesh.interior_index, mesh.boundary_index
    report = SolverReport(solver=config.solver, maps=[] if config.keep_history else None)

    L = sl.assemble(mesh) if initial_laplacian is None else initial_laplacian
    f = np.empty((mesh.n_vertices, 3))
    f[B] = fB
    f[I], cond = solve_interior(L, fB, I, B, config.solver, 0, return_cond=True)
    L, e = _record(report, mesh, f, mesh.vertices, cond, config.keep_history)

    report.termination = "max_iters"
    for m in range(1, int(config.max_iters) + 1):
        g = f.copy()
        g[I], cond = solve_interior(L, fB, I, B, config.solver, m, return_cond=True)
        L_new = sl.assemble(mesh, g)
        e_new = sl.energy(mesh, g, L_new)
        delta = e - e_new
        if not math.isfinite(e_new):
            raise SolverError(f"iteration {m}: non-finite energy")
        if delta < 0:
            logger.info("iteration %d: energy increased by %.3e; keeping previous iterate", m, -delta)
            report.termination = "energy-increase"
            break
        L, e = _record(report, mesh, g, f, cond, config.keep_history)
        f = g
        report.iterations = m
        if delta <= config.tol:
            report.termination = "tolerance"
            break
    report.foldings = folding_count(mesh, f)
    return f, report


def parameterize(mesh: TetMesh, boundary=None, config: VsemConfig = VsemConfig(),
                 match_volume: bool = True, refine_iters: int = 10):
    """Boundary map plus VSEM in one call.

    ``mesh`` should already carry normalized measures. When ``boundary`` is
    None an area-preserving sphere map is computed. With ``match_volume``
    the boundary is scaled so that it encloses exactly the total measure.

    Returns
    -------
    f : (n, 3) array
    report : SolverReport
    boundary : (b, 3) array
        The boundary actually used (after any scaling).
    """
    from . import boundary_sphere as bs

    if boundary is None:
        boundary = bs.sphere_boundary_map(mesh, iters=refine_iters)
    if match_volume:
        boundary = bs.match_enclosed_volume(mesh, boundary)
    f, report = run(mesh, boundary, config)
    return f, report, np.asarray(boundary)
