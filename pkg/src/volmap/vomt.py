"""Projected gradient method for volume-preserving optimal transport maps.

The transport cost of a map ``f`` is

    C(f) = sum_t nu_t |v_t - f_t|^2,    nu_t = 1/4 sum of the measures of the tets at v_t

and each iteration takes an exact line-search gradient step (optionally
with Nesterov or FISTA momentum), then projects back onto volume-preserving
maps by running VSEM from the Laplacian of the unprojected iterate and
applying the cost-optimal rotation.

Because ``C`` is quadratic with Hessian ``2 D`` (``D = I_3 (x) diag(nu)``),
the minimizer of ``C`` along ``-g`` is available in closed form:
``d/da C(f - a g) = -|g|^2 + 2 a g^T D g``, so ``a* = |g|^2 / (2 g^T D g)``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import List, Optional

import numpy as np

from . import stretch_laplacian as sl
from . import vsem
from .mesh import BALL_VOLUME, TetMesh, as_coords, build_mesh, folding_count

logger = logging.getLogger(__name__)

ACCEL_MODES = ("none", "nesterov", "fista")


@dataclass(frozen=True)
class VomtConfig:
    """Settings for :func:`run`.

    Attributes
    ----------
    tol : float
        Stop once the cost decrease of one outer step is ``<= tol``.
    max_iters : int
        Outer (projected gradient) iterations.
    accel : {"none", "nesterov", "fista"}
    inner : VsemConfig
        Settings of the VSEM projection.
    eta : float, optional
        Lower end of the step window ``[eta, 2/L]``; defaults to ``1/L``.
    """

    tol: float = 0.0
    max_iters: int = 2
    accel: str = "fista"
    inner: vsem.VsemConfig = vsem.VsemConfig()
    eta: Optional[float] = None

    def __post_init__(self):
        if int(self.max_iters) < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.accel not in ACCEL_MODES:
            raise ValueError(f"accel must be one of {ACCEL_MODES}, got {self.accel!r}")
        if not self.tol >= 0:
            raise ValueError(f"tol must be >= 0, got {self.tol}")
        if self.eta is not None and not self.eta > 0:
            raise ValueError(f"eta must be positive, got {self.eta}")


@dataclass
class VomtReport:
    """History of a VOMT run.

    ``cost[m]``, ``energy[m]`` and friends belong to the accepted iterate
    ``f^(m)``; ``step[m]`` is the (clamped) step that produced ``f^(m+1)``
    or the rejected trial that ended the run.
    """

    cost: List[float] = field(default_factory=list)
    energy: List[float] = field(default_factory=list)
    sigma_mean: List[float] = field(default_factory=list)
    sigma_std: List[float] = field(default_factory=list)
    eps_norm: List[float] = field(default_factory=list)
    step: List[float] = field(default_factory=list)
    step_clamped: List[bool] = field(default_factory=list)
    eta: float = 0.0
    lipschitz: float = 0.0
    termination: str = ""
    iterations: int = 0
    foldings: int = 0
    rotation: List[List[float]] = field(default_factory=list)
    initial: Optional[vsem.SolverReport] = None
    projections: List[vsem.SolverReport] = field(default_factory=list)
    maps: Optional[List[np.ndarray]] = field(default=None, repr=False)

    def summary(self) -> dict:
        d = asdict(self)
        d.pop("maps")
        d["initial"] = self.initial.summary() if self.initial else None
        d["projections"] = [p.summary() for p in self.projections]
        return d


def vertex_measure(mesh: TetMesh) -> np.ndarray:
    """Quarter of the summed measure of the tets around each vertex."""
    nu = np.zeros(mesh.n_vertices)
    np.add.at(nu, mesh.tets.ravel(), np.repeat(mesh.measure / 4.0, 4))
    return nu


def prepare_source(mesh: TetMesh) -> TetMesh:
    """Centre the mesh at its mass centroid and scale it to the volume of the unit ball.

    The transport cost compares source and image positions directly, so the
    source should sit where the ball is. The measure keeps its relative
    distribution and is renormalized to total ``4 pi / 3``.
    """
    nu = vertex_measure(mesh)
    centre = nu @ mesh.vertices / nu.sum()
    c = (BALL_VOLUME / float(mesh.volumes.sum())) ** (1.0 / 3.0)
    V = (mesh.vertices - centre) * c
    return build_mesh(V, mesh.tets, measure=mesh.measure * (BALL_VOLUME / mesh.total_measure))


def cost(mesh: TetMesh, coords, nu) -> float:
    """Transport cost ``sum_t nu_t |v_t - f_t|^2``."""
    d = mesh.vertices - as_coords(mesh, coords)
    return float(np.einsum("i,ij,ij->", np.asarray(nu), d, d))


def vec(f) -> np.ndarray:
    """Stack the three coordinate columns into one ``3n`` vector."""
    return np.asarray(f).ravel(order="F")


def unvec(x) -> np.ndarray:
    return np.asarray(x).reshape(3, -1).T


def cost_gradient(mesh: TetMesh, coords, nu) -> np.ndarray:
    """``-2 (I_3 (x) diag(nu)) vec(v - f)`` as a ``3n`` vector."""
    d = mesh.vertices - as_coords(mesh, coords)
    return -2.0 * vec(np.asarray(nu)[:, None] * d)


def exact_step(coords, grad, nu) -> float:
    """Exact minimizer ``|g|^2 / (2 g^T D g)`` of the cost along ``-grad``.

    Raises
    ------
    ValueError
        If the gradient is zero (nothing to minimize along).
    """
    g = unvec(grad)
    gg = float(np.sum(g * g))
    if gg == 0.0:
        raise ValueError("zero gradient: the map is already cost-optimal")
    gdg = float(np.einsum("i,ij,ij->", np.asarray(nu), g, g))
    return gg / (2.0 * gdg)


def optimal_rotation(mesh: TetMesh, coords, nu):
    """Rotation ``R`` minimizing ``C(f R^T)`` (weighted orthogonal Procrustes).

    Returns
    -------
    R : (3, 3) array
        Proper rotation, ``det R = 1``.
    degenerate : bool
        True when the weighted cross-covariance has rank below 2; the
        identity is returned in that case.
    """
    f = as_coords(mesh, coords)
    v = mesh.vertices
    # sum_t nu_t v_t . (R f_t) = trace(R H) with H = sum_t nu_t f_t v_t^T
    H = f.T @ (np.asarray(nu)[:, None] * v)
    U, S, Vt = np.linalg.svd(H)
    if S[0] == 0 or S[1] <= 1e-12 * S[0]:
        logger.warning("weighted cross-covariance is rank deficient; using the identity rotation")
        return np.eye(3), True
    d = np.sign(np.linalg.det(Vt.T @ U.T))
    R = Vt.T @ np.diag([1.0, 1.0, d]) @ U.T
    return R, False


def project(mesh: TetMesh, coords, boundary, inner: vsem.VsemConfig = vsem.VsemConfig(), nu=None):
    """Send a map back to the volume-preserving set.

    Runs VSEM with the fixed ``boundary``, starting from the Laplacian of
    ``coords`` instead of that of the source mesh, then rotates the result
    optimally for the transport cost.

    Returns
    -------
    f : (n, 3) array
    R : (3, 3) array
        The rotation that was applied (``f = g R^T`` for the VSEM output ``g``).
    report : SolverReport
    """
    if nu is None:
        nu = vertex_measure(mesh)
    L0 = sl.assemble(mesh, coords)
    g, report = vsem.run(mesh, boundary, inner, initial_laplacian=L0)
    R, _ = optimal_rotation(mesh, g, nu)
    return g @ R.T, R, report


def fista_lambdas(count: int) -> np.ndarray:
    """``lambda_0 = 0``, ``lambda_m = (1 + sqrt(1 + 4 lambda_{m-1}^2)) / 2``."""
    lam = np.zeros(count + 1)
    for m in range(1, count + 1):
        lam[m] = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * lam[m - 1] ** 2))
    return lam


def _record(report, mesh, f, nu, keep):
    st = sl.stretch_factors(mesh, f)
    report.cost.append(cost(mesh, f, nu))
    report.energy.append(sl.energy(mesh, f))
    report.sigma_mean.append(st.mean)
    report.sigma_std.append(st.std)
    if keep:
        report.maps.append(f.copy())


def run(mesh: TetMesh, boundary=None, config: VomtConfig = VomtConfig(),
        initial=None, keep_history: bool = False):
    """Projected gradient VOMT map of ``mesh``.

    Parameters
    ----------
    mesh : TetMesh
        Measures normalized to ``4 pi / 3`` and vertices positioned where
        the transport cost should be measured (normally centred, with the
        same volume as the ball).
    boundary : (b, 3) array, optional
        Fixed boundary for every projection. Computed with
        :func:`volmap.vsem.parameterize` when omitted.
    config : VomtConfig
    initial : tuple, optional
        ``(f0, report0, boundary)`` from an earlier VSEM run, reused as the
        starting map instead of running VSEM again.
    keep_history : bool
        Store every accepted iterate in ``report.maps``.

    Returns
    -------
    f : (n, 3) array
    report : VomtReport

    Notes
    -----
    The starting VSEM map is rotated optimally too. Each projection uses
    the boundary of the current iterate, so the boundary of every iterate
    is the initial one times the accumulated rotation. The run stops when
    the cost does not decrease (keeping the previous iterate), when the
    decrease is ``<= tol``, or after ``max_iters`` steps.
    """
    nu = vertex_measure(mesh)
    Lip = 2.0 * float(nu.max())
    eta = 1.0 / Lip if config.eta is None else float(config.eta)
    hi = 2.0 / Lip
    if eta > hi:
        raise ValueError(f"eta={eta} exceeds the step bound 2/L={hi}")

    if initial is not None:
        f0, rep0, fB = initial
        f0 = np.asarray(f0, dtype=float)
    else:
        f0, rep0, fB = vsem.parameterize(mesh, boundary, config.inner)
    R0, _ = optimal_rotation(mesh, f0, nu)
    f = f0 @ R0.T
    R_acc = R0

    report = VomtReport(eta=eta, lipschitz=Lip, initial=rep0, maps=[] if keep_history else None)
    _record(report, mesh, f, nu, keep_history)
    report.eps_norm.append(0.0)
    c = report.cost[0]

    lam = fista_lambdas(int(config.max_iters) + 2)
    hat_prev = None
    report.termination = "max_iters"
    B = mesh.boundary_index
    for m in range(1, int(config.max_iters) + 1):
        g = cost_gradient(mesh, f, nu)
        if not np.any(g):
            report.termination = "tolerance"
            break
        alpha = exact_step(f, g, nu)
        clamped = not (eta <= alpha <= hi)
        alpha = min(max(alpha, eta), hi)
        report.step.append(alpha)
        report.step_clamped.append(clamped)

        hat = f - alpha * unvec(g)
        if config.accel == "none" or hat_prev is None:
            bar = hat
        elif config.accel == "nesterov":
            k = m - 1
            bar = hat + (k / (k + 3.0)) * (hat - hat_prev)
        else:
            beta = (1.0 - lam[m]) / lam[m + 1]
            bar = (1.0 - beta) * hat + beta * hat_prev
        hat_prev = hat

        f_new, R, prep = project(mesh, bar, f[B], config.inner, nu)
        c_new = cost(mesh, f_new, nu)
        report.projections.append(prep)
        if not c_new < c:
            logger.info("outer step %d: cost %.6e did not decrease from %.6e", m, c_new, c)
            report.termination = "cost-increase"
            break
        R_acc = R @ R_acc
        report.eps_norm.append(float(np.linalg.norm(f_new - f)))
        f = f_new
        _record(report, mesh, f, nu, keep_history)
        report.iterations = m
        delta = c - c_new
        c = c_new
        if delta <= config.tol:
            report.termination = "tolerance"
            break
    report.rotation = R_acc.tolist()
    report.foldings = folding_count(mesh, f)
    return f, report
