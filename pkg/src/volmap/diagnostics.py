"""Executable convergence analysis of the VSEM fixed-point iteration.

Between consecutive iterates ``f' = f^(m-1)`` and ``f = f^(m)`` the change
of every edge weight is linear in the vertex differences
``eps_t = f_t - f'_t``. Per tet, with edge ``{i, j}``, opposite edge
``{k, l}``, ``h_pq = f_p - f_q`` (current) and ``h'_pq`` (previous)::

    w_ij(f) - w_ij(f') = -c_i.eps_i - c_j.eps_j + c_k.eps_k + c_l.eps_l

where, with ``K = -1/(36 mu)``, ``B = h_li.h_kj``, ``D = h_li.h_lj``,
``A' = h'_ki.h'_lj`` and ``C' = h'_ki.h'_kj``::

    c_i = K (B h_lj  + A' h_kj  - D h_kj  - C' h_lj)
    c_j = K (B h'_ki + A' h'_li - D h'_ki - C' h'_li)
    c_k = K (B h_lj  + A' h'_li - D (h_kj  + h'_ki))
    c_l = K (B h'_ki + A' h_kj  - C' (h_lj + h'_li))

This grouping (and the signs in front of ``c_i`` and ``c_j``) is the one
that reproduces the directly computed difference to rounding error.

Because the Laplacian rows of interior vertices annihilate the current
iterate, ``L_II(f) eps_I^(m+1) = -[(L(f) - L(f')) f]_I``, which together with
the linear weight change gives a matrix ``T^(m)`` with
``eps^(m+1) = T^(m) eps^(m)``. Vectors of length ``3n`` are interleaved
vertex-major: entry ``3 t + s`` is coordinate ``s`` of vertex ``t``.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as spla

from . import stretch_laplacian as sl
from .mesh import TetMesh
from .stretch_laplacian import EDGE_TABLE
from .vsem import SolverError

logger = logging.getLogger(__name__)

MAX_DENSE = 3000


def _dot(a, b):
    return np.einsum("...i,...i->...", a, b)


def c_vectors(prev, curr, mu):
    """The four c-vectors of edge ``{i, j}`` for stacked tets.

    Parameters
    ----------
    prev, curr : (..., 4, 3) arrays
        Previous and current images of the tet vertices in ``(i, j, k, l)`` order.
    mu : (...,) array

    Returns
    -------
    (..., 4, 3) array of ``c_i, c_j, c_k, c_l``.
    """
    fi, fj, fk, fl = (curr[..., a, :] for a in range(4))
    gi, gj, gk, gl = (prev[..., a, :] for a in range(4))
    h_li, h_kj, h_lj = fl - fi, fk - fj, fl - fj
    g_ki, g_lj, g_kj, g_li = gk - gi, gl - gj, gk - gj, gl - gi
    K = (-1.0 / (36.0 * np.asarray(mu)))[..., None]
    B = _dot(h_li, h_kj)[..., None]
    D = _dot(h_li, h_lj)[..., None]
    A = _dot(g_ki, g_lj)[..., None]
    C = _dot(g_ki, g_kj)[..., None]
    ci = K * (B * h_lj + A * h_kj - D * h_kj - C * h_lj)
    cj = K * (B * g_ki + A * g_li - D * g_ki - C * g_li)
    ck = K * (B * h_lj + A * g_li - D * (h_kj + g_ki))
    cl = K * (B * g_ki + A * h_kj - C * (h_lj + g_li))
    return np.stack([ci, cj, ck, cl], axis=-2)


_SIGNS = np.array([-1.0, -1.0, 1.0, 1.0])


def weight_difference(mesh: TetMesh, f_prev, f_curr, edge) -> float:
    """Change of the assembled weight of ``edge`` from ``f_prev`` to ``f_curr``.

    Summed over all tets containing the edge, using the c-vector form.
    The direct equivalent is ``L(f_prev)[i, j] - L(f_curr)[i, j]``.
    """
    a, b = (int(e) for e in edge)
    fp = np.asarray(f_prev, dtype=float)
    fc = np.asarray(f_curr, dtype=float)
    eps = fc - fp
    total = 0.0
    T = mesh.tets
    rows = np.flatnonzero(np.any(T == a, axis=1) & np.any(T == b, axis=1))
    for t in rows:
        tet = T[t]
        for i, j, k, l in EDGE_TABLE:
            if {tet[i], tet[j]} == {a, b}:
                idx = tet[[i, j, k, l]]
                c = c_vectors(fp[idx], fc[idx], mesh.measure[t])
                total += float(np.sum(_SIGNS * _dot(c, eps[idx])))
    return total


def _weight_change_operator(mesh: TetMesh, f_prev, f_curr):
    """Sparse ``(3n, 3n)`` matrix ``G`` with ``G eps = (L(f) - L(f')) f``, interleaved.

    Row ``3 i + s`` holds the derivative of ``sum_j dw_ij (f_i^s - f_j^s)``.
    """
    n = mesh.n_vertices
    fp = np.asarray(f_prev, dtype=float)
    fc = np.asarray(f_curr, dtype=float)
    T = mesh.tets
    rows, cols, vals = [], [], []
    for perm in EDGE_TABLE:
        idx = T[:, perm]                                   # (q, 4) vertices i, j, k, l
        c = c_vectors(fp[idx], fc[idx], mesh.measure) * _SIGNS[None, :, None]   # (q, 4, 3)
        dij = fc[idx[:, 0]] - fc[idx[:, 1]]                # f_i - f_j, (q, 3)
        for end, sign in ((0, 1.0), (1, -1.0)):
            vert = idx[:, end]
            # row (vert, s), column (p, r): sign * dij[s] * c[p, r]
            v = sign * dij[:, :, None, None] * c[:, None, :, :]   # (q, 3, 4, 3)
            r = 3 * vert[:, None, None, None] + np.arange(3)[None, :, None, None]
            cc = 3 * idx[:, None, :, None] + np.arange(3)[None, None, None, :]
            r, cc = np.broadcast_arrays(r, cc)
            rows.append(r.ravel())
            cols.append(cc.ravel())
            vals.append(v.ravel())
    G = sparse.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(3 * n, 3 * n)).tocsr()
    G.sum_duplicates()
    return G


@dataclass(frozen=True)
class TransferOperator:
    """Dense transfer matrix with ``eps^(m+1) = matrix @ eps^(m)`` (interleaved).

    ``permutation`` maps coordinate-blocked vectors (all x, all y, all z)
    to the interleaved layout: ``interleaved = permutation @ blocked``.
    """

    matrix: np.ndarray
    permutation: sparse.csr_matrix

    def apply(self, eps) -> np.ndarray:
        """Apply to an ``(n, 3)`` difference table; returns an ``(n, 3)`` table."""
        e = np.asarray(eps, dtype=float)
        return (self.matrix @ e.ravel()).reshape(-1, 3)


def interleave_permutation(n: int) -> sparse.csr_matrix:
    """Permutation taking ``[x_1..x_n, y_1..y_n, z_1..z_n]`` to ``[x_1, y_1, z_1, x_2, ...]``."""
    t = np.arange(n)
    rows = np.concatenate([3 * t + s for s in range(3)])
    cols = np.concatenate([s * n + t for s in range(3)])
    return sparse.csr_matrix((np.ones(3 * n), (rows, cols)), shape=(3 * n, 3 * n))


def assemble_transfer(mesh: TetMesh, f_prev, f_curr, boundary=None) -> TransferOperator:
    """Transfer operator of the step from ``f_curr`` to the next VSEM iterate.

    ``boundary`` (rows of ``mesh.boundary_index``) is only checked against
    ``f_curr``; the boundary rows of the operator are zero.

    Raises
    ------
    ValueError
        If ``3 n`` exceeds the dense size guard.
    SolverError
        If ``L_II(f_curr)`` is singular.
    """
    n = mesh.n_vertices
    if 3 * n > MAX_DENSE:
        raise ValueError(f"dense transfer operator limited to 3n <= {MAX_DENSE}, got {3 * n}")
    fc = np.asarray(f_curr, dtype=float)
    if boundary is not None and not np.allclose(fc[mesh.boundary_index], boundary, rtol=0, atol=1e-12):
        raise ValueError("f_curr does not carry the given boundary")
    I = mesh.interior_index
    L = sl.assemble(mesh, fc)
    try:
        lu = spla.splu(L[I][:, I].tocsc())
    except RuntimeError as exc:
        raise SolverError(f"L_II is singular at the current iterate ({exc})") from exc
    G = _weight_change_operator(mesh, f_prev, fc).toarray()
    M = np.zeros((3 * n, 3 * n))
    for s in range(3):
        rows = 3 * I + s
        # L_II eps_I^s = -[(L(f) - L(f')) f]_I^s = -[G eps]_I^s
        M[rows] = -lu.solve(G[rows])
    return TransferOperator(M, interleave_permutation(n))


def _spectral(P):
    rho = float(np.max(np.abs(np.linalg.eigvals(P)))) if P.size else 0.0
    nrm = float(np.linalg.norm(P, 2)) if P.size else 0.0
    return rho, nrm


def convergence_panel(history: Sequence[np.ndarray], mesh: Optional[TetMesh] = None,
                      spectral: bool = False) -> dict:
    """Per-iteration convergence measures of a VSEM run.

    Parameters
    ----------
    history : sequence of (n, 3) arrays
        Iterates ``f^(0), f^(1), ...``; at least three.
    mesh : TetMesh, optional
        Needed for stretch-factor differences and the spectral columns.
    spectral : bool
        Accumulate ``P_m = T^(m) ... T^(1)`` densely and record its spectral
        radius and 2-norm (small meshes only; skipped beyond the size guard).

    Returns
    -------
    dict
        ``rows``: one dict per ``m >= 1`` with ``eps_norm`` (2-norm of
        ``f^(m) - f^(m-1)``), ``sigma_diff``, ``r_linear``
        (``|f* - f^(m)|_inf ** (1/m)`` with ``f*`` the last iterate; None
        when the difference is zero) and, if requested, ``rho`` and
        ``norm2``. ``summary``: tail maxima and monotonicity flags.
    """
    H = [np.asarray(f, dtype=float) for f in history]
    if len(H) < 3:
        raise ValueError("convergence panel needs at least three iterates")
    fstar = H[-1]
    sig = None
    if mesh is not None:
        with np.errstate(divide="ignore"):
            sig = [mesh.measure / np.abs(sl.tet_volumes(f, mesh.tets)) for f in H]
    do_spec = spectral and mesh is not None and 3 * mesh.n_vertices <= MAX_DENSE
    if spectral and not do_spec:
        logger.info("spectral columns skipped (mesh missing or above the dense size guard)")
    rows = []
    P = None
    for m in range(1, len(H)):
        row = {"iter": m, "eps_norm": float(np.linalg.norm(H[m] - H[m - 1]))}
        row["sigma_diff"] = float(np.linalg.norm(sig[m] - sig[m - 1])) if sig is not None else None
        d = float(np.max(np.abs(fstar - H[m])))
        row["r_linear"] = d ** (1.0 / m) if d > 0 else None
        if do_spec:
            if m < len(H) - 1:
                T = assemble_transfer(mesh, H[m - 1], H[m]).matrix
                P = T if P is None else T @ P
                row["rho"], row["norm2"] = _spectral(P)
            else:
                row["rho"] = row["norm2"] = None
        rows.append(row)

    tail = rows[-(len(rows) // 3 or 1):]
    rl = [r["r_linear"] for r in tail if r["r_linear"] is not None]
    summary = {
        "iterations": len(H) - 1,
        "r_linear_tail_max": max(rl) if rl else None,
        "r_linear_undefined": sum(r["r_linear"] is None for r in rows),
    }
    if do_spec:
        rho = [r["rho"] for r in rows if r.get("rho") is not None]
        nrm = [r["norm2"] for r in rows if r.get("norm2") is not None]
        t = rho[-(len(rho) // 3 or 1):]
        summary.update({
            "rho_max": max(rho) if rho else None,
            "rho_tail_nonincreasing": bool(all(b <= a + 1e-6 for a, b in zip(t, t[1:]))),
            "norm2_max": max(nrm) if nrm else None,
            "rho_le_norm2": bool(all(r <= s * (1 + 1e-10) + 1e-300 for r, s in zip(rho, nrm))),
        })
    return {"rows": rows, "summary": summary}


def write_panel(panel: dict, csv_path=None, json_path=None) -> None:
    """Write the panel rows as CSV and the summary as JSON."""
    rows = panel["rows"]
    if csv_path is not None:
        keys = list(rows[0].keys())
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(keys)
            for r in rows:
                w.writerow(["" if r[k] is None else _fmt(r[k]) for k in keys])
    if json_path is not None:
        with open(json_path, "w") as fh:
            json.dump(panel["summary"], fh, indent=2, sort_keys=True)
            fh.write("\n")


def _fmt(x):
    if isinstance(x, float):
        return f"{x:.17g}" if math.isfinite(x) else ""
    return str(x)
