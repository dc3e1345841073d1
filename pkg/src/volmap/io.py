"""Mesh, density, report and history files.

Mesh formats: Gmsh MSH 2.2 ASCII (tetrahedra are element type 4), TetGen
``.node``/``.ele`` pairs and legacy VTK ASCII unstructured grids (cell type
10). Floats are written with 17 significant digits so that a write/read
cycle reproduces the coordinates exactly.
"""

from __future__ import annotations

import csv
import json
import math
import os
from importlib import resources
from pathlib import Path

import numpy as np

from .mesh import MeshError, TetMesh, build_mesh

SCHEMA_VERSION = "1.0"


def _f(x) -> str:
    return f"{float(x):.17g}"


def _lines(path):
    try:
        with open(path) as fh:
            return fh.read().splitlines()
    except OSError as exc:
        raise MeshError(f"{path}: cannot read ({exc.strerror})") from exc


# --------------------------------------------------------------------- Gmsh

def read_msh(path):
    """Vertices and tets (0-based) of a Gmsh 2.2 ASCII file; non-tet elements are skipped."""
    lines = [ln.strip() for ln in _lines(path)]
    try:
        fmt = lines.index("$MeshFormat")
        version, ftype = lines[fmt + 1].split()[:2]
        if not version.startswith("2") or ftype != "0":
            raise MeshError(f"{path}: only MSH 2.x ASCII is supported (got version {version}, type {ftype})")
        k = lines.index("$Nodes")
        nn = int(lines[k + 1])
        node_rows = [ln.split() for ln in lines[k + 2:k + 2 + nn]]
        ids = np.array([int(r[0]) for r in node_rows])
        verts = np.array([[float(v) for v in r[1:4]] for r in node_rows])
        k = lines.index("$Elements")
        ne = int(lines[k + 1])
        tets = []
        for ln in lines[k + 2:k + 2 + ne]:
            r = ln.split()
            if int(r[1]) == 4:
                ntags = int(r[2])
                tets.append([int(v) for v in r[3 + ntags:7 + ntags]])
    except (ValueError, IndexError) as exc:
        raise MeshError(f"{path}: malformed MSH file ({exc})") from exc
    if not tets:
        raise MeshError(f"{path}: no tetrahedra (element type 4)")
    lookup = {int(i): t for t, i in enumerate(ids)}
    try:
        T = np.array([[lookup[v] for v in tet] for tet in tets], dtype=np.int64)
    except KeyError as exc:
        raise MeshError(f"{path}: element refers to unknown node {exc.args[0]}") from exc
    return verts, T


def write_msh(path, vertices, tets) -> None:
    V = np.asarray(vertices, dtype=float)
    T = np.asarray(tets)
    with open(path, "w") as fh:
        fh.write("$MeshFormat\n2.2 0 8\n$EndMeshFormat\n")
        fh.write(f"$Nodes\n{len(V)}\n")
        for t, p in enumerate(V, start=1):
            fh.write(f"{t} {_f(p[0])} {_f(p[1])} {_f(p[2])}\n")
        fh.write("$EndNodes\n")
        fh.write(f"$Elements\n{len(T)}\n")
        for e, tet in enumerate(T, start=1):
            a, b, c, d = (int(v) + 1 for v in tet)
            fh.write(f"{e} 4 2 0 1 {a} {b} {c} {d}\n")
        fh.write("$EndElements\n")


# ------------------------------------------------------------------- TetGen

def _data_rows(path):
    out = []
    for ln in _lines(path):
        ln = ln.split("#", 1)[0].strip()
        if ln:
            out.append(ln.split())
    return out


def read_tetgen(path):
    """Read a ``.node``/``.ele`` pair; ``path`` may name either file or their common stem."""
    p = Path(path)
    stem = p.with_suffix("") if p.suffix in (".node", ".ele") else p
    node, ele = stem.with_suffix(".node"), stem.with_suffix(".ele")
    try:
        nrows = _data_rows(node)
        n, dim = int(nrows[0][0]), int(nrows[0][1])
        if dim != 3:
            raise MeshError(f"{node}: expected dimension 3, got {dim}")
        ids = np.array([int(r[0]) for r in nrows[1:1 + n]])
        verts = np.array([[float(v) for v in r[1:4]] for r in nrows[1:1 + n]])
        erows = _data_rows(ele)
        q, per = int(erows[0][0]), int(erows[0][1])
        if per != 4:
            raise MeshError(f"{ele}: only 4-node tetrahedra are supported, got {per} nodes per element")
        tets = [[int(v) for v in r[1:5]] for r in erows[1:1 + q]]
    except (ValueError, IndexError) as exc:
        raise MeshError(f"{stem}: malformed TetGen files ({exc})") from exc
    lookup = {int(i): t for t, i in enumerate(ids)}
    try:
        T = np.array([[lookup[v] for v in tet] for tet in tets], dtype=np.int64)
    except KeyError as exc:
        raise MeshError(f"{ele}: element refers to unknown node {exc.args[0]}") from exc
    return verts, T


def write_tetgen(path, vertices, tets) -> None:
    """Write ``stem.node`` and ``stem.ele`` with 1-based numbering."""
    p = Path(path)
    stem = p.with_suffix("") if p.suffix in (".node", ".ele") else p
    V = np.asarray(vertices, dtype=float)
    with open(stem.with_suffix(".node"), "w") as fh:
        fh.write(f"{len(V)} 3 0 0\n")
        for t, v in enumerate(V, start=1):
            fh.write(f"{t} {_f(v[0])} {_f(v[1])} {_f(v[2])}\n")
    with open(stem.with_suffix(".ele"), "w") as fh:
        fh.write(f"{len(tets)} 4 0\n")
        for e, tet in enumerate(np.asarray(tets), start=1):
            fh.write(f"{e} " + " ".join(str(int(v) + 1) for v in tet) + "\n")


# ---------------------------------------------------------------------- VTK

def write_vtk(path, vertices, tets, cell_data=None) -> None:
    """Legacy ASCII unstructured grid; ``cell_data`` maps names to per-tet scalars."""
    V = np.asarray(vertices, dtype=float)
    T = np.asarray(tets)
    with open(path, "w") as fh:
        fh.write("# vtk DataFile Version 3.0\nvolmap tetrahedral map\nASCII\nDATASET UNSTRUCTURED_GRID\n")
        fh.write(f"POINTS {len(V)} double\n")
        for p in V:
            fh.write(f"{_f(p[0])} {_f(p[1])} {_f(p[2])}\n")
        fh.write(f"CELLS {len(T)} {5 * len(T)}\n")
        for tet in T:
            fh.write("4 " + " ".join(str(int(v)) for v in tet) + "\n")
        fh.write(f"CELL_TYPES {len(T)}\n")
        fh.write("10\n" * len(T))
        if cell_data:
            fh.write(f"CELL_DATA {len(T)}\n")
            for name, vals in cell_data.items():
                fh.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
                for x in np.asarray(vals, dtype=float):
                    fh.write(_f(x) + "\n")


def read_vtk(path):
    """Read the points and tetrahedral cells of a legacy ASCII unstructured grid."""
    tok = " ".join(_lines(path)[4:]).split()
    try:
        i = tok.index("POINTS")
        n = int(tok[i + 1])
        V = np.array(tok[i + 3:i + 3 + 3 * n], dtype=float).reshape(n, 3)
        i = tok.index("CELLS")
        q = int(tok[i + 1])
        cells, pos = [], i + 3
        for _ in range(q):
            k = int(tok[pos])
            cells.append([int(v) for v in tok[pos + 1:pos + 1 + k]])
            pos += k + 1
        i = tok.index("CELL_TYPES")
        types = [int(v) for v in tok[i + 2:i + 2 + q]]
    except (ValueError, IndexError) as exc:
        raise MeshError(f"{path}: malformed VTK file ({exc})") from exc
    T = np.array([c for c, ty in zip(cells, types) if ty == 10], dtype=np.int64)
    if len(T) == 0:
        raise MeshError(f"{path}: no tetrahedral cells (type 10)")
    return V, T


# -------------------------------------------------------------- dispatching

def read_arrays(path):
    """Vertices and tets from any supported mesh file, chosen by extension."""
    suffix = Path(path).suffix.lower()
    if suffix == ".msh":
        return read_msh(path)
    if suffix in (".node", ".ele"):
        return read_tetgen(path)
    if suffix == ".vtk":
        return read_vtk(path)
    raise MeshError(f"{path}: unknown mesh format (expected .msh, .node/.ele or .vtk)")


def read_mesh(path, density=None) -> TetMesh:
    """Load and validate a mesh file; ``density`` is an array or a density file path."""
    if isinstance(density, (str, os.PathLike)):
        density = read_density(density)
    V, T = read_arrays(path)
    return build_mesh(V, T, density=density)


def write_mesh(path, vertices, tets, cell_data=None) -> None:
    suffix = Path(path).suffix.lower()
    try:
        if suffix == ".msh":
            write_msh(path, vertices, tets)
        elif suffix == ".vtk":
            write_vtk(path, vertices, tets, cell_data)
        elif suffix in (".node", ".ele"):
            write_tetgen(path, vertices, tets)
        else:
            raise MeshError(f"{path}: unknown output format (expected .msh, .vtk or .node)")
    except OSError as exc:
        raise OSError(f"{path}: cannot write mesh ({exc.strerror})") from exc


def read_density(path) -> np.ndarray:
    """One positive real per line, aligned with the element order of the mesh file."""
    try:
        d = np.loadtxt(path, ndmin=1, dtype=float)
    except (OSError, ValueError) as exc:
        raise MeshError(f"{path}: cannot read density file ({exc})") from exc
    if d.ndim != 1:
        raise MeshError(f"{path}: density file must have one value per line")
    if not np.all(np.isfinite(d)) or not np.all(d > 0):
        raise MeshError(f"{path}: densities must be finite and positive")
    return d


def write_density(path, density) -> None:
    with open(path, "w") as fh:
        for x in np.asarray(density, dtype=float):
            fh.write(_f(x) + "\n")


# ---------------------------------------------------------- reports, history

def clean_json(obj):
    """Replace non-finite floats by None and numpy scalars/arrays by plain Python values."""
    if isinstance(obj, dict):
        return {str(k): clean_json(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [clean_json(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return clean_json(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    return obj


def report_schema() -> dict:
    return json.loads(resources.files("volmap").joinpath("report_schema.json").read_text())


def write_json(path, obj) -> None:
    text = json.dumps(clean_json(obj), indent=2, sort_keys=True, allow_nan=False)
    with open(path, "w") as fh:
        fh.write(text + "\n")


HISTORY_FIELDS = ["iter", "E_V", "eps_norm", "sigma_mean", "sigma_std"]


def write_history(path, energy, eps_norm, sigma_mean, sigma_std, cost=None) -> None:
    """CSV with one row per iterate, starting at iteration 0."""
    fields = HISTORY_FIELDS + (["cost"] if cost is not None else [])
    cols = [energy, eps_norm, sigma_mean, sigma_std] + ([cost] if cost is not None else [])
    n = len(energy)
    if any(len(c) != n for c in cols):
        raise ValueError("history columns have different lengths")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(fields)
        for m in range(n):
            w.writerow([m] + [_f(c[m]) if math.isfinite(c[m]) else "" for c in cols])


def read_history(path) -> list:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
