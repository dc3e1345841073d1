"""Command-line front end: ``volmap {gen,param,omt,check}``.

Exit status is 0 on success, 1 when inputs fail validation (or a ``check``
fails), and 2 when a solver fails. Error messages name the failing stage.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import boundary_sphere as bs
from . import diagnostics as dg
from . import generate, io, vomt, vsem
from . import stretch_laplacian as sl
from .mesh import MeshError, TetMesh, build_mesh, folding_count, normalize_total_measure

logger = logging.getLogger("volmap")

EXIT_OK, EXIT_INVALID, EXIT_SOLVER = 0, 1, 2
STRETCH_BAND = (0.99, 1.01)
DIAGNOSTIC_ITERS = 300


class StageError(Exception):
    def __init__(self, stage, exc, code):
        super().__init__(f"{stage}: {exc}")
        self.code = code


class _Stage:
    """Context manager that tags exceptions with the pipeline stage."""

    def __init__(self, name):
        self.name = name

    def __enter__(self):
        return self

    def __exit__(self, et, exc, tb):
        if exc is None or isinstance(exc, StageError):
            return False
        if isinstance(exc, (vsem.SolverError, bs.BoundaryMapError, np.linalg.LinAlgError)):
            raise StageError(self.name, exc, EXIT_SOLVER) from exc
        if isinstance(exc, (MeshError, ValueError, OSError)):
            raise StageError(self.name, exc, EXIT_INVALID) from exc
        return False


# ------------------------------------------------------------------ helpers

def _descriptor(source: str, seed: int):
    """``ball:N``, ``convex:N`` or ``tet`` become generator descriptors; anything else is a path."""
    kind, _, rest = source.partition(":")
    if kind == "tet" and not rest:
        return {"kind": "tet"}
    if kind in ("ball", "convex") and rest.isdigit():
        return {"kind": kind, "divisions": int(rest), "seed": seed}
    return None


def _load(source: str, density, seed: int) -> TetMesh:
    desc = _descriptor(source, seed)
    if desc is not None:
        mesh = generate.from_descriptor(desc)
        if density is not None:
            d = io.read_density(density) if isinstance(density, str) else density
            mesh = build_mesh(mesh.vertices, mesh.tets, density=d)
        return mesh
    if not Path(source).exists():
        raise MeshError(f"{source}: no such file (or descriptor ball:N, convex:N, tet)")
    return io.read_mesh(source, density=density)


def _boundary(mesh: TetMesh, spec: str):
    if spec == "auto":
        return bs.sphere_boundary_map(mesh), "auto"
    if spec.startswith("file:"):
        path = spec[5:]
        return bs.read_boundary_map(path, mesh), path
    raise ValueError(f"--boundary must be 'auto' or 'file:PATH', got {spec!r}")


def _mesh_info(mesh, source, density):
    return {
        "source": source,
        "n_vertices": mesh.n_vertices,
        "n_tets": mesh.n_tets,
        "n_boundary": int(len(mesh.boundary_index)),
        "total_measure": mesh.total_measure,
        "density": density,
    }


def _stretch(mesh, f):
    st = sl.stretch_factors(mesh, f)
    return st.mean, st.std


def _panel_paths(args):
    if args.panel:
        p = Path(args.panel)
        return str(p.with_suffix(".csv")), str(p.with_suffix(".json"))
    return None, None


# ----------------------------------------------------------------- commands

def cmd_gen(args) -> int:
    with _Stage("generate"):
        if args.tet:
            mesh = generate.single_tet()
        elif args.convex:
            mesh = generate.random_convex_mesh(args.refine, seed=args.seed, jitter=args.jitter)
        else:
            mesh = generate.ball_mesh(args.refine, jitter=args.jitter, seed=args.seed)
    with _Stage("write"):
        io.write_mesh(args.out, mesh.vertices, mesh.tets)
    print(f"wrote {args.out}: {mesh.n_vertices} vertices, {mesh.n_tets} tets")
    return EXIT_OK


def _prepare(args):
    with _Stage("load"):
        mesh = _load(args.mesh, args.density, args.seed)
        if args.command == "omt":
            mesh = vomt.prepare_source(mesh)
        mesh = normalize_total_measure(mesh)
    with _Stage("boundary"):
        fB, bsource = _boundary(mesh, args.boundary)
        surf = bs.boundary_surface(mesh)
        ratio_std = bs.area_ratio_std(surf, fB / np.linalg.norm(fB, axis=1, keepdims=True))
        scale = 1.0
        if not args.no_volume_match:
            scaled = bs.match_enclosed_volume(mesh, fB)
            scale = float(np.linalg.norm(scaled[0]) / np.linalg.norm(fB[0]))
            fB = scaled
    binfo = {"source": bsource, "area_ratio_std": ratio_std, "scale": scale}
    return mesh, fB, binfo


def _deviations(args):
    out = []
    if args.boundary == "auto":
        out.append("boundary map: self-contained harmonic initialization plus stretch-reweighted "
                   "chart refinement (not an optimal-transport boundary)")
    if not args.no_volume_match:
        out.append("boundary scaled so the polyhedron it bounds has volume equal to the total measure")
    out.append("a VSEM cycle that raises the energy is rejected and the previous iterate returned")
    if args.command == "omt":
        out.append("VOMT keeps the last iterate whose cost decreased; steps clamped to [eta, 2/L]")
    return out


def _report(args, mesh, binfo, result, files, panel, t0):
    return {
        "schema_version": io.SCHEMA_VERSION,
        "command": args.command,
        "mesh": _mesh_info(mesh, args.mesh, args.density),
        "config": {
            "algorithm": "vsem" if args.command == "param" else "vomt",
            "accel": getattr(args, "accel", None),
            "tol": args.tol,
            "max_iter": args.max_iter,
            "inner_max_iter": getattr(args, "inner_max_iter", None),
            "solver": args.solver,
            "seed": args.seed,
            "diagnostic": bool(args.diagnostic),
            "match_volume": not args.no_volume_match,
        },
        "result": result,
        "boundary": binfo,
        "deviations": _deviations(args),
        "files": files,
        "panel": panel,
        "timing": {"seconds": time.perf_counter() - t0} if args.timing else None,
    }


def cmd_param(args) -> int:
    t0 = time.perf_counter()
    if args.max_iter is None:
        args.max_iter = DIAGNOSTIC_ITERS if args.diagnostic else 5
    mesh, fB, binfo = _prepare(args)
    cfg = vsem.VsemConfig(tol=args.tol, max_iters=args.max_iter, solver=args.solver,
                          keep_history=bool(args.diagnostic))
    with _Stage("vsem"):
        f, rep = vsem.run(mesh, fB, cfg)
    panel = None
    files = {"mesh": args.out, "history": args.history, "panel_csv": None, "panel_json": None}
    if args.diagnostic:
        with _Stage("diagnostics"):
            if len(rep.maps) >= 3:
                pan = dg.convergence_panel(rep.maps, mesh, spectral=True)
                panel = pan["summary"]
                pc, pj = _panel_paths(args)
                if pc:
                    dg.write_panel(pan, pc, pj)
                    files["panel_csv"], files["panel_json"] = pc, pj
            else:
                logger.warning("too few iterates (%d) for a convergence panel", len(rep.maps))
    nu = vomt.vertex_measure(mesh)
    result = {
        "stretch_mean": rep.sigma_mean[-1],
        "stretch_std": rep.sigma_std[-1],
        "energy": rep.energy[-1],
        "cost": vomt.cost(mesh, f, nu),
        "foldings": rep.foldings,
        "iterations": rep.iterations,
        "termination": rep.termination,
    }
    with _Stage("write"):
        if args.out:
            io.write_mesh(args.out, f, mesh.tets)
        if args.history:
            io.write_history(args.history, rep.energy, rep.eps_norm, rep.sigma_mean, rep.sigma_std)
        report = _report(args, mesh, binfo, result, files, panel, t0)
        if args.report:
            io.write_json(args.report, report)
    _summary(result)
    return EXIT_OK


def cmd_omt(args) -> int:
    t0 = time.perf_counter()
    if args.max_iter is None:
        args.max_iter = 200 if args.diagnostic else 2
    mesh, fB, binfo = _prepare(args)
    inner = vsem.VsemConfig(max_iters=args.inner_max_iter, solver=args.solver)
    cfg = vomt.VomtConfig(tol=args.tol, max_iters=args.max_iter, accel=args.accel, inner=inner)
    with _Stage("vsem"):
        f0, rep0 = vsem.run(mesh, fB, inner)
    with _Stage("vomt"):
        f, rep = vomt.run(mesh, config=cfg, initial=(f0, rep0, fB))
    mean, std = _stretch(mesh, f)
    result = {
        "stretch_mean": mean,
        "stretch_std": std,
        "energy": rep.energy[-1],
        "cost": rep.cost[-1],
        "foldings": rep.foldings,
        "iterations": rep.iterations,
        "termination": rep.termination,
        "step_clamped": int(sum(rep.step_clamped)),
        "rotation": rep.rotation,
    }
    files = {"mesh": args.out, "history": args.history, "panel_csv": None, "panel_json": None}
    with _Stage("write"):
        if args.out:
            io.write_mesh(args.out, f, mesh.tets)
        if args.history:
            io.write_history(args.history, rep.energy, rep.eps_norm, rep.sigma_mean, rep.sigma_std,
                             rep.cost)
        report = _report(args, mesh, binfo, result, files, None, t0)
        if args.report:
            io.write_json(args.report, report)
    _summary(result)
    return EXIT_OK


def _summary(result):
    print(f"stretch mean {result['stretch_mean']:.6f}  std {result['stretch_std']:.6f}  "
          f"E_V {result['energy']:.6f}  cost {result['cost']:.6f}  "
          f"foldings {result['foldings']}  ({result['termination']} after {result['iterations']})")


def run_checks(mesh: TetMesh, rng, mapped=None) -> list:
    """Identity, gradient, weight-difference and (small meshes) transfer checks on ``mesh``."""
    checks = []

    def add(name, value, tol, passed=None):
        ok = bool(value <= tol) if passed is None else bool(passed)
        checks.append({"name": name, "value": float(value), "tolerance": float(tol), "passed": ok})

    scale = np.cbrt(np.abs(mesh.volumes).mean())
    worst = 0.0
    for _ in range(5):
        f = mesh.vertices + rng.normal(scale=0.3 * scale, size=mesh.vertices.shape)
        a, b = sl.energy(mesh, f), sl.energy_per_tet(mesh, f)
        worst = max(worst, abs(a - b) / max(1.0, abs(b)))
    add("energy_identity", worst, 1e-10)

    f = mesh.vertices + rng.normal(scale=0.1 * scale, size=mesh.vertices.shape)
    G = sl.energy_gradient(mesh, f)
    h = 1e-5 * scale
    worst = 0.0
    for t in rng.choice(mesh.n_vertices, size=min(10, mesh.n_vertices), replace=False):
        for s in range(3):
            fp, fm = f.copy(), f.copy()
            fp[t, s] += h
            fm[t, s] -= h
            fd = (sl.energy(mesh, fp) - sl.energy(mesh, fm)) / (2 * h)
            worst = max(worst, abs(fd - G[t, s]) / max(np.abs(G).max(), 1e-300))
    add("gradient_fd", worst, 1e-6)

    edges = mesh.edges()
    worst = 0.0
    for e in edges[rng.choice(len(edges), size=min(100, len(edges)), replace=False)]:
        fp = mesh.vertices + rng.normal(scale=0.2 * scale, size=mesh.vertices.shape)
        fc = fp + rng.normal(scale=0.2 * scale, size=mesh.vertices.shape)
        d = dg.weight_difference(mesh, fp, fc, e)
        ref = sl.assemble(mesh, fp)[e[0], e[1]] - sl.assemble(mesh, fc)[e[0], e[1]]
        worst = max(worst, abs(d - ref) / max(1.0, abs(ref)))
    add("weight_difference", worst, 1e-10)

    if 3 * mesh.n_vertices <= dg.MAX_DENSE and len(mesh.interior_index):
        m = normalize_total_measure(mesh)
        _, rep, _ = vsem.parameterize(m, config=vsem.VsemConfig(max_iters=6, tol=0.0, keep_history=True))
        H = rep.maps
        worst = 0.0
        for k in range(1, len(H) - 1):
            e1 = dg.assemble_transfer(m, H[k - 1], H[k]).apply(H[k] - H[k - 1])
            e2 = H[k + 1] - H[k]
            if np.linalg.norm(e2) > 0:
                worst = max(worst, np.linalg.norm(e1 - e2) / np.linalg.norm(e2))
        add("transfer_recursion", worst, 1e-8)

    if mapped is not None:
        m = normalize_total_measure(mesh)
        st = sl.stretch_factors(m, mapped)
        lo, hi = STRETCH_BAND
        checks.append({"name": "stretch_mean_band", "value": st.mean, "tolerance": hi - 1.0,
                       "passed": bool(lo <= st.mean <= hi)})
        checks.append({"name": "foldings", "value": float(folding_count(m, mapped)), "tolerance": 0.0,
                       "passed": folding_count(m, mapped) == 0})
        checks.append({"name": "stretch_std", "value": st.std, "tolerance": 0.2,
                       "passed": bool(st.std <= 0.2)})
    return checks


def cmd_check(args) -> int:
    rng = np.random.default_rng(args.seed)
    with _Stage("load"):
        mesh = _load(args.mesh, args.density, args.seed)
        mapped = None
        if args.map:
            V, T = io.read_arrays(args.map)
            if V.shape != mesh.vertices.shape or not np.array_equal(T, mesh.tets):
                raise MeshError(f"{args.map}: connectivity differs from {args.mesh}")
            mapped = V
    with _Stage("check"):
        checks = run_checks(mesh, rng, mapped)
    out = {"mesh": _mesh_info(mesh, args.mesh, args.density), "checks": checks,
           "passed": all(c["passed"] for c in checks)}
    with _Stage("write"):
        if args.report:
            io.write_json(args.report, out)
    for c in checks:
        print(f"{'PASS' if c['passed'] else 'FAIL'} {c['name']}: {c['value']:.3e} (tol {c['tolerance']:.1e})")
    return EXIT_OK if out["passed"] else EXIT_INVALID


# ------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="volmap", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="write a synthetic mesh")
    kind = g.add_mutually_exclusive_group()
    kind.add_argument("--ball", action="store_true", help="warped-grid ball (default)")
    kind.add_argument("--tet", action="store_true", help="the single reference tet")
    kind.add_argument("--convex", action="store_true", help="ball under a random volume-preserving linear map")
    g.add_argument("--refine", type=int, default=4, help="grid divisions per side (6*N^3 tets)")
    g.add_argument("--jitter", type=float, default=0.2, help="interior node perturbation in half-cells")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True, help="output .msh, .vtk or .node")
    g.set_defaults(func=cmd_gen)

    def common(sp):
        sp.add_argument("mesh", help="mesh file (.msh, .node/.ele, .vtk) or ball:N, convex:N, tet")
        sp.add_argument("--density", help="per-tet density file")
        sp.add_argument("--seed", type=int, default=0)

    def solve_opts(sp, tol):
        sp.add_argument("--tol", type=float, default=tol)
        sp.add_argument("--max-iter", type=int, default=None)
        sp.add_argument("--boundary", default="auto", help="auto or file:PATH")
        sp.add_argument("--solver", choices=["direct", "cg"], default="direct")
        sp.add_argument("--no-volume-match", action="store_true",
                        help="keep the boundary on the unit sphere instead of matching the enclosed volume")
        sp.add_argument("--report", help="RunReport JSON path")
        sp.add_argument("--history", help="per-iteration CSV path")
        sp.add_argument("--out", help="mapped mesh (.msh or .vtk)")
        sp.add_argument("--diagnostic", action="store_true", help="long horizon plus convergence panel")
        sp.add_argument("--panel", help="panel output stem (writes .csv and .json)")
        sp.add_argument("--timing", action="store_true", help="record wall time in the report")

    pa = sub.add_parser("param", help="volume-preserving ball map (VSEM)")
    common(pa)
    solve_opts(pa, 1e-6)
    pa.set_defaults(func=cmd_param)

    po = sub.add_parser("omt", help="volume-preserving optimal transport map")
    common(po)
    solve_opts(po, 0.0)
    po.add_argument("--accel", choices=list(vomt.ACCEL_MODES), default="fista")
    po.add_argument("--inner-max-iter", type=int, default=5)
    po.set_defaults(func=cmd_omt)

    pc = sub.add_parser("check", help="property and diagnostic checks on a mesh")
    common(pc)
    pc.add_argument("--map", help="mapped mesh written by param/omt, checked for stretch and foldings")
    pc.add_argument("--report", help="JSON output path")
    pc.set_defaults(func=cmd_check)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
