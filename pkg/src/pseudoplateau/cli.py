"""Command-line driver: loop generation, solving, and audits.

Exit codes: 0 success, 2 non-convergence or audit failure, 3 invalid input.
All reports are machine-readable (JSON/CSV) and byte-identical for
identical configuration and seed.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .qcore import GeometryError
from . import einstein as ein
from . import plateau as pl
from . import diagnostics as diag


def _north_pole(n: int) -> np.ndarray:
    f = np.zeros(n + 1)
    f[0] = 1.0
    return f


def generate_loop(kind: str, n: int = 1, samples: int = 128, amplitude: float = 0.25,
                  frequency: int = 3, slope: float = 1.0 / 3.0,
                  input_path: str | None = None) -> ein.LipschitzLoop:
    thetas = np.linspace(0.0, 2.0 * np.pi, samples, endpoint=False)
    if kind == "circle":
        fibers = np.tile(_north_pole(n), (samples, 1))
        return ein.LipschitzLoop(thetas, fibers, c1=True)
    if kind == "c1_wobble":
        if amplitude * frequency >= 0.95:
            raise ein.InvalidLoopError("wobble would not stay strictly contracting")
        if n == 1:
            phi = amplitude * np.sin(frequency * thetas)
            fibers = np.column_stack([np.cos(phi), np.sin(phi)])
        else:
            a = amplitude * np.cos(frequency * thetas)
            b = amplitude * np.sin(frequency * thetas)
            fibers = np.zeros((samples, n + 1))
            fibers[:, 0] = np.sqrt(1.0 - a**2 - b**2)
            fibers[:, 1] = a
            fibers[:, 2] = b
        return ein.LipschitzLoop(thetas, fibers, c1=True)
    if kind == "rigid_arc":
        fibers = np.zeros((samples, n + 1))
        for i, t in enumerate(thetas):
            phi = t if t <= np.pi / 2.0 else np.pi / 2.0 - (t - np.pi / 2.0) * slope
            fibers[i, 0] = np.cos(phi)
            fibers[i, 1] = np.sin(phi)
        return ein.LipschitzLoop(thetas, fibers, c1=False)
    if kind == "crown":
        crown = ein.barbot_crown_standard(n)
        return ein.crown_loop(crown, samples_per_edge=max(8, samples // 4))
    if kind == "custom":
        if not input_path:
            raise ein.InvalidLoopError("custom loops need --input")
        return ein.loop_load(input_path)
    raise ein.InvalidLoopError(f"unknown loop kind {kind!r}")


def cmd_loop_gen(args) -> int:
    try:
        loop = generate_loop(args.kind, n=args.n, samples=args.samples,
                             amplitude=args.amplitude, frequency=args.frequency,
                             slope=args.slope, input_path=args.input)
        cls = ein.loop_classify(loop)
        if cls == "invalid":
            raise ein.InvalidLoopError("generated loop is not semi-positive")
        if args.kind in ("circle", "c1_wobble") and cls != "positive":
            raise ein.InvalidLoopError("generator produced a non-positive loop")
    except GeometryError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    ein.loop_save(loop, args.out)
    arcs = ein.photon_arc(loop) if cls == "semipositive" else []
    print(f"wrote {os.path.basename(args.out)}: n={loop.n} samples={loop.size} "
          f"class={cls} margin={loop.lipschitz_margin:.6f} photon_arcs={len(arcs)}")
    return 0


def cmd_solve(args) -> int:
    try:
        loop = ein.loop_load(args.loop)
        state = pl.build_state(loop, args.rings, args.sectors, args.radius)
    except (GeometryError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    try:
        solved = pl.plateau_solve(state, tol=args.tol, max_iter=args.max_iter, dt0=args.dt0)
    except pl.SolverError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return 2
    os.makedirs(args.out, exist_ok=True)
    state_path = os.path.join(args.out, "state.txt")
    report_path = os.path.join(args.out, "solve_report.json")
    pl.state_save(solved, state_path)
    with open(report_path, "w") as fh:
        fh.write(pl.solve_report(solved))
        fh.write("\n")
    print(f"solve: converged={solved.converged} iterations={solved.iterations} "
          f"residual={solved.final_residual:.3e}")
    return 0 if solved.converged else 2


def _write_csv(path: str, header: list[str], rows) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(repr(float(x)) for x in row) + "\n")


def cmd_audit(args) -> int:
    try:
        state = pl.state_load(args.state)
        if args.loop:
            state.loop = ein.loop_load(args.loop)
    except (GeometryError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    if not state.converged:
        print("error: state is not converged", file=sys.stderr)
        return 3
    names = [a.strip() for a in args.audits.split(",") if a.strip()]
    os.makedirs(args.out, exist_ok=True)
    reports = {}
    all_passed = True
    try:
        for name in names:
            if name == "rigidity":
                rep = diag.rigidity_audit(state)
            elif name == "gradient":
                rep = diag.gradient_audit(state, seed=args.seed)
            elif name == "distance_ratio":
                rep = diag.distance_ratio_audit(state, seed=args.seed)
            elif name == "gromov":
                rep = diag.gromov_audit(state, seed=args.seed)
            elif name == "asymptotic_hyperbolicity":
                rep = diag.asymptotic_hyperbolicity_audit(state)
            elif name == "hessian":
                if state.loop is None:
                    print("error: hessian audit needs --loop", file=sys.stderr)
                    return 3
                z = state.loop.boundary_point(0.0)
                rep = diag.hessian_audit(state, z, seed=args.seed)
            elif name == "boundary_extension":
                if state.loop is None:
                    print("error: boundary extension needs --loop", file=sys.stderr)
                    return 3
                _, cert = diag.boundary_extension(state, seed=args.seed)
                with open(os.path.join(args.out, "qs_certificate.json"), "w") as fh:
                    fh.write(cert.to_json())
                    fh.write("\n")
                rep = diag.AuditReport(
                    name="boundary_extension",
                    values={"A": cert.A, "B_measured": cert.B,
                            "quadruples_tested": cert.quadruples_tested},
                    thresholds={"B_finite": True},
                    passed=bool(np.isfinite(cert.B)),
                    samples=cert.quadruples_tested,
                    seed=args.seed,
                )
            else:
                print(f"error: unknown audit {name!r}", file=sys.stderr)
                return 3
            reports[name] = rep.to_dict()
            all_passed = bool(all_passed and rep.passed)
            print(f"audit {name}: {'pass' if rep.passed else 'FAIL'}")
    except diag.UnconvergedStateError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    _write_plot_data(state, args.out, args.seed)
    with open(os.path.join(args.out, "audit_report.json"), "w") as fh:
        json.dump({"audits": reports, "seed": args.seed, "passed": all_passed},
                  fh, sort_keys=True)
        fh.write("\n")
    return 0 if all_passed else 2


def _write_plot_data(state: pl.SurfaceState, out: str, seed: int) -> None:
    geo = pl.discrete_geometry(state)
    mesh = state.mesh
    ring, _ = pl._vertex_grid_index(mesh)
    rows = []
    for i in range(0, mesh.rings - 1):
        sel = ring == i
        if np.any(sel) and np.any(np.isfinite(geo.K[sel])):
            rows.append((i, mesh.radius * i / mesh.rings, float(np.nanmean(geo.K[sel]))))
    _write_csv(os.path.join(out, "k_profile.csv"), ["ring", "r", "mean_K"], rows)

    rng = np.random.default_rng(seed)
    form = state.form
    from .hspace import HPoint, gradient_norm_sq, horofunction, spatial_distance

    e1, e2 = geo.frames
    inter = np.flatnonzero(mesh.interior_mask(diag.AUDIT_EXCLUDE_RINGS))
    zs = diag._boundary_points(state, 12, rng)
    grads = []
    for z in zs:
        h = horofunction(form, z.rep)
        for v in rng.choice(inter, size=40, replace=False):
            x = HPoint(state.positions[v])
            if abs(form.inner(x.rep, h.z0)) < 1e-10:
                continue
            grads.append(gradient_norm_sq(form, h, x, np.vstack([e1[v], e2[v]])))
    hist, edges = np.histogram(np.array(grads), bins=24, range=(0.9, 2.1))
    _write_csv(os.path.join(out, "gradient_hist.csv"), ["bin_left", "bin_right", "count"],
               [(edges[i], edges[i + 1], hist[i]) for i in range(len(hist))])

    G = diag._edge_graph(state)
    from scipy.sparse.csgraph import dijkstra

    sources = rng.choice(inter, size=8, replace=False)
    dist = dijkstra(G, directed=False, indices=sources)
    rows = []
    for row, src in enumerate(sources):
        for t in rng.choice(inter, size=25, replace=False):
            if t == src or dist[row, t] < 0.3:
                continue
            eth = spatial_distance(form, HPoint(state.positions[src]), HPoint(state.positions[t]))
            rows.append((dist[row, t], eth))
    _write_csv(os.path.join(out, "distance_scatter.csv"), ["d_graph", "eth"], rows)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="pseudoplateau",
        description="Boundary loops, maximal-surface solves, and rigidity audits in H^{2,n}",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("loop-gen", help="generate a boundary loop file")
    p_gen.add_argument("--kind", required=True,
                       choices=["circle", "c1_wobble", "rigid_arc", "crown", "custom"])
    p_gen.add_argument("--n", type=int, default=1)
    p_gen.add_argument("--samples", type=int, default=128)
    p_gen.add_argument("--amplitude", type=float, default=0.25)
    p_gen.add_argument("--frequency", type=int, default=3)
    p_gen.add_argument("--slope", type=float, default=1.0 / 3.0)
    p_gen.add_argument("--input", default=None)
    p_gen.add_argument("--out", required=True)
    p_gen.set_defaults(func=cmd_loop_gen)

    p_solve = sub.add_parser("solve", help="solve the asymptotic Plateau problem for a loop")
    p_solve.add_argument("--loop", required=True)
    p_solve.add_argument("--rings", type=int, default=24)
    p_solve.add_argument("--sectors", type=int, default=72)
    p_solve.add_argument("--radius", type=float, default=3.0)
    p_solve.add_argument("--tol", type=float, default=1e-8)
    p_solve.add_argument("--max-iter", type=int, default=2000)
    p_solve.add_argument("--dt0", type=float, default=0.2)
    p_solve.add_argument("--seed", type=int, default=0)
    p_solve.add_argument("--out", required=True)
    p_solve.set_defaults(func=cmd_solve)

    p_audit = sub.add_parser("audit", help="run numeric audits on a solved state")
    p_audit.add_argument("--state", required=True)
    p_audit.add_argument("--loop", default=None)
    p_audit.add_argument("--audits",
                         default="rigidity,gradient,distance_ratio,gromov")
    p_audit.add_argument("--seed", type=int, default=0)
    p_audit.add_argument("--out", required=True)
    p_audit.set_defaults(func=cmd_audit)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
