"""Command-line entry point: mesh generation, data generation, PCA, training,
simulation, relaxation, benchmarks, and the live server.

Exit codes: 0 success, 1 domain error, 2 usage error. Every subcommand
confines its writes to its --out path; all randomness flows from the seeds
recorded in configs and checkpoints.
"""

from __future__ import annotations

import argparse
import csv
import json
import shutil
import sys
import time
from pathlib import Path

import numpy as np

from . import bench as bench_mod
from .config import (
    ConfigError,
    load_yaml,
    parse_boundary,
    parse_material,
    parse_scenario,
)
from .decoder import LinearModel, load_checkpoint, save_checkpoint
from .elastic import ElasticError, Material
from .fullsolver import ForceScenario, generate_snapshots, load_snapshots, save_snapshots
from .mesh import (
    MeshError,
    load_mesh,
    load_mesh_native,
    lump_mass,
    make_bar_mesh,
    mesh_hash,
    save_mesh_native,
    save_mesh_text,
)
from .newton import SolverFailure
from .reducedsim import (
    ReducedSim,
    ReducedState,
    quasi_static_relax,
    select_random_cubature,
    step_reduced,
)
from .storage import StorageError
from .subspace import compute_pca, save_basis
from .trainer import TrainConfig, train

DOMAIN_ERRORS = (MeshError, ElasticError, ConfigError, SolverFailure, StorageError,
                 bench_mod.BenchError, ValueError, OSError)


def _load_any_mesh(path: str, fmt: str, density: float):
    if fmt == "native":
        return load_mesh_native(path)
    return load_mesh(path, fmt, density)


def _run_file_sections(path):
    """A run file bundles material / density / boundary / scenario sections."""
    raw = load_yaml(path)
    allowed = {"material", "density", "boundary", "scenario"}
    unknown = set(raw) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in run file: {sorted(unknown)}")
    material = parse_material(raw.get("material", {}))
    density = float(raw.get("density", 1000.0))
    return raw, material, density


def cmd_mesh(args) -> int:
    if args.mesh_cmd == "gen-bar":
        dims = [float(x) for x in args.dims.split(",")]
        mesh = make_bar_mesh(args.nx, args.ny, args.nz, dims, args.density)
        out = Path(args.out)
        if out.suffix == ".srm":
            save_mesh_native(mesh, out)
        else:
            save_mesh_text(mesh, out)
        print(f"wrote {out} ({mesh.n_vertices} vertices, {mesh.n_elements} tets)")
        return 0
    if args.mesh_cmd == "info":
        mesh = _load_any_mesh(args.path, args.format, args.density)
        v = mesh.verts3
        print(f"vertices: {mesh.n_vertices}")
        print(f"tets:     {mesh.n_elements}")
        print(f"volume:   {mesh.total_volume:.6e} m^3")
        print(f"density:  {mesh.density} kg/m^3")
        print(f"bbox min: {v.min(axis=0)}")
        print(f"bbox max: {v.max(axis=0)}")
        print(f"hash:     {mesh_hash(mesh)}")
        return 0
    raise ConfigError(f"unknown mesh subcommand {args.mesh_cmd!r}")


def cmd_gen_data(args) -> int:
    raw, material, density = _run_file_sections(args.scenario)
    mesh = _load_any_mesh(args.mesh, args.format, density)
    bc = parse_boundary(raw.get("boundary"), mesh)
    scenario = parse_scenario(raw.get("scenario", {}))
    snaps = generate_snapshots(mesh, material, scenario, bc, dt=args.dt, steps=args.steps,
                               stride=args.stride,
                               meta={"scenario_file": str(args.scenario),
                                     "mesh_hash": mesh_hash(mesh)})
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_snapshots(snaps, out)
    shutil.copy(args.scenario, out.with_suffix(".scenario.yaml"))
    print(f"wrote {out}: {snaps.count} snapshots of dimension {snaps.n_dofs}")
    return 0


def cmd_pca(args) -> int:
    snaps = load_snapshots(args.data)
    mesh = _load_any_mesh(args.mesh, args.format, snaps.meta.get("density", 1000.0))
    basis = compute_pca(snaps.U, lump_mass(mesh), args.k)
    save_basis(basis, args.out)
    print(f"wrote {args.out}: rank {basis.rank} basis, "
          f"leading singular values {np.round(basis.singular_values[:4], 6)}")
    return 0


def cmd_train(args) -> int:
    snaps = load_snapshots(args.data)
    mesh = _load_any_mesh(args.mesh, args.format, snaps.meta.get("density", 1000.0))
    mass = lump_mass(mesh)
    cfg = TrainConfig(model=args.model, k=args.k, r=args.r, epochs=args.epochs,
                      learning_rate=args.lr, batch_size=args.batch_size, seed=args.seed,
                      pca_init=not args.no_pca_init)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(
        {**cfg.__dict__, "data": str(args.data), "mesh": str(args.mesh)}, indent=1))
    model, report = train(cfg, snaps, mass, out_dir=out,
                          log_every=args.log_every)
    meta = {"mesh_hash": mesh_hash(mesh), "k": cfg.k, "r": cfg.r,
            "youngs_modulus": snaps.meta.get("youngs_modulus"),
            "poisson_ratio": snaps.meta.get("poisson_ratio"),
            "density": snaps.meta.get("density"), "seed": cfg.seed}
    save_checkpoint(out / "model.ckpt", model, meta=meta)
    if report.aborted_at is not None:
        print(f"training aborted at epoch {report.aborted_at} (non-finite loss); "
              f"last good weights saved")
        return 1
    final = report.loss[-1] if report.loss.size else float("nan")
    print(f"trained {args.model} for {cfg.epochs} epochs, final loss {final:.6e}")
    print(f"wrote {out / 'model.ckpt'}")
    return 0


def _load_model_and_mesh(model_path, mesh_path, fmt):
    model, meta = load_checkpoint(model_path)
    density = meta.get("density") or 1000.0
    mesh = _load_any_mesh(mesh_path, fmt, density)
    if meta.get("mesh_hash") and meta["mesh_hash"] != mesh_hash(mesh):
        raise ConfigError("checkpoint was trained on a different mesh "
                          f"(hash {meta['mesh_hash']} != {mesh_hash(mesh)})")
    material = Material(meta.get("youngs_modulus") or 1e5,
                        meta.get("poisson_ratio") if meta.get("poisson_ratio") is not None else 0.45)
    return model, mesh, material, meta


def cmd_simulate(args) -> int:
    model, mesh, material, meta = _load_model_and_mesh(args.model, args.mesh, args.format)
    mass = lump_mass(mesh)
    scenario = ForceScenario()
    if args.scenario:
        raw, material_s, _ = _run_file_sections(args.scenario)
        scenario = parse_scenario(raw.get("scenario", {}))
    cubature = None
    if args.cubature:
        cubature = select_random_cubature(mesh, args.cubature, args.seed)
    sim = ReducedSim(mesh, material, mass, model, cubature=cubature)
    state = ReducedState.rest(model.k)
    rows = []
    for step in range(args.steps):
        f_ext = scenario.external_force(mesh, mass, state.time + args.dt)
        t0 = time.perf_counter()
        state, rep = step_reduced(sim, state, args.dt, f_ext=f_ext)
        ms = (time.perf_counter() - t0) * 1e3
        u = model.decode(state.q)
        rows.append([state.time, float(np.linalg.norm(u)), rep.objective, ms]
                    + state.q.tolist())
        if not rep.converged:
            print(f"warning: step {step + 1} did not converge ({rep.message})",
                  file=sys.stderr)
    if args.record:
        Path(args.record).parent.mkdir(parents=True, exist_ok=True)
        with open(args.record, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["time", "disp_norm", "objective", "sim_ms"]
                       + [f"q{i}" for i in range(model.k)])
            w.writerows(rows)
        print(f"wrote {args.record}")
    print(f"simulated {args.steps} steps; final |u| = {rows[-1][1]:.6e}")
    return 0


def cmd_relax(args) -> int:
    model, mesh, material, meta = _load_model_and_mesh(args.model, args.mesh, args.format)
    mass = lump_mass(mesh)
    f_ext = None
    if args.force:
        raw, _, _ = _run_file_sections(args.force)
        scenario = parse_scenario(raw.get("scenario", {}))
        f_ext = scenario.external_force(mesh, mass, 0.0)
    sim = ReducedSim(mesh, material, mass, model)
    rng = np.random.default_rng(args.seed)
    q0 = args.init_scale * rng.standard_normal(model.k)
    out = quasi_static_relax(sim, q0, f_ext=f_ext, max_iters=args.iters)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        with open(args.out, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["iteration", "energy"])
            for i, e in enumerate(out.energies):
                w.writerow([i, repr(float(e))])
        print(f"wrote {args.out}")
    print(f"relaxed in {len(out.energies) - 1} iterations: "
          f"energy {out.energies[0]:.6e} -> {out.energies[-1]:.6e}, "
          f"final |u| = {np.linalg.norm(model.decode(out.q)):.6e}")
    return 0


def cmd_bench(args) -> int:
    out = Path(args.out)
    report = bench_mod.run_experiment(args.experiment, out_dir=out, fixture=args.fixture)
    if args.fixture:
        shutil.copy(args.fixture, out / "fixture.yaml")
    print(f"wrote {out / 'report.json'}")
    for name, per_method in report.scalars.items():
        print(f"{name}: " + ", ".join(f"{m}={v:.6g}" for m, v in per_method.items()))
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .simserver import build_app

    app = build_app(model_path=args.model, mesh_path=args.mesh, mesh_format=args.format,
                    dt=args.dt, cubature_count=args.cubature,
                    drag_stiffness=args.drag_stiffness, seed=args.seed)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="softrom",
                                description="reduced-order deformable simulation toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    pm = sub.add_parser("mesh", help="mesh generation and inspection")
    msub = pm.add_subparsers(dest="mesh_cmd", required=True)
    g = msub.add_parser("gen-bar", help="generate a bar mesh")
    g.add_argument("--nx", type=int, required=True)
    g.add_argument("--ny", type=int, required=True)
    g.add_argument("--nz", type=int, required=True)
    g.add_argument("--dims", required=True, help="comma separated extents in meters")
    g.add_argument("--density", type=float, default=1000.0)
    g.add_argument("--out", required=True, help=".mesh text or .srm native")
    i = msub.add_parser("info", help="print mesh statistics")
    i.add_argument("path")
    i.add_argument("--format", default="node_ele", choices=["node_ele", "msh", "native", "builtin"])
    i.add_argument("--density", type=float, default=1000.0)
    pm.set_defaults(fn=cmd_mesh)

    d = sub.add_parser("gen-data", help="run the full solver and record snapshots")
    d.add_argument("--mesh", required=True)
    d.add_argument("--format", default="node_ele", choices=["node_ele", "msh", "native", "builtin"])
    d.add_argument("--scenario", required=True, help="run file with material/boundary/scenario")
    d.add_argument("--dt", type=float, default=0.01)
    d.add_argument("--steps", type=int, default=40)
    d.add_argument("--stride", type=int, default=1)
    d.add_argument("--out", required=True)
    d.set_defaults(fn=cmd_gen_data)

    c = sub.add_parser("pca", help="compute a mass-weighted PCA basis")
    c.add_argument("--data", required=True)
    c.add_argument("--mesh", required=True)
    c.add_argument("--format", default="node_ele", choices=["node_ele", "msh", "native", "builtin"])
    c.add_argument("--k", type=int, required=True)
    c.add_argument("--out", required=True)
    c.set_defaults(fn=cmd_pca)

    t = sub.add_parser("train", help="train a reduced model")
    t.add_argument("--data", required=True)
    t.add_argument("--mesh", required=True)
    t.add_argument("--format", default="node_ele", choices=["node_ele", "msh", "native", "builtin"])
    t.add_argument("--model", default="convex_symmetric",
                   choices=["convex_symmetric", "vanilla", "convex_fullspace"])
    t.add_argument("--k", type=int, default=5)
    t.add_argument("--r", type=int, default=10)
    t.add_argument("--epochs", type=int, default=50000)
    t.add_argument("--lr", type=float, default=1e-4)
    t.add_argument("--batch-size", type=int, default=16)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--no-pca-init", action="store_true",
                   help="standard initialization instead of seeding from the basis")
    t.add_argument("--log-every", type=int, default=0)
    t.add_argument("--out", required=True)
    t.set_defaults(fn=cmd_train)

    s = sub.add_parser("simulate", help="reduced dynamic stepping")
    s.add_argument("--model", required=True)
    s.add_argument("--mesh", required=True)
    s.add_argument("--format", default="node_ele", choices=["node_ele", "msh", "native", "builtin"])
    s.add_argument("--dt", type=float, default=0.01)
    s.add_argument("--steps", type=int, default=100)
    s.add_argument("--scenario", default=None)
    s.add_argument("--cubature", type=int, default=0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--record", default=None, help="CSV output path")
    s.set_defaults(fn=cmd_simulate)

    r = sub.add_parser("relax", help="quasi-static energy minimization")
    r.add_argument("--model", required=True)
    r.add_argument("--mesh", required=True)
    r.add_argument("--format", default="node_ele", choices=["node_ele", "msh", "native", "builtin"])
    r.add_argument("--force", default=None, help="run file providing the load")
    r.add_argument("--iters", type=int, default=100)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--init-scale", type=float, default=0.0,
                   help="std of the random initial latent state")
    r.add_argument("--out", default=None)
    r.set_defaults(fn=cmd_relax)

    b = sub.add_parser("bench", help="run a benchmark experiment")
    b.add_argument("experiment", choices=list(bench_mod.EXPERIMENTS))
    b.add_argument("--out", required=True)
    b.add_argument("--fixture", default=None, help="override the committed fixture YAML")
    b.set_defaults(fn=cmd_bench)

    v = sub.add_parser("serve", help="run the interactive simulation service")
    v.add_argument("--model", required=True)
    v.add_argument("--mesh", required=True)
    v.add_argument("--format", default="node_ele", choices=["node_ele", "msh", "native", "builtin"])
    v.add_argument("--host", default="127.0.0.1")
    v.add_argument("--port", type=int, default=8765)
    v.add_argument("--dt", type=float, default=1.0 / 60.0)
    v.add_argument("--cubature", type=int, default=0)
    v.add_argument("--drag-stiffness", type=float, default=1e3)
    v.add_argument("--seed", type=int, default=0)
    v.set_defaults(fn=cmd_serve)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except DOMAIN_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
