"""Experiment drivers: generalization, cubature robustness, sparse keyframes,
convergence profiling, and the 2-d didactic comparison.

Each driver consumes a committed YAML fixture (procedural mesh, training
scenario, model sizes, seeds), trains the three compared methods (linear,
vanilla, convex_symmetric), runs its protocol, and emits a report: JSON with
deterministic results plus per-series CSV files; wall-clock measurements go
to a separate timing section so reports stay reproducible bit for bit.
"""

from __future__ import annotations

import csv
import importlib.resources
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import elastic
from .config import (
    load_yaml,
    parse_boundary,
    parse_material,
    parse_mesh,
    parse_scenario,
    parse_selector,
    parse_train_config,
)
from .decoder import LinearModel
from .fullsolver import generate_snapshots, static_solve
from .mesh import lump_mass
from .newton import SolverConfig
from .reducedsim import (
    ReducedSim,
    linear_nullspace_solve,
    quasi_static_relax,
    select_random_cubature,
)
from .subspace import compute_pca
from .trainer import fit_didactic_2d, train

METHODS = ("linear", "vanilla", "convex_symmetric")

EXPERIMENTS = (
    "direction-generalization",
    "magnitude-generalization",
    "cubature-robustness",
    "sparse-keyframes",
    "convergence-profile",
    "didactic2d",
)


class BenchError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# reports

@dataclass
class ExperimentReport:
    experiment: str
    methods: list[str]
    series: dict = field(default_factory=dict)   # name -> method -> list of floats
    scalars: dict = field(default_factory=dict)  # name -> method -> float
    seeds: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    timing: dict = field(default_factory=dict)   # wall-clock, excluded from results

    def results_dict(self) -> dict:
        return {
            "experiment": self.experiment,
            "methods": list(self.methods),
            "series": self.series,
            "scalars": self.scalars,
            "seeds": self.seeds,
            "config": self.config,
        }

    def results_json(self) -> str:
        return json.dumps(self.results_dict(), sort_keys=True, indent=1)

    def save(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        payload = self.results_dict()
        payload["timing"] = self.timing
        (out / "report.json").write_text(json.dumps(payload, sort_keys=True, indent=1))
        for name, per_method in self.series.items():
            with open(out / f"{name}.csv", "w", newline="") as f:
                w = csv.writer(f)
                w.writerow(["method", "index", "value"])
                for method, values in per_method.items():
                    for i, v in enumerate(values):
                        w.writerow([method, i, repr(float(v))])


def _finite(values) -> list[float]:
    out = [float(v) for v in values]
    if not all(np.isfinite(out)):
        raise BenchError("non-finite value in report series")
    return out


# ---------------------------------------------------------------------------
# fixtures

def load_fixture(name_or_path) -> dict:
    p = Path(str(name_or_path))
    if p.suffix in (".yaml", ".yml") and p.exists():
        return load_yaml(p)
    fname = str(name_or_path).replace("-", "_") + ".yaml"
    ref = importlib.resources.files("softrom") / "fixtures" / fname
    if not ref.is_file():
        raise BenchError(f"unknown fixture {name_or_path!r}")
    return load_yaml(str(ref))


@dataclass
class FixtureAssets:
    cfg: dict
    mesh: object
    material: object
    mass: object
    bc: object
    scenario: object
    snapshots: object
    models: dict
    codes: dict  # method -> (k, S) latent codes of the training snapshots


def prepare_fixture(cfg: dict, methods=METHODS, log=False) -> FixtureAssets:
    """Generate training data and train every compared method."""
    mesh = parse_mesh(cfg["mesh"])
    material = parse_material(cfg.get("material", {}))
    bc = parse_boundary(cfg.get("boundary"), mesh)
    data = cfg["data"]
    scenario = parse_scenario(data["scenario"])
    mass = lump_mass(mesh)
    snaps = generate_snapshots(mesh, material, scenario, bc, dt=float(data["dt"]),
                               steps=int(data["steps"]), stride=int(data.get("stride", 1)))
    tcfg = cfg["training"]
    k_linear = int(tcfg.get("k_linear", tcfg.get("k", 5)))
    models = {}
    for method in methods:
        t0 = time.perf_counter()
        if method == "linear":
            basis = compute_pca(snaps.U, mass, min(k_linear, min(snaps.U.shape)))
            models[method] = LinearModel(basis, mass)
        elif method in ("vanilla", "convex_symmetric", "convex_fullspace"):
            config = parse_train_config(tcfg, model=method)
            models[method], _ = train(config, snaps, mass)
        else:
            raise BenchError(f"unknown method {method!r}")
        if log:
            print(f"trained {method} in {time.perf_counter() - t0:.1f}s")
    codes = {m: np.stack([models[m].encode(snaps.U[:, j]) for j in range(snaps.count)], axis=1)
             for m in models}
    return FixtureAssets(cfg=cfg, mesh=mesh, material=material, mass=mass, bc=bc,
                         scenario=scenario, snapshots=snaps, models=models, codes=codes)


def _mnorm(mass, v) -> float:
    return float(np.sqrt(v @ (mass.diag * v)))


def _force_vector(assets, entry_cfg, scale=1.0) -> np.ndarray:
    sel = parse_selector(entry_cfg["select"])
    verts = sel.resolve(assets.mesh)
    f = np.zeros(assets.mesh.n_dofs)
    fv = scale * np.asarray(entry_cfg["force"], dtype=np.float64)
    for a in range(3):
        f[3 * verts + a] += fv[a]
    return f


# ---------------------------------------------------------------------------
# experiments

def run_direction_generalization(cfg: dict, assets: FixtureAssets | None = None) -> ExperimentReport:
    """Train on compression, relax under the inverted load, and measure the
    latent-inversion deviation of each decoder."""
    assets = assets or prepare_fixture(cfg)
    exp = cfg["experiment"]
    f_test = _force_vector(assets, exp["test_force"])
    report = ExperimentReport("direction-generalization", list(assets.models),
                              config=cfg, seeds={"training": cfg["training"].get("seed", 0)})
    report.series["energy"] = {}
    report.scalars["final_displacement_norm"] = {}
    report.scalars["latent_inversion_deviation"] = {}
    for method, model in assets.models.items():
        sim = ReducedSim(assets.mesh, assets.material, assets.mass, model)
        out = quasi_static_relax(sim, np.zeros(model.k), f_ext=f_test,
                                 max_iters=int(exp.get("relax_iters", 60)))
        report.series["energy"][method] = _finite(out.energies)
        report.scalars["final_displacement_norm"][method] = float(
            np.linalg.norm(model.decode(out.q)))
        report.timing[f"relax_wall_ms_{method}"] = out.wall_ms[-1]
        dev = [
            _mnorm(assets.mass, model.decode(-q) + model.decode(q))
            for q in assets.codes[method].T
        ]
        report.scalars["latent_inversion_deviation"][method] = float(np.mean(dev))
    return report


def run_magnitude_generalization(cfg: dict, assets: FixtureAssets | None = None) -> ExperimentReport:
    """Relax under a force several times the training maximum; energies are
    normalized against the full-space equilibrium so every curve starts at 1."""
    assets = assets or prepare_fixture(cfg)
    exp = cfg["experiment"]
    scale = float(exp.get("force_scale", 3.0))
    last_force = cfg["data"]["scenario"]["forces"][-1]
    f_test = _force_vector(assets, last_force, scale=scale)
    u_star, rep = static_solve(assets.mesh, assets.material, assets.mass, f_test, assets.bc,
                               cfg=SolverConfig(max_iterations=200))
    if not rep.converged:
        raise BenchError("full-space reference solve did not converge")
    e_star = elastic.total_energy(assets.mesh, u_star, assets.material) - float(f_test @ u_star)

    report = ExperimentReport("magnitude-generalization", list(assets.models), config=cfg,
                              seeds={"training": cfg["training"].get("seed", 0)})
    report.series["normalized_energy"] = {}
    report.series["raw_energy"] = {}
    report.scalars["plateau"] = {}
    report.scalars["iteration0_energy"] = {}
    for method, model in assets.models.items():
        sim = ReducedSim(assets.mesh, assets.material, assets.mass, model)
        out = quasi_static_relax(sim, np.zeros(model.k), f_ext=f_test,
                                 max_iters=int(exp.get("relax_iters", 80)))
        raw = np.asarray(out.energies)
        denom = raw[0] - e_star
        if denom <= 0:
            raise BenchError("degenerate normalization: start below the reference minimum")
        norm = (raw - e_star) / denom
        report.series["raw_energy"][method] = _finite(raw)
        report.series["normalized_energy"][method] = _finite(norm)
        report.scalars["plateau"][method] = float(norm[-1])
        report.scalars["iteration0_energy"][method] = float(raw[0])
    return report


def run_cubature_robustness(cfg: dict, assets: FixtureAssets | None = None) -> ExperimentReport:
    """Minimize elastic energy from random latent states with 1..5 random
    cubature tets; the linear baseline instead uses the least-squares
    null-space elimination, which lands exactly on the rest pose."""
    assets = assets or prepare_fixture(cfg)
    exp = cfg["experiment"]
    counts = [int(c) for c in exp.get("counts", [1, 2, 3, 4, 5])]
    trials = int(exp.get("trials", 100))
    iters = int(exp.get("relax_iters", 50))
    init_scale = float(exp.get("init_scale", 1.0))
    base_seed = int(cfg["training"].get("seed", 0))

    code_std = {m: np.std(assets.codes[m], axis=1) + 1e-12 for m in assets.models}
    report = ExperimentReport("cubature-robustness", list(assets.models), config=cfg,
                              seeds={"base": base_seed, "trials": trials})
    report.scalars["rank_deficient_trials"] = {m: 0.0 for m in assets.models}
    for name in ("mean_final_norm", "var_final_norm"):
        report.scalars[name] = {}
    per_count_series = {m: [] for m in assets.models}
    for count in counts:
        norms = {m: [] for m in assets.models}
        for t in range(trials):
            seed = base_seed + 7919 * count + t
            cub = select_random_cubature(assets.mesh, count, seed)
            rng = np.random.default_rng(seed + 500_000)
            for method, model in assets.models.items():
                if method == "linear":
                    q, rank = linear_nullspace_solve(model.basis, assets.mesh, cub)
                    if rank < model.k:
                        report.scalars["rank_deficient_trials"][method] += 1.0
                    u = model.decode(q)
                else:
                    q0 = init_scale * code_std[method] * rng.standard_normal(model.k)
                    sim = ReducedSim(assets.mesh, assets.material, assets.mass, model,
                                     cubature=cub)
                    out = quasi_static_relax(sim, q0, max_iters=iters)
                    u = model.decode(out.q)
                norms[method].append(float(np.linalg.norm(u)))
        for m in assets.models:
            arr = np.asarray(norms[m])
            per_count_series[m].append((float(arr.mean()), float(arr.var())))
            report.series.setdefault(f"final_norms_count{count}", {})[m] = _finite(arr)
    for m in assets.models:
        report.series.setdefault("mean_final_norm", {})[m] = [x[0] for x in per_count_series[m]]
        report.series.setdefault("var_final_norm", {})[m] = [x[1] for x in per_count_series[m]]
        report.scalars["mean_final_norm"][m] = float(np.mean([x[0] for x in per_count_series[m]]))
        report.scalars["var_final_norm"][m] = float(np.mean([x[1] for x in per_count_series[m]]))
    report.config["counts"] = counts
    return report


def run_sparse_keyframes(cfg: dict, assets: FixtureAssets | None = None) -> ExperimentReport:
    """Five-keyframe supervision; robustness to large latent noise measured
    as the elastic energy of decoded perturbed states."""
    assets = assets or prepare_fixture(cfg)
    if assets.snapshots.count != 5:
        raise BenchError(f"sparse-keyframe fixture must produce exactly 5 snapshots, "
                         f"got {assets.snapshots.count}")
    exp = cfg["experiment"]
    sigma = float(exp.get("noise_sigma", 15.0))
    n_samples = int(exp.get("noise_samples", 50))
    seed = int(exp.get("noise_seed", 123))

    report = ExperimentReport("sparse-keyframes", list(assets.models), config=cfg,
                              seeds={"noise": seed})
    report.scalars["recon_rel_error"] = {}
    report.scalars["median_perturbed_energy"] = {}
    report.scalars["mean_perturbed_energy"] = {}
    report.series["perturbed_energy"] = {}
    U = assets.snapshots.U
    e_rest = elastic.total_energy(assets.mesh, np.zeros(assets.mesh.n_dofs), assets.material)
    for method, model in assets.models.items():
        rec_err = []
        for j in range(U.shape[1]):
            u = U[:, j]
            rec = model.decode(model.encode(u))
            rec_err.append(_mnorm(assets.mass, rec - u) / max(_mnorm(assets.mass, u), 1e-12))
        report.scalars["recon_rel_error"][method] = float(np.mean(rec_err))
        rng = np.random.default_rng(seed)
        # latent units are arbitrary and drift during training, so the noise
        # magnitude is measured in spreads of each model's own training codes
        code_std = np.std(assets.codes[method], axis=1) + 1e-12
        energies = []
        for s in range(n_samples):
            q = assets.codes[method][:, s % U.shape[1]]
            eps = sigma * code_std * rng.standard_normal(model.k)
            u = model.decode(q + eps)
            energies.append(elastic.total_energy(assets.mesh, u, assets.material) - e_rest)
        report.series["perturbed_energy"][method] = _finite(energies)
        report.scalars["median_perturbed_energy"][method] = float(np.median(energies))
        report.scalars["mean_perturbed_energy"][method] = float(np.mean(energies))
    return report


def run_convergence_profile(cfg: dict, assets: FixtureAssets | None = None) -> ExperimentReport:
    """Relax from training-distribution latent states; record normalized
    elastic energy per iteration (deterministic) and wall time (timing
    section), plus the reduced solve-time scaling with subspace size."""
    assets = assets or prepare_fixture(cfg)
    exp = cfg["experiment"]
    runs = int(exp.get("runs", 8))
    iters = int(exp.get("relax_iters", 60))
    init_scale = float(exp.get("init_scale", 1.0))
    base_seed = int(cfg["training"].get("seed", 0))
    e_rest = elastic.total_energy(assets.mesh, np.zeros(assets.mesh.n_dofs), assets.material)

    report = ExperimentReport("convergence-profile", list(assets.models), config=cfg,
                              seeds={"base": base_seed, "runs": runs})
    report.series["mean_normalized_energy"] = {}
    report.series["var_normalized_energy"] = {}
    report.scalars["final_normalized_energy"] = {}
    code_std = {m: np.std(assets.codes[m], axis=1) + 1e-12 for m in assets.models}
    for method, model in assets.models.items():
        sim = ReducedSim(assets.mesh, assets.material, assets.mass, model)
        curves, walls = [], []
        for t in range(runs):
            rng = np.random.default_rng(base_seed + 31 * t)
            q0 = init_scale * code_std[method] * rng.standard_normal(model.k)
            out = quasi_static_relax(sim, q0, max_iters=iters)
            raw = np.asarray(out.energies)
            denom = max(raw[0] - e_rest, 1e-300)
            curve = (raw - e_rest) / denom
            curves.append(curve)
            walls.append(out.wall_ms)
        L = max(len(c) for c in curves)
        padded = np.stack([np.concatenate([c, np.full(L - len(c), c[-1])]) for c in curves])
        report.series["mean_normalized_energy"][method] = _finite(padded.mean(axis=0))
        report.series["var_normalized_energy"][method] = _finite(padded.var(axis=0))
        report.scalars["final_normalized_energy"][method] = float(padded[:, -1].mean())
        report.timing[f"mean_iteration_wall_ms_{method}"] = float(
            np.mean([w[-1] / max(len(w) - 1, 1) for w in walls]))

    # reduced solve time against subspace size for the linear model: the
    # k-dependent portion of one iteration (Jacobian projection of the fixed
    # element Hessian blocks plus the dense solve)
    ks = [int(k) for k in exp.get("timing_ks", [5, 10, 20])]
    reps = int(exp.get("timing_reps", 50))
    He, dofs = elastic.element_hessian_blocks(assets.mesh, np.zeros(assets.mesh.n_dofs),
                                              assets.material)
    solve_ms = []
    for k in ks:
        basis = compute_pca(assets.snapshots.U, assets.mass, k)
        if basis.k < k:
            raise BenchError(f"snapshot rank too small for timing at k={k}")
        B = basis.B
        g = np.ones(k)
        Je = B[dofs]
        np.einsum("eai,eab,ebj->ij", Je, He, Je, optimize=True)  # warm up
        times = []
        for _ in range(reps):
            t0 = time.perf_counter()
            Je = B[dofs]
            H = np.einsum("eai,eab,ebj->ij", Je, He, Je, optimize=True)
            np.linalg.solve(H + 1e-9 * np.eye(k), g)
            times.append((time.perf_counter() - t0) * 1000.0)
        solve_ms.append(float(np.median(times)))
    report.timing["solve_ms_by_k"] = dict(zip(map(str, ks), solve_ms))
    report.config["timing_ks"] = ks
    return report


def run_didactic2d(epochs: int = 4000, n_samples: int = 1500, lr: float = 1e-2,
                   seed: int = 0) -> ExperimentReport:
    """Fit the convex-by-construction net and a plain MLP to z = x^2 + y^2 on
    a disk; compare extrapolation on the annulus outside."""
    icnn = fit_didactic_2d("icnn", seed=seed, epochs=epochs, n_samples=n_samples, lr=lr)
    mlp = fit_didactic_2d("mlp", seed=seed, epochs=epochs, n_samples=n_samples, lr=lr)
    report = ExperimentReport("didactic2d", ["icnn", "mlp"], seeds={"seed": seed},
                              config={"epochs": epochs, "n_samples": n_samples, "lr": lr})
    report.scalars["rmse_inside"] = {"icnn": icnn.rmse_inside, "mlp": mlp.rmse_inside}
    report.scalars["rmse_annulus"] = {"icnn": icnn.rmse_annulus, "mlp": mlp.rmse_annulus}
    return report


def run_experiment(name: str, out_dir=None, fixture=None, assets=None) -> ExperimentReport:
    if name == "didactic2d":
        report = run_didactic2d()
    else:
        cfg = fixture if isinstance(fixture, dict) else load_fixture(fixture or name)
        fn = {
            "direction-generalization": run_direction_generalization,
            "magnitude-generalization": run_magnitude_generalization,
            "cubature-robustness": run_cubature_robustness,
            "sparse-keyframes": run_sparse_keyframes,
            "convergence-profile": run_convergence_profile,
        }.get(name)
        if fn is None:
            raise BenchError(f"unknown experiment {name!r} (have {EXPERIMENTS})")
        report = fn(cfg, assets=assets)
    if out_dir is not None:
        report.save(out_dir)
    return report
