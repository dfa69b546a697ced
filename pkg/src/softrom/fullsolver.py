"""Full-space implicit Euler dynamics via Newton, and snapshot generation.

One time step solves
    u_next = argmin_u  1/(2 dt^2) ||u - u_bar||_M^2 + psi_elastic(u) - f_ext . u
with u_bar = u + dt * u_dot, Dirichlet dofs eliminated, and velocity updated
by finite difference.
"""

from __future__ import annotations


from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import elastic
from .elastic import Material
from .mesh import BoundaryCondition, LumpedMass, TetMesh, no_boundary
from .newton import SolveReport, SolverConfig, SolverFailure, backtracking_line_search
from .storage import load_bundle, save_bundle


@dataclass
class FullState:
    u: np.ndarray
    u_dot: np.ndarray
    time: float = 0.0

    @staticmethod
    def rest(mesh: TetMesh) -> "FullState":
        return FullState(u=np.zeros(mesh.n_dofs), u_dot=np.zeros(mesh.n_dofs))


# ---------------------------------------------------------------------------
# force scenarios

@dataclass(frozen=True)
class VertexSelector:
    """Resolves to vertex indices: kind one of all|indices|box|axis."""

    kind: str
    indices: tuple = ()
    box_min: tuple = ()
    box_max: tuple = ()
    axis: int = 0
    op: str = "<"
    value: float = 0.0

    def resolve(self, mesh: TetMesh) -> np.ndarray:
        v = mesh.verts3
        if self.kind == "all":
            return np.arange(mesh.n_vertices)
        if self.kind == "indices":
            idx = np.asarray(self.indices, dtype=np.int64)
            if idx.size and (idx.min() < 0 or idx.max() >= mesh.n_vertices):
                raise ValueError("selector index out of range")
            return idx
        if self.kind == "box":
            lo, hi = np.asarray(self.box_min), np.asarray(self.box_max)
            mask = np.all((v >= lo) & (v <= hi), axis=1)
            return np.nonzero(mask)[0]
        if self.kind == "axis":
            col = v[:, self.axis]
            mask = col < self.value if self.op == "<" else col > self.value
            return np.nonzero(mask)[0]
        raise ValueError(f"unknown selector kind {self.kind!r}")


@dataclass(frozen=True)
class ForceEntry:
    t0: float
    t1: float
    selector: VertexSelector
    force: tuple  # Newtons per selected vertex

    def active(self, t: float) -> bool:
        return self.t0 <= t < self.t1


@dataclass(frozen=True)
class ForceScenario:
    entries: tuple = ()
    gravity: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        by_sel: dict = {}
        for e in self.entries:
            by_sel.setdefault(e.selector, []).append((e.t0, e.t1))
        for spans in by_sel.values():
            spans.sort()
            for (a0, a1), (b0, b1) in zip(spans, spans[1:]):
                if b0 < a1:
                    raise ValueError("overlapping schedule intervals for one selector")

    def external_force(self, mesh: TetMesh, mass: LumpedMass, t: float) -> np.ndarray:
        f = mass.diag * np.tile(np.asarray(self.gravity, dtype=np.float64), mesh.n_vertices)
        for e in self.entries:
            if e.active(t):
                verts = e.selector.resolve(mesh)
                fv = np.asarray(e.force, dtype=np.float64)
                for a in range(3):
                    f[3 * verts + a] += fv[a]
        return f


# ---------------------------------------------------------------------------
# Newton minimization of the incremental potential

def _newton_minimize(objective, gradient, hessian, u0, free, cfg: SolverConfig, grad_tol):
    """Minimize over the free dofs of u; fixed dofs of u0 are held."""
    u = u0.copy()
    fx = objective(u)
    report = SolveReport(False, 0, np.inf, fx)
    for it in range(cfg.max_iterations):
        g = gradient(u)
        gn = float(np.linalg.norm(g[free]))
        report = SolveReport(True, it, gn, fx)
        if gn <= grad_tol:
            return u, report
        H = hessian(u)
        Hff = H[free][:, free].tocsc()
        d = np.zeros_like(u)
        tau = 0.0
        for attempt in range(8):
            try:
                Hreg = Hff if tau == 0.0 else (Hff + tau * sp.identity(Hff.shape[0], format="csc"))
                d[free] = spla.splu(Hreg).solve(-g[free])
            except RuntimeError:
                d[free] = 0.0
            slope = float(g[free] @ d[free])
            if np.all(np.isfinite(d[free])) and slope < 0:
                break
            tau = max(10.0 * tau, 1e-8 * (abs(Hff.diagonal()).mean() + 1.0))
        else:
            d[free] = -g[free]
            slope = -gn * gn
        ls = backtracking_line_search(objective, u, fx, d, slope, cfg)
        if ls is None:
            report = SolveReport(False, it + 1, gn, fx, "line search failure")
            return u, report
        u_new, f_new, _ = ls
        rel = abs(fx - f_new) / max(abs(fx), 1.0)
        u, fx = u_new, f_new
        if rel < cfg.rel_decrease_tol:
            g = gradient(u)
            gn = float(np.linalg.norm(g[free]))
            return u, SolveReport(True, it + 1, gn, fx, "stagnated objective")
    g = gradient(u)
    gn = float(np.linalg.norm(g[free]))
    return u, SolveReport(gn <= grad_tol, cfg.max_iterations, gn, fx,
                          "max iterations reached" if gn > grad_tol else "")


def step_full(mesh: TetMesh, mat: Material, mass: LumpedMass, state: FullState, dt: float,
              scenario: ForceScenario, bc: BoundaryCondition | None = None,
              cfg: SolverConfig | None = None) -> tuple[FullState, SolveReport]:
    """Advance one implicit Euler step; returns the new state and diagnostics."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    bc = bc or no_boundary()
    cfg = cfg or SolverConfig()
    free = bc.free_dof_mask(mesh.n_dofs)
    t_next = state.time + dt
    f_ext = scenario.external_force(mesh, mass, t_next)
    u_bar = bc.apply(state.u + dt * state.u_dot)
    mdiag = mass.diag
    inv_dt2 = 1.0 / (dt * dt)

    def objective(u):
        du = u - u_bar
        return 0.5 * inv_dt2 * float(du @ (mdiag * du)) + elastic.total_energy(mesh, u, mat) \
            - float(f_ext @ u)

    def gradient(u):
        return inv_dt2 * mdiag * (u - u_bar) + elastic.total_gradient(mesh, u, mat) - f_ext

    def hessian(u):
        H = elastic.total_hessian(mesh, u, mat, project=True)
        return H + sp.diags(inv_dt2 * mdiag)

    grad_tol = cfg.grad_tol_scale * float(mdiag.sum())
    u0 = bc.apply(u_bar)
    u_next, report = _newton_minimize(objective, gradient, hessian, u0, free, cfg, grad_tol)
    u_next = bc.apply(u_next)
    new = FullState(u=u_next, u_dot=(u_next - state.u) / dt, time=t_next)
    return new, report


def static_solve(mesh: TetMesh, mat: Material, mass: LumpedMass, f_ext: np.ndarray,
                 bc: BoundaryCondition | None = None, cfg: SolverConfig | None = None,
                 u0: np.ndarray | None = None) -> tuple[np.ndarray, SolveReport]:
    """Minimize psi(u) - f_ext . u (equilibrium under a constant load)."""
    bc = bc or no_boundary()
    cfg = cfg or SolverConfig(max_iterations=100)
    free = bc.free_dof_mask(mesh.n_dofs)

    def objective(u):
        return elastic.total_energy(mesh, u, mat) - float(f_ext @ u)

    def gradient(u):
        return elastic.total_gradient(mesh, u, mat) - f_ext

    def hessian(u):
        return elastic.total_hessian(mesh, u, mat, project=True)

    grad_tol = cfg.grad_tol_scale * float(mass.diag.sum())
    start = bc.apply(u0 if u0 is not None else np.zeros(mesh.n_dofs))
    return _newton_minimize(objective, gradient, hessian, start, free, cfg, grad_tol)


# ---------------------------------------------------------------------------
# snapshot generation

@dataclass
class SnapshotSet:
    U: np.ndarray  # (N, S) displacement columns
    timestamps: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def n_dofs(self) -> int:
        return self.U.shape[0]

    @property
    def count(self) -> int:
        return self.U.shape[1]


def generate_snapshots(mesh: TetMesh, mat: Material, scenario: ForceScenario,
                       bc: BoundaryCondition | None, dt: float, steps: int, stride: int = 1,
                       cfg: SolverConfig | None = None, meta: dict | None = None) -> SnapshotSet:
    """Run the full solver and record every stride-th displacement."""
    from .mesh import lump_mass

    mass = lump_mass(mesh)
    state = FullState.rest(mesh)
    cols, times = [], []
    for step in range(1, steps + 1):
        state, report = step_full(mesh, mat, mass, state, dt, scenario, bc, cfg)
        if not report.converged:
            raise SolverFailure(f"solver failed at step {step}: {report.message} "
                                f"(residual {report.residual_norm:.3e})", report)
        if step % stride == 0:
            cols.append(state.u.copy())
            times.append(state.time)
    info = {
        "dt": dt, "steps": steps, "stride": stride,
        "youngs_modulus": mat.youngs_modulus, "poisson_ratio": mat.poisson_ratio,
        "density": mesh.density,
    }
    info.update(meta or {})
    return SnapshotSet(U=np.array(cols).T if cols else np.zeros((mesh.n_dofs, 0)),
                       timestamps=np.array(times), meta=info)


def save_snapshots(snaps: SnapshotSet, path) -> None:
    # stored column-major: each snapshot is contiguous on disk
    save_bundle(path, {"U_T": np.ascontiguousarray(snaps.U.T), "timestamps": snaps.timestamps},
                meta={"kind": "snapshots", **snaps.meta})


def load_snapshots(path) -> SnapshotSet:
    arrays, meta = load_bundle(path)
    if meta.get("kind") != "snapshots":
        raise ValueError(f"{path}: not a snapshot bundle")
    meta = {k: v for k, v in meta.items() if k != "kind"}
    return SnapshotSet(U=arrays["U_T"].T.copy(), timestamps=arrays["timestamps"], meta=meta)
