"""Reduced-space implicit dynamics and quasi-static relaxation.

One reduced step minimizes
    1/(2 dt^2) ||f(q) - f_bar||_M^2 + psi_cub(f(q)) + E_collision - f_ext . f(q)
over q with f_bar = f(q_prev + dt qdot_prev), using a Gauss-Newton Hessian
J^T (M/dt^2 + H_psi + H_col) J (decoder curvature dropped) and backtracking
line search. Elastic terms can be restricted to a weighted cubature subset of
elements; collision is a quadratic penalty on signed-distance penetration.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import elastic
from .elastic import Material
from .mesh import LumpedMass, TetMesh
from .newton import SolveReport, SolverConfig, backtracking_line_search
from .subspace import PcaBasis


class ReducedSimError(ValueError):
    pass


@dataclass
class ReducedState:
    q: np.ndarray
    q_dot: np.ndarray
    time: float = 0.0

    @staticmethod
    def rest(k: int) -> "ReducedState":
        return ReducedState(q=np.zeros(k), q_dot=np.zeros(k))


@dataclass(frozen=True)
class CubatureSet:
    elements: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        el = np.asarray(self.elements, dtype=np.int64)
        w = np.asarray(self.weights, dtype=np.float64)
        object.__setattr__(self, "elements", el)
        object.__setattr__(self, "weights", w)
        if el.size != np.unique(el).size:
            raise ReducedSimError("cubature elements must be distinct")
        if np.any(w <= 0):
            raise ReducedSimError("cubature weights must be positive")

    def validate(self, mesh: TetMesh) -> None:
        if self.elements.size and (self.elements.min() < 0 or self.elements.max() >= mesh.n_elements):
            raise ReducedSimError("cubature element index out of range")


def select_random_cubature(mesh: TetMesh, count: int, seed: int) -> CubatureSet:
    """Uniform sample without replacement; each chosen element's energy is
    scaled by Vol/(count * vol_e) so a spatially uniform energy density is
    estimated without bias."""
    if not (1 <= count <= mesh.n_elements):
        raise ReducedSimError(f"cubature count {count} out of range 1..{mesh.n_elements}")
    rng = np.random.default_rng(seed)
    el = np.sort(rng.choice(mesh.n_elements, size=count, replace=False))
    w = mesh.total_volume / (count * mesh.rest_volume[el])
    return CubatureSet(elements=el, weights=w)


# ---------------------------------------------------------------------------
# SDF colliders

@dataclass(frozen=True)
class SdfCollider:
    """Analytic collision geometry with a quadratic penetration penalty.

    kind "plane": params point (3,), normal (3,) unit; "sphere": center (3,),
    radius (solid inside); "heightfield": origin (2,), spacing (2,), heights
    (nx, ny) grid, solid below the surface (the field is vertical distance,
    so its gradient is exact for the implemented field but unit-norm only
    for flat terrain).
    """

    kind: str
    stiffness: float = 1e4
    point: tuple = (0.0, 0.0, 0.0)
    normal: tuple = (0.0, 0.0, 1.0)
    center: tuple = (0.0, 0.0, 0.0)
    radius: float = 1.0
    origin: tuple = (0.0, 0.0)
    spacing: tuple = (1.0, 1.0)
    heights: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("plane", "sphere", "heightfield"):
            raise ReducedSimError(f"unknown collider kind {self.kind!r}")
        if self.kind == "plane":
            n = np.asarray(self.normal, dtype=np.float64)
            object.__setattr__(self, "normal", tuple(n / np.linalg.norm(n)))
        if self.kind == "heightfield" and self.heights is None:
            raise ReducedSimError("heightfield collider needs a heights grid")

    def _heightfield(self, x, y):
        H = np.asarray(self.heights, dtype=np.float64)
        nx, ny = H.shape
        fx = np.clip((x - self.origin[0]) / self.spacing[0], 0.0, nx - 1 - 1e-12)
        fy = np.clip((y - self.origin[1]) / self.spacing[1], 0.0, ny - 1 - 1e-12)
        i, j = fx.astype(int), fy.astype(int)
        tx, ty = fx - i, fy - j
        h00, h10 = H[i, j], H[i + 1, j]
        h01, h11 = H[i, j + 1], H[i + 1, j + 1]
        h = h00 * (1 - tx) * (1 - ty) + h10 * tx * (1 - ty) + h01 * (1 - tx) * ty + h11 * tx * ty
        hx = ((h10 - h00) * (1 - ty) + (h11 - h01) * ty) / self.spacing[0]
        hy = ((h01 - h00) * (1 - tx) + (h11 - h10) * tx) / self.spacing[1]
        return h, hx, hy

    def phi_grad(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Signed distance and its gradient at points x (n, 3)."""
        if self.kind == "plane":
            p = np.asarray(self.point)
            n = np.asarray(self.normal)
            phi = (x - p) @ n
            grad = np.broadcast_to(n, x.shape).copy()
        elif self.kind == "sphere":
            d = x - np.asarray(self.center)
            dist = np.linalg.norm(d, axis=1)
            phi = dist - self.radius
            safe = np.maximum(dist, 1e-30)
            grad = d / safe[:, None]
        else:
            h, hx, hy = self._heightfield(x[:, 0], x[:, 1])
            phi = x[:, 2] - h
            grad = np.stack([-hx, -hy, np.ones_like(hx)], axis=1)
        if not (np.all(np.isfinite(phi)) and np.all(np.isfinite(grad))):
            raise ReducedSimError("collider produced non-finite values")
        return phi, grad


def collide_sdf(u: np.ndarray, collider: SdfCollider, mesh: TetMesh):
    """Penalty energy (stiffness/2) sum max(0, -phi)^2 and its u-gradient."""
    x = (mesh.rest_positions + u).reshape(-1, 3)
    phi, grad_phi = collider.phi_grad(x)
    pen = phi < 0
    energy = 0.5 * collider.stiffness * float(np.sum(phi[pen] ** 2))
    g = np.zeros_like(x)
    g[pen] = collider.stiffness * phi[pen, None] * grad_phi[pen]
    return energy, g.reshape(-1)


# ---------------------------------------------------------------------------
# the reduced system

@dataclass
class ReducedSim:
    mesh: TetMesh
    material: Material
    mass: LumpedMass
    model: object  # decoder model (decode / jacobian / jacobian_rows)
    cubature: CubatureSet | None = None
    collider: SdfCollider | None = None

    def __post_init__(self):
        if self.model.n_dofs != self.mesh.n_dofs:
            raise ReducedSimError("model output dim does not match the mesh")
        if self.cubature is not None:
            self.cubature.validate(self.mesh)

    @property
    def k(self) -> int:
        return self.model.k

    def _elastic_args(self):
        if self.cubature is None:
            return None, None
        return self.cubature.elements, self.cubature.weights


def reduced_objective(sim: ReducedSim, q: np.ndarray, prev: ReducedState | None = None,
                      dt: float | None = None, f_ext: np.ndarray | None = None,
                      with_grad: bool = True):
    """Objective value and exact k-gradient; omit prev/dt for quasi-statics.

    with_grad=False skips the gradient work (used by line-search probes) and
    returns (value, None).
    """
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (sim.k,):
        raise ReducedSimError(f"latent shape {q.shape} != ({sim.k},)")
    u = sim.model.decode(q)
    elements, weights = sim._elastic_args()
    value = elastic.total_energy(sim.mesh, u, sim.material, elements, weights)
    g_full = elastic.total_gradient(sim.mesh, u, sim.material, elements, weights) \
        if with_grad else None
    if prev is not None:
        if dt is None or dt <= 0:
            raise ReducedSimError("dynamic objective needs dt > 0")
        f_bar = sim.model.decode(prev.q + dt * prev.q_dot)
        du = u - f_bar
        inv_dt2 = 1.0 / (dt * dt)
        value += 0.5 * inv_dt2 * float(du @ (sim.mass.diag * du))
        if with_grad:
            g_full += inv_dt2 * sim.mass.diag * du
    if sim.collider is not None:
        e_col, g_col = collide_sdf(u, sim.collider, sim.mesh)
        value += e_col
        if with_grad:
            g_full += g_col
    if f_ext is not None:
        value -= float(f_ext @ u)
        if with_grad:
            g_full -= f_ext
    if not with_grad:
        return value, None
    J = sim.model.jacobian(q)
    return value, J.T @ g_full


def _gauss_newton_hessian(sim: ReducedSim, q: np.ndarray, dt: float | None):
    """J^T (M/dt^2 + H_elastic + H_collision) J with row-restricted Jacobian
    blocks for the cubature elements."""
    u = sim.model.decode(q)
    elements, weights = sim._elastic_args()
    He, dofs = elastic.element_hessian_blocks(sim.mesh, u, sim.material,
                                              elements, weights, project=True)
    J = sim.model.jacobian(q)
    Je = J[dofs]  # (c, 12, k) row-restricted Jacobian blocks
    H = np.einsum("eai,eab,ebj->ij", Je, He, Je, optimize=True)
    if dt is not None:
        H += (J * sim.mass.diag[:, None]).T @ J / (dt * dt)
    if sim.collider is not None:
        x = (sim.mesh.rest_positions + u).reshape(-1, 3)
        phi, grad_phi = sim.collider.phi_grad(x)
        pen = np.nonzero(phi < 0)[0]
        if pen.size:
            J3 = J.reshape(-1, 3, sim.k)
            A = np.einsum("vc,vck->vk", grad_phi[pen], J3[pen])
            H += sim.collider.stiffness * A.T @ A
    return 0.5 * (H + H.T)


def _newton_reduced(sim, q0, objective_grad, value_only, hessian, cfg: SolverConfig,
                    grad_tol, on_accept=None):
    q = np.asarray(q0, dtype=np.float64).copy()
    fx, g = objective_grad(q)
    report = SolveReport(False, 0, float(np.linalg.norm(g)), fx)
    for it in range(cfg.max_iterations):
        gn = float(np.linalg.norm(g))
        report = SolveReport(True, it, gn, fx)
        if gn <= grad_tol:
            return q, report
        H = hessian(q)
        tau = 0.0
        for _ in range(10):
            try:
                d = np.linalg.solve(H + tau * np.eye(sim.k), -g)
            except np.linalg.LinAlgError:
                d = None
            if d is not None and np.all(np.isfinite(d)) and float(g @ d) < 0:
                break
            tau = max(10.0 * tau, 1e-10 * (np.trace(H) / sim.k + 1.0))
        else:
            d = -g
        slope = float(g @ d)
        ls = backtracking_line_search(value_only, q, fx, d, slope, cfg)
        if ls is None:
            return q, SolveReport(False, it + 1, gn, fx, "line search failure")
        q, fx, _ = ls[0], ls[1], ls[2]
        _, g = objective_grad(q)
        if on_accept is not None:
            on_accept(q, fx)
        if abs(report.objective - fx) / max(abs(report.objective), 1.0) < cfg.rel_decrease_tol:
            return q, SolveReport(True, it + 1, float(np.linalg.norm(g)), fx, "stagnated")
    gn = float(np.linalg.norm(g))
    return q, SolveReport(gn <= grad_tol, cfg.max_iterations, gn, fx,
                          "max iterations reached" if gn > grad_tol else "")


def step_reduced(sim: ReducedSim, state: ReducedState, dt: float,
                 f_ext: np.ndarray | None = None,
                 cfg: SolverConfig | None = None) -> tuple[ReducedState, SolveReport]:
    """One implicit step in the latent space; velocity by finite difference."""
    if dt <= 0:
        raise ReducedSimError("dt must be positive")
    cfg = cfg or SolverConfig()
    grad_tol = cfg.grad_tol_scale * float(sim.mass.diag.sum())
    q_warm = state.q + dt * state.q_dot

    def obj(q):
        return reduced_objective(sim, q, prev=state, dt=dt, f_ext=f_ext)

    def val(q):
        return reduced_objective(sim, q, prev=state, dt=dt, f_ext=f_ext, with_grad=False)[0]

    q_new, report = _newton_reduced(sim, q_warm, obj, val,
                                    lambda q: _gauss_newton_hessian(sim, q, dt),
                                    cfg, grad_tol)
    new = ReducedState(q=q_new, q_dot=(q_new - state.q) / dt, time=state.time + dt)
    return new, report


@dataclass
class RelaxResult:
    qs: list
    energies: list
    wall_ms: list
    report: SolveReport

    @property
    def q(self) -> np.ndarray:
        return self.qs[-1]

    @property
    def energy(self) -> float:
        return self.energies[-1]


def quasi_static_relax(sim: ReducedSim, q0: np.ndarray, f_ext: np.ndarray | None = None,
                       max_iters: int = 100, cfg: SolverConfig | None = None) -> RelaxResult:
    """Minimize psi(f(q)) - f_ext . f(q) from q0, recording accepted iterates."""
    import time as _time

    cfg = cfg or SolverConfig(max_iterations=max_iters)
    if cfg.max_iterations != max_iters:
        cfg = SolverConfig(max_iterations=max_iters, grad_tol_scale=cfg.grad_tol_scale,
                           rel_decrease_tol=cfg.rel_decrease_tol, armijo_c=cfg.armijo_c,
                           max_line_search_steps=cfg.max_line_search_steps)
    grad_tol = cfg.grad_tol_scale * float(sim.mass.diag.sum())
    qs, energies, wall = [], [], []

    def obj(q):
        return reduced_objective(sim, q, f_ext=f_ext)

    def val(q):
        return reduced_objective(sim, q, f_ext=f_ext, with_grad=False)[0]

    q0 = np.asarray(q0, dtype=np.float64)
    t0 = _time.perf_counter()
    qs.append(q0.copy())
    energies.append(val(q0))
    wall.append(0.0)

    def on_accept(q, fx):
        qs.append(q.copy())
        energies.append(fx)
        wall.append((_time.perf_counter() - t0) * 1000.0)

    q_new, report = _newton_reduced(sim, q0, obj, val,
                                    lambda q: _gauss_newton_hessian(sim, q, None),
                                    cfg, grad_tol, on_accept=on_accept)
    if not np.array_equal(qs[-1], q_new):
        qs.append(q_new.copy())
        energies.append(val(q_new))
        wall.append((_time.perf_counter() - t0) * 1000.0)
    return RelaxResult(qs=qs, energies=energies, wall_ms=wall, report=report)


# ---------------------------------------------------------------------------
# linear-baseline null-space elimination

def linear_nullspace_solve(basis: PcaBasis, mesh: TetMesh, cubature: CubatureSet,
                           target_u: np.ndarray | None = None, rcond: float = 1e-10):
    """Least-squares latent solve against the cubature-observed deformation.

    Builds the linearized per-element deformation observation A q (the
    deformation-gradient operator applied to the basis rows of each cubature
    element) and returns the minimum-norm least-squares q reproducing the
    target's observation (rest by default), plus the achieved rank. Null-space
    components of the cubature system never enter the solution, so a rest
    target maps the system exactly back to its rest pose.
    """
    cubature.validate(mesh)
    el = cubature.elements
    dofs = mesh.element_dofs()[el]
    gop = mesh.dof_grad_op[el]  # (c, 9, 12)
    blocks = np.einsum("erc,eck->erk", gop, basis.B[dofs])  # (c, 9, k)
    A = blocks.reshape(-1, basis.k)
    if target_u is None:
        y = np.zeros(A.shape[0])
    else:
        y = np.einsum("erc,ec->er", gop, target_u[dofs]).reshape(-1)
    q, _, rank, _ = np.linalg.lstsq(A, y, rcond=rcond)
    return q, int(rank)
