import numpy as np
import pytest

from softrom import elastic
from softrom.elastic import Material
from softrom.fullsolver import (
    ForceEntry,
    ForceScenario,
    FullState,
    VertexSelector,
    generate_snapshots,
    load_snapshots,
    save_snapshots,
    static_solve,
    step_full,
)
from softrom.mesh import fix_vertices_below, lump_mass, make_bar_mesh, make_tet_mesh
from softrom.newton import SolverConfig, SolverFailure

UNIT_TET = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], dtype=float)
MAT = Material(5e4, 0.4)


def tet_setup():
    mesh = make_tet_mesh(0.1 * UNIT_TET, [[0, 1, 2, 3]], density=1000.0)
    return mesh, lump_mass(mesh)


def test_rest_is_fixed_point():
    mesh, mass = tet_setup()
    state = FullState.rest(mesh)
    scenario = ForceScenario()
    for _ in range(3):
        state, report = step_full(mesh, MAT, mass, state, 0.01, scenario)
        assert report.converged
    assert np.linalg.norm(state.u) < 1e-10


def test_free_fall_one_step_closed_form():
    # uniform translation produces no elastic response, so one implicit step
    # from rest gives exactly u = dt^2 * g on every vertex
    mesh, mass = tet_setup()
    g = (0.0, 0.0, -9.8)
    scenario = ForceScenario(gravity=g)
    dt = 0.01
    state, report = step_full(mesh, MAT, mass, FullState.rest(mesh), dt, scenario)
    assert report.converged
    expected = np.tile(np.array(g) * dt * dt, mesh.n_vertices)
    assert np.max(np.abs(state.u - expected)) < 1e-8


def bar_with_tip_load(fz=-40.0, density=1000.0):
    mesh = make_bar_mesh(3, 1, 1, (0.3, 0.1, 0.1), density=density)
    bc = fix_vertices_below(mesh, axis=0, threshold=1e-9)
    tip = VertexSelector(kind="axis", axis=0, op=">", value=0.3 - 1e-9)
    scenario = ForceScenario(entries=(ForceEntry(0.0, np.inf, tip, (0.0, 0.0, fz)),))
    return mesh, lump_mass(mesh), bc, scenario, tip


def test_stasis_reaches_equilibrium_and_matches_static_solve():
    mat = Material(1e6, 0.4)
    mesh, mass, bc, scenario, tip = bar_with_tip_load(fz=-20.0, density=300.0)
    dt = 0.02
    state = FullState.rest(mesh)
    for _ in range(150):
        state, report = step_full(mesh, mat, mass, state, dt, scenario, bc)
        assert report.converged
    f_ext = scenario.external_force(mesh, mass, state.time)
    free = bc.free_dof_mask(mesh.n_dofs)
    resid = elastic.total_gradient(mesh, state.u, mat) - f_ext
    tol = 1e-6 * mass.diag.sum()
    assert np.linalg.norm(resid[free]) < tol
    u_static, rep = static_solve(mesh, mat, mass, f_ext, bc)
    assert rep.converged
    assert np.max(np.abs(state.u - u_static)) < 1e-5 * max(np.abs(u_static).max(), 1e-9)


def test_step_objective_not_increased():
    mesh, mass, bc, scenario, _ = bar_with_tip_load(fz=-200.0)
    dt = 0.01
    state = FullState.rest(mesh)
    u_bar = bc.apply(state.u + dt * state.u_dot)
    f_ext = scenario.external_force(mesh, mass, dt)

    def objective(u):
        du = u - u_bar
        return (
            0.5 / dt**2 * float(du @ (mass.diag * du))
            + elastic.total_energy(mesh, u, MAT)
            - float(f_ext @ u)
        )

    new, report = step_full(mesh, MAT, mass, state, dt, scenario, bc)
    assert report.converged
    assert objective(new.u) <= objective(bc.apply(u_bar)) + 1e-12


def test_bc_exactness_through_snapshots():
    mesh, mass, bc, scenario, _ = bar_with_tip_load()
    snaps = generate_snapshots(mesh, MAT, scenario, bc, dt=0.01, steps=6, stride=1)
    for j in range(snaps.count):
        for v in bc.fixed_vertices:
            assert np.all(snaps.U[3 * v : 3 * v + 3, j] == 0.0)


def test_snapshot_counting():
    mesh, mass, bc, scenario, _ = bar_with_tip_load()
    s1 = generate_snapshots(mesh, MAT, scenario, bc, dt=0.01, steps=10, stride=1)
    assert s1.count == 10
    s2 = generate_snapshots(mesh, MAT, scenario, bc, dt=0.01, steps=10, stride=5)
    assert s2.count == 2
    assert np.allclose(s2.timestamps, [0.05, 0.10])


def test_snapshot_roundtrip(tmp_path):
    mesh, mass, bc, scenario, _ = bar_with_tip_load()
    snaps = generate_snapshots(mesh, MAT, scenario, bc, dt=0.01, steps=4, stride=2,
                               meta={"scenario": "tip_load"})
    p = tmp_path / "snaps.srm"
    save_snapshots(snaps, p)
    back = load_snapshots(p)
    assert back.U.tobytes() == snaps.U.tobytes()
    assert back.meta["scenario"] == "tip_load"
    assert back.meta["dt"] == 0.01


def test_determinism():
    mesh, mass, bc, scenario, _ = bar_with_tip_load()
    a = generate_snapshots(mesh, MAT, scenario, bc, dt=0.01, steps=5, stride=1)
    b = generate_snapshots(mesh, MAT, scenario, bc, dt=0.01, steps=5, stride=1)
    assert a.U.tobytes() == b.U.tobytes()


def test_overlapping_schedule_rejected():
    sel = VertexSelector(kind="all")
    with pytest.raises(ValueError, match="overlap"):
        ForceScenario(entries=(
            ForceEntry(0.0, 1.0, sel, (0, 0, 1.0)),
            ForceEntry(0.5, 2.0, sel, (0, 0, 2.0)),
        ))


def test_selector_kinds():
    mesh = make_bar_mesh(2, 1, 1, (0.2, 0.1, 0.1))
    assert VertexSelector(kind="all").resolve(mesh).size == mesh.n_vertices
    idx = VertexSelector(kind="indices", indices=(0, 5)).resolve(mesh)
    assert np.array_equal(idx, [0, 5])
    box = VertexSelector(kind="box", box_min=(0.19, 0, 0), box_max=(0.21, 1, 1)).resolve(mesh)
    assert np.all(mesh.verts3[box][:, 0] > 0.15)
    with pytest.raises(ValueError):
        VertexSelector(kind="indices", indices=(99,)).resolve(mesh)


def test_nonconvergence_diagnostic():
    mesh, mass, bc, scenario, _ = bar_with_tip_load(fz=-5e4)
    cfg = SolverConfig(max_iterations=1, grad_tol_scale=1e-14)
    state, report = step_full(mesh, MAT, mass, FullState.rest(mesh), 0.05, scenario, bc, cfg)
    assert not report.converged
    assert report.residual_norm > 0
    with pytest.raises(SolverFailure, match="step 1"):
        generate_snapshots(mesh, MAT, scenario, bc, dt=0.05, steps=2, stride=1, cfg=cfg)


def test_gravity_plus_schedule_superpose():
    mesh, mass = tet_setup()
    sel = VertexSelector(kind="indices", indices=(2,))
    scenario = ForceScenario(entries=(ForceEntry(0.0, 1.0, sel, (1.0, 0.0, 0.0)),),
                             gravity=(0.0, 0.0, -9.8))
    f = scenario.external_force(mesh, mass, 0.5)
    assert f[3 * 2 + 0] == pytest.approx(1.0)
    assert f[2::3] == pytest.approx(-9.8 * mass.diag[2::3])
    f_after = scenario.external_force(mesh, mass, 1.5)  # schedule expired
    assert f_after[3 * 2 + 0] == pytest.approx(0.0)
