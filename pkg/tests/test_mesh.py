import numpy as np
import pytest

from softrom.mesh import (
    BoundaryCondition,
    MeshError,
    fix_vertices_below,
    load_mesh,
    load_mesh_native,
    lump_mass,
    make_bar_mesh,
    make_ellipsoid_mesh,
    make_tet_mesh,
    save_mesh_native,
    save_mesh_text,
    surface_faces,
)

UNIT_TET = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], dtype=float)


def test_single_tet_from_file(tmp_path):
    p = tmp_path / "t.mesh"
    p.write_text("4\n0 0 0\n1 0 0\n0 1 0\n0 0 1\n1\n0 1 2 3\n")
    m = load_mesh(p, "node_ele", density=1000.0)
    assert m.n_vertices == 4 and m.n_elements == 1
    assert m.rest_volume[0] == pytest.approx(1 / 6, abs=1e-15)


def test_cube5_total_volume():
    m = load_mesh("cube5", "builtin")
    # oracle: sum of the five analytic tet volumes of the decomposition
    v = m.verts3
    vols = [abs(np.linalg.det(v[t[1:]] - v[t[0]])) / 6 for t in m.tets]
    assert abs(sum(vols) - 1.0) < 1e-12
    assert m.total_volume == pytest.approx(1.0, abs=1e-12)


def test_degenerate_tet_reports_element(tmp_path):
    p = tmp_path / "bad.mesh"
    # fourth vertex coplanar with the first three
    p.write_text("4\n0 0 0\n1 0 0\n0 1 0\n1 1 0\n1\n0 1 2 3\n")
    with pytest.raises(MeshError, match="element 0"):
        load_mesh(p, "node_ele")


def test_inverted_tet_repaired():
    tets = np.array([[0, 1, 3, 2]])  # negative orientation of the unit tet
    m = make_tet_mesh(UNIT_TET, tets, 1000.0)
    assert m.rest_volume[0] > 0
    dm = np.stack([m.verts3[m.tets[0][i]] - m.verts3[m.tets[0][0]] for i in (1, 2, 3)], axis=1)
    assert np.linalg.det(dm) > 0
    # Dm^-1 Dm = I
    assert np.allclose(m.rest_shape_inverse[0] @ dm, np.eye(3), atol=1e-12)


@pytest.mark.parametrize(
    "nx,ny,nz,dims,n,m,vol",
    [
        (1, 1, 1, (1, 1, 1), 8, 6, 1.0),
        (4, 1, 1, (4, 1, 1), 20, 24, 4.0),
        (2, 2, 2, (1, 1, 1), 27, 48, 1.0),
    ],
)
def test_bar_mesh_counts(nx, ny, nz, dims, n, m, vol):
    mesh = make_bar_mesh(nx, ny, nz, dims)
    assert mesh.n_vertices == n
    assert mesh.n_elements == m
    assert mesh.total_volume == pytest.approx(vol, abs=1e-12)


def test_bar_mesh_orientation_positive():
    mesh = make_bar_mesh(2, 3, 1, (2.0, 0.5, 0.25))
    v = mesh.verts3
    for t in mesh.tets:
        assert np.linalg.det(np.stack([v[t[1]] - v[t[0]], v[t[2]] - v[t[0]], v[t[3]] - v[t[0]]], axis=1)) > 0


def test_lump_mass_single_tet():
    m = make_tet_mesh(UNIT_TET, [[0, 1, 2, 3]], density=1000.0)
    lm = lump_mass(m)
    assert np.allclose(lm.diag, 1000.0 / 24.0)
    assert lm.total_mass == pytest.approx(1000.0 / 6.0, rel=1e-12)


def test_mass_conservation_bar():
    mesh = make_bar_mesh(3, 2, 2, (0.3, 0.2, 0.2), density=1.0)
    lm = lump_mass(mesh)
    assert lm.diag.sum() / 3 == pytest.approx(mesh.density * mesh.total_volume, rel=1e-10)
    assert np.all(lm.diag > 0)


def test_zero_density_rejected():
    with pytest.raises(MeshError, match="density"):
        make_tet_mesh(UNIT_TET, [[0, 1, 2, 3]], density=0.0)


def test_native_roundtrip_bit_exact(tmp_path):
    mesh = make_bar_mesh(2, 1, 1, (0.2, 0.1, 0.1), density=950.0)
    p = tmp_path / "bar.srm"
    save_mesh_native(mesh, p)
    back = load_mesh_native(p)
    assert back.rest_positions.tobytes() == mesh.rest_positions.tobytes()
    assert np.array_equal(back.tets, mesh.tets)
    assert back.density == mesh.density


def test_text_roundtrip(tmp_path):
    mesh = make_bar_mesh(1, 2, 1, (0.1, 0.25, 0.1))
    p = tmp_path / "bar.mesh"
    save_mesh_text(mesh, p)
    back = load_mesh(p, "node_ele", density=mesh.density)
    assert np.array_equal(back.rest_positions, mesh.rest_positions)
    assert np.array_equal(back.tets, mesh.tets)


def test_msh_loader(tmp_path):
    msh = """$MeshFormat
2.2 0 8
$EndMeshFormat
$Nodes
4
1 0 0 0
2 1 0 0
3 0 1 0
4 0 0 1
$EndNodes
$Elements
2
1 2 2 0 1 1 2 3
2 4 2 0 1 1 2 3 4
$EndElements
"""
    p = tmp_path / "one.msh"
    p.write_text(msh)
    m = load_mesh(p, "msh", density=500.0)
    assert m.n_elements == 1
    assert m.rest_volume[0] == pytest.approx(1 / 6)


def test_repeated_index_rejected():
    with pytest.raises(MeshError, match="repeated"):
        make_tet_mesh(UNIT_TET, [[0, 1, 2, 2]], 1000.0)


def test_boundary_condition_masks():
    mesh = make_bar_mesh(2, 1, 1, (0.2, 0.1, 0.1))
    bc = fix_vertices_below(mesh, axis=0, threshold=1e-9)
    bc.validate(mesh)
    mask = bc.free_dof_mask(mesh.n_dofs)
    assert mask.sum() == mesh.n_dofs - 3 * bc.fixed_vertices.size
    u = np.ones(mesh.n_dofs)
    applied = bc.apply(u)
    for v in bc.fixed_vertices:
        assert np.all(applied[3 * v : 3 * v + 3] == 0)


def test_prescribed_must_be_fixed():
    mesh = make_bar_mesh(1, 1, 1, (1, 1, 1))
    bc = BoundaryCondition(fixed_vertices=np.array([0]), prescribed={3: np.zeros(3)})
    with pytest.raises(MeshError):
        bc.validate(mesh)


def test_surface_faces_closed_and_outward():
    mesh = make_bar_mesh(2, 2, 2, (1, 1, 1))
    faces = surface_faces(mesh)
    # a 2x2x2 box of cells: each of the 6 box faces has 4 cells * 2 tris = 8
    assert faces.shape == (48, 3)
    v = mesh.verts3
    center = v.mean(axis=0)
    for f in faces:
        n = np.cross(v[f[1]] - v[f[0]], v[f[2]] - v[f[0]])
        assert n @ (v[f].mean(axis=0) - center) > 0  # outward for a convex box


def test_ellipsoid_mesh_sane():
    mesh = make_ellipsoid_mesh((0.2, 0.15, 0.1), cells=6)
    assert mesh.n_elements > 0
    assert mesh.total_volume < 8 * 0.2 * 0.15 * 0.1  # inside the bounding box
    r = np.linalg.norm(mesh.verts3 / np.array([0.2, 0.15, 0.1]), axis=1)
    assert r.max() <= 1.0 + 1e-9
