"""Tetrahedral meshes: loading, procedural generation, mass lumping, BCs."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .storage import load_bundle, save_bundle


class MeshError(RuntimeError):
    pass


def _tet_volumes(verts: np.ndarray, tets: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Signed volumes and edge matrices Dm for each element."""
    p = verts[tets]  # (m, 4, 3)
    dm = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0], p[:, 3] - p[:, 0]], axis=2)
    vol6 = np.linalg.det(dm)
    return vol6 / 6.0, dm


@dataclass(frozen=True)
class TetMesh:
    """Immutable tet mesh with precomputed rest-shape data.

    rest_positions is the flat 3n vector (meters); tets is (m, 4) vertex
    indices with positive orientation; rest_shape_inverse holds Dm^-1 per
    element and rest_volume the element volumes (m^3).
    """

    rest_positions: np.ndarray
    tets: np.ndarray
    rest_shape_inverse: np.ndarray
    rest_volume: np.ndarray
    density: float
    dof_grad_op: np.ndarray = field(repr=False)  # (m, 9, 12) vertex-dofs -> vec(F)

    @property
    def n_vertices(self) -> int:
        return self.rest_positions.size // 3

    @property
    def n_elements(self) -> int:
        return self.tets.shape[0]

    @property
    def n_dofs(self) -> int:
        return self.rest_positions.size

    @property
    def verts3(self) -> np.ndarray:
        return self.rest_positions.reshape(-1, 3)

    @property
    def total_volume(self) -> float:
        return float(self.rest_volume.sum())

    def element_dofs(self) -> np.ndarray:
        """(m, 12) global dof index of each element's vertex coordinates."""
        return (3 * self.tets[:, :, None] + np.arange(3)).reshape(self.n_elements, 12)


def make_tet_mesh(verts: np.ndarray, tets: np.ndarray, density: float) -> TetMesh:
    """Validate connectivity, repair inverted elements, precompute Dm^-1.

    Inverted tets are fixed by swapping the last two indices; degenerate
    (near zero volume) elements are an error naming the element.
    """
    verts = np.asarray(verts, dtype=np.float64).reshape(-1, 3)
    tets = np.array(tets, dtype=np.int64).reshape(-1, 4)
    n = verts.shape[0]
    if density <= 0:
        raise MeshError(f"density must be positive, got {density}")
    if tets.size and (tets.min() < 0 or tets.max() >= n):
        raise MeshError("tet index out of range")
    for e, t in enumerate(tets):
        if len(set(t.tolist())) != 4:
            raise MeshError(f"element {e} has repeated vertex indices")

    vol, dm = _tet_volumes(verts, tets)
    flip = vol < 0
    if np.any(flip):
        tets = tets.copy()
        tets[flip, 2], tets[flip, 3] = tets[flip, 3].copy(), tets[flip, 2].copy()
        vol, dm = _tet_volumes(verts, tets)

    edge = np.abs(dm).max(axis=(1, 2))
    degenerate = np.abs(vol) <= 1e-12 * np.maximum(edge, 1e-30) ** 3
    if np.any(degenerate):
        e = int(np.nonzero(degenerate)[0][0])
        raise MeshError(f"element {e} is degenerate (volume {vol[e]:.3e})")

    dminv = np.linalg.inv(dm)
    # Constant per-element linear map from the 12 vertex dofs to the
    # column-major vec of F; reused by energy derivatives.
    w = np.empty((tets.shape[0], 4, 3))
    w[:, 0, :] = -dminv.sum(axis=1)
    w[:, 1:, :] = dminv
    g_op = np.einsum("evc,ab->ecavb", w, np.eye(3)).reshape(-1, 9, 12)

    return TetMesh(
        rest_positions=verts.reshape(-1).copy(),
        tets=tets,
        rest_shape_inverse=dminv,
        rest_volume=vol,
        density=float(density),
        dof_grad_op=g_op,
    )


def make_bar_mesh(nx: int, ny: int, nz: int, dims, density: float = 1000.0) -> TetMesh:
    """Regular grid bar, each cell split into six tets around its diagonal."""
    if min(nx, ny, nz) < 1:
        raise MeshError("cell counts must be >= 1")
    dims = np.asarray(dims, dtype=np.float64)
    if np.any(dims <= 0):
        raise MeshError("dims must be positive")

    xs = np.linspace(0, dims[0], nx + 1)
    ys = np.linspace(0, dims[1], ny + 1)
    zs = np.linspace(0, dims[2], nz + 1)
    gx, gy, gz = np.meshgrid(xs, ys, zs, indexing="ij")
    verts = np.stack([gx, gy, gz], axis=-1).reshape(-1, 3)

    def vid(i, j, k):
        return (i * (ny + 1) + j) * (nz + 1) + k

    tets = []
    for i in range(nx):
        for j in range(ny):
            for k in range(nz):
                c = [
                    vid(i, j, k), vid(i + 1, j, k), vid(i + 1, j + 1, k), vid(i, j + 1, k),
                    vid(i, j, k + 1), vid(i + 1, j, k + 1), vid(i + 1, j + 1, k + 1), vid(i, j + 1, k + 1),
                ]
                a, g = c[0], c[6]  # main diagonal
                # six tets sharing the diagonal a-g
                tets += [
                    (a, c[1], c[2], g), (a, c[2], c[3], g), (a, c[3], c[7], g),
                    (a, c[7], c[4], g), (a, c[4], c[5], g), (a, c[5], c[1], g),
                ]
    return make_tet_mesh(verts, np.array(tets), density)


def make_ellipsoid_mesh(radii, cells: int = 8, density: float = 1000.0) -> TetMesh:
    """Blocky ellipsoid: keeps grid cells whose corners lie inside the ellipsoid."""
    radii = np.asarray(radii, dtype=np.float64)
    bar = make_bar_mesh(cells, cells, cells, 2 * radii, density)
    center = radii
    verts = bar.verts3
    inside = (((verts - center) / radii) ** 2).sum(axis=1) <= 1.0 + 1e-12
    keep = inside[bar.tets].all(axis=1)
    if not np.any(keep):
        raise MeshError("ellipsoid resolution too coarse: no interior cells")
    tets = bar.tets[keep]
    used = np.unique(tets)
    remap = -np.ones(bar.n_vertices, dtype=np.int64)
    remap[used] = np.arange(used.size)
    return make_tet_mesh(verts[used] - center, remap[tets], density)


# ---------------------------------------------------------------------------
# lumped mass

@dataclass(frozen=True)
class LumpedMass:
    """Diagonal mass matrix; each vertex mass replicated across x,y,z."""

    diag: np.ndarray

    @property
    def total_mass(self) -> float:
        return float(self.diag.sum() / 3.0)


def lump_mass(mesh: TetMesh) -> LumpedMass:
    """Distribute density * volume / 4 of each element to its vertices."""
    vmass = np.zeros(mesh.n_vertices)
    share = mesh.density * mesh.rest_volume / 4.0
    for v in range(4):
        np.add.at(vmass, mesh.tets[:, v], share)
    if np.any(vmass <= 0):
        raise MeshError("lumped mass has non-positive entries")
    return LumpedMass(diag=np.repeat(vmass, 3))


# ---------------------------------------------------------------------------
# boundary conditions

@dataclass(frozen=True)
class BoundaryCondition:
    """Fixed vertices with (default zero) prescribed displacements."""

    fixed_vertices: np.ndarray
    prescribed: dict[int, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        fixed = np.unique(np.asarray(self.fixed_vertices, dtype=np.int64))
        object.__setattr__(self, "fixed_vertices", fixed)
        for v, d in self.prescribed.items():
            d = np.asarray(d, dtype=np.float64)
            if d.shape != (3,) or not np.all(np.isfinite(d)):
                raise MeshError(f"prescribed displacement for vertex {v} invalid")
            self.prescribed[v] = d

    def validate(self, mesh: TetMesh) -> None:
        if self.fixed_vertices.size and (
            self.fixed_vertices.min() < 0 or self.fixed_vertices.max() >= mesh.n_vertices
        ):
            raise MeshError("fixed vertex index out of range")
        for v in self.prescribed:
            if v not in set(self.fixed_vertices.tolist()):
                raise MeshError(f"prescribed vertex {v} is not in the fixed set")

    def free_dof_mask(self, n_dofs: int) -> np.ndarray:
        mask = np.ones(n_dofs, dtype=bool)
        for v in self.fixed_vertices:
            mask[3 * v : 3 * v + 3] = False
        return mask

    def apply(self, u: np.ndarray) -> np.ndarray:
        """Overwrite fixed dofs of a displacement vector with prescribed values."""
        out = u.copy()
        for v in self.fixed_vertices:
            out[3 * v : 3 * v + 3] = self.prescribed.get(int(v), np.zeros(3))
        return out


def no_boundary() -> BoundaryCondition:
    return BoundaryCondition(fixed_vertices=np.array([], dtype=np.int64))


def fix_vertices_below(mesh: TetMesh, axis: int, threshold: float) -> BoundaryCondition:
    sel = np.nonzero(mesh.verts3[:, axis] <= threshold)[0]
    return BoundaryCondition(fixed_vertices=sel)


# ---------------------------------------------------------------------------
# surface extraction (for the viewer / picking)

_FACE_PATTERN = [(0, 2, 1), (0, 1, 3), (1, 2, 3), (0, 3, 2)]


def surface_faces(mesh: TetMesh) -> np.ndarray:
    """Outward-oriented boundary triangles (faces used by exactly one tet)."""
    faces = mesh.tets[:, _FACE_PATTERN].reshape(-1, 3)
    key = np.sort(faces, axis=1)
    _, inverse, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    return faces[counts[inverse] == 1]


# ---------------------------------------------------------------------------
# io

_BUILTINS = {}


def _register_builtins():
    unit = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], dtype=float)
    _BUILTINS["single_tet"] = (unit, np.array([[0, 1, 2, 3]]))
    cube = np.array(
        [[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0], [0, 0, 1], [1, 0, 1], [1, 1, 1], [0, 1, 1]],
        dtype=float,
    )
    # five-tet decomposition: four corners plus the central tet
    five = np.array([[0, 1, 3, 4], [1, 2, 3, 6], [1, 5, 6, 4], [3, 6, 7, 4], [1, 6, 3, 4]])
    _BUILTINS["cube5"] = (cube, five)


_register_builtins()


def load_mesh(path, fmt: str = "node_ele", density: float = 1000.0) -> TetMesh:
    """Load a mesh from the text format, a Gmsh v2 .msh file, or a builtin name."""
    if fmt == "builtin":
        if path not in _BUILTINS:
            raise MeshError(f"unknown builtin mesh {path!r} (have {sorted(_BUILTINS)})")
        verts, tets = _BUILTINS[path]
        return make_tet_mesh(verts, tets, density)
    path = Path(path)
    if not path.exists():
        raise MeshError(f"mesh file not found: {path}")
    if fmt == "node_ele":
        return _load_text(path, density)
    if fmt == "msh":
        return _load_msh(path, density)
    raise MeshError(f"unknown mesh format {fmt!r}")


def _significant_lines(path: Path) -> list[str]:
    out = []
    for line in path.read_text().splitlines():
        s = line.split("#", 1)[0].strip()
        if s:
            out.append(s)
    return out


def _load_text(path: Path, density: float) -> TetMesh:
    lines = _significant_lines(path)
    try:
        nv = int(lines[0])
        verts = np.array([[float(x) for x in lines[1 + i].split()] for i in range(nv)])
        ne = int(lines[1 + nv])
        tets = np.array(
            [[int(x) for x in lines[2 + nv + i].split()] for i in range(ne)], dtype=np.int64
        )
    except (IndexError, ValueError) as exc:
        raise MeshError(f"{path}: parse failure: {exc}") from exc
    if verts.shape[1] != 3 or tets.shape[1] != 4:
        raise MeshError(f"{path}: expected 3 coordinates and 4 indices per line")
    return make_tet_mesh(verts, tets, density)


def save_mesh_text(mesh: TetMesh, path) -> None:
    with open(path, "w") as f:
        f.write(f"{mesh.n_vertices}\n")
        for p in mesh.verts3:
            f.write(f"{float(p[0])!r} {float(p[1])!r} {float(p[2])!r}\n")
        f.write(f"{mesh.n_elements}\n")
        for t in mesh.tets:
            f.write(f"{t[0]} {t[1]} {t[2]} {t[3]}\n")


def _load_msh(path: Path, density: float) -> TetMesh:
    lines = path.read_text().splitlines()
    try:
        i = lines.index("$Nodes")
        n = int(lines[i + 1])
        ids, coords = [], []
        for row in lines[i + 2 : i + 2 + n]:
            parts = row.split()
            ids.append(int(parts[0]))
            coords.append([float(x) for x in parts[1:4]])
        j = lines.index("$Elements")
        ne = int(lines[j + 1])
        tets = []
        for row in lines[j + 2 : j + 2 + ne]:
            parts = [int(x) for x in row.split()]
            if parts[1] == 4:  # linear tetrahedron
                ntags = parts[2]
                tets.append(parts[3 + ntags : 7 + ntags])
    except (ValueError, IndexError) as exc:
        raise MeshError(f"{path}: msh parse failure: {exc}") from exc
    if not tets:
        raise MeshError(f"{path}: no tetrahedral elements found")
    remap = {nid: k for k, nid in enumerate(ids)}
    tets = np.array([[remap[v] for v in t] for t in tets], dtype=np.int64)
    return make_tet_mesh(np.array(coords), tets, density)


def save_mesh_native(mesh: TetMesh, path) -> None:
    save_bundle(
        path,
        {"rest_positions": mesh.rest_positions, "tets": mesh.tets},
        meta={"kind": "tetmesh", "density": mesh.density},
    )


def load_mesh_native(path) -> TetMesh:
    arrays, meta = load_bundle(path)
    if meta.get("kind") != "tetmesh":
        raise MeshError(f"{path}: not a mesh bundle")
    return make_tet_mesh(arrays["rest_positions"], arrays["tets"], meta["density"])


def mesh_hash(mesh: TetMesh) -> str:
    import hashlib

    h = hashlib.sha256()
    h.update(mesh.rest_positions.tobytes())
    h.update(mesh.tets.tobytes())
    h.update(np.float64(mesh.density).tobytes())
    return h.hexdigest()[:16]
