"""Mass-weighted PCA basis and the linear reduced model baseline."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh import LumpedMass
from .storage import load_bundle, save_bundle


class SubspaceError(ValueError):
    pass


@dataclass(frozen=True)
class PcaBasis:
    """Mass-orthonormal basis: B^T M B = I, columns by descending singular value.

    Snapshots are not mean-centered, so q = 0 is the rest configuration.
    """

    B: np.ndarray  # (N, k)
    singular_values: np.ndarray
    rank: int

    @property
    def n_dofs(self) -> int:
        return self.B.shape[0]

    @property
    def k(self) -> int:
        return self.B.shape[1]


def compute_pca(snapshots, mass: LumpedMass, k: int) -> PcaBasis:
    """Top-k modes of the mass-weighted snapshot matrix via thin SVD.

    B = M^{-1/2} U_k where U_k are left singular vectors of M^{1/2} U.
    If the snapshots have rank below k the basis is truncated to the
    achieved rank (recorded in the result).
    """
    U = snapshots.U if hasattr(snapshots, "U") else np.asarray(snapshots)
    n, s = U.shape
    if k < 1 or k > min(n, s):
        raise SubspaceError(f"k={k} out of range for {n}x{s} snapshot matrix")
    sqrt_m = np.sqrt(mass.diag)
    Uh, sv, _ = np.linalg.svd(sqrt_m[:, None] * U, full_matrices=False)
    tol = sv[0] * max(n, s) * np.finfo(np.float64).eps if sv.size else 0.0
    rank = int(np.sum(sv > tol))
    keep = min(k, rank)
    B = Uh[:, :keep] / sqrt_m[:, None]
    return PcaBasis(B=B, singular_values=sv[:keep].copy(), rank=keep)


def linear_reconstruct(basis: PcaBasis, q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    if q.shape[0] != basis.k:
        raise SubspaceError(f"latent size {q.shape[0]} != basis k {basis.k}")
    return basis.B @ q


def linear_project(basis: PcaBasis, mass: LumpedMass, u: np.ndarray) -> np.ndarray:
    u = np.asarray(u, dtype=np.float64)
    if u.shape[0] != basis.n_dofs:
        raise SubspaceError(f"displacement size {u.shape[0]} != basis N {basis.n_dofs}")
    return basis.B.T @ (mass.diag * u.T).T if u.ndim > 1 else basis.B.T @ (mass.diag * u)


def save_basis(basis: PcaBasis, path) -> None:
    save_bundle(path, {"B": basis.B, "singular_values": basis.singular_values},
                meta={"kind": "pca_basis", "N": basis.n_dofs, "k": basis.k, "rank": basis.rank})


def load_basis(path) -> PcaBasis:
    arrays, meta = load_bundle(path)
    if meta.get("kind") != "pca_basis":
        raise SubspaceError(f"{path}: not a basis bundle")
    return PcaBasis(B=arrays["B"], singular_values=arrays["singular_values"],
                    rank=int(meta["rank"]))
