"""Stable Neo-Hookean elasticity: energy, analytic gradient, analytic Hessian.

Energy density per element: psi(F) = mu/2 (I_C - 3) + lam/2 (J - a)^2 with
I_C = tr(F^T F), J = det F, and a = 1 + mu/lam, which gives zero stress and
energy mu^2/(2 lam) in the rest state. Defined for inverted elements.

All derivatives use the column-major vec of F. Per-element quantities are
batched over the element axis; assembly order is fixed by element index for
reproducibility.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp


class ElasticError(ValueError):
    pass


@dataclass(frozen=True)
class Material:
    youngs_modulus: float
    poisson_ratio: float

    def __post_init__(self):
        if self.youngs_modulus <= 0:
            raise ElasticError(f"Young's modulus must be positive, got {self.youngs_modulus}")
        if not (0.0 <= self.poisson_ratio < 0.5):
            raise ElasticError(f"Poisson ratio must be in [0, 0.5), got {self.poisson_ratio}")

    @property
    def mu(self) -> float:
        return self.youngs_modulus / (2.0 * (1.0 + self.poisson_ratio))

    @property
    def lam(self) -> float:
        nu = self.poisson_ratio
        return self.youngs_modulus * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))

    @property
    def alpha(self) -> float:
        if self.lam == 0.0:
            raise ElasticError("this energy needs lambda > 0 (Poisson ratio > 0)")
        return 1.0 + self.mu / self.lam

    @property
    def rest_energy_density(self) -> float:
        return self.mu**2 / (2.0 * self.lam)


DEFAULT_MATERIAL = Material(youngs_modulus=1e5, poisson_ratio=0.45)


def _as_batch(F: np.ndarray) -> tuple[np.ndarray, bool]:
    F = np.asarray(F, dtype=np.float64)
    if F.ndim == 2:
        return F[None], True
    return F, False


def deformation_gradients(mesh, u: np.ndarray, elements: np.ndarray | None = None) -> np.ndarray:
    """F = Ds Dm^-1 for every (or the selected) elements."""
    if u.shape != (mesh.n_dofs,):
        raise ElasticError(f"displacement length {u.shape} != ({mesh.n_dofs},)")
    tets = mesh.tets if elements is None else mesh.tets[elements]
    dminv = mesh.rest_shape_inverse if elements is None else mesh.rest_shape_inverse[elements]
    x = (mesh.rest_positions + u).reshape(-1, 3)[tets]  # (m, 4, 3)
    ds = np.stack([x[:, 1] - x[:, 0], x[:, 2] - x[:, 0], x[:, 3] - x[:, 0]], axis=2)
    return ds @ dminv


def _cofactor(F: np.ndarray) -> np.ndarray:
    f0, f1, f2 = F[:, :, 0], F[:, :, 1], F[:, :, 2]
    cof = np.empty_like(F)
    cof[:, :, 0] = np.cross(f1, f2)
    cof[:, :, 1] = np.cross(f2, f0)
    cof[:, :, 2] = np.cross(f0, f1)
    return cof


def element_energy(F: np.ndarray, mat: Material):
    """Energy density psi(F) (J/m^3); accepts one 3x3 or a batch (m,3,3)."""
    Fb, single = _as_batch(F)
    ic = np.einsum("eij,eij->e", Fb, Fb)
    J = np.linalg.det(Fb)
    psi = 0.5 * mat.mu * (ic - 3.0) + 0.5 * mat.lam * (J - mat.alpha) ** 2
    return float(psi[0]) if single else psi


def element_stress(F: np.ndarray, mat: Material):
    """First Piola-Kirchhoff stress dpsi/dF."""
    Fb, single = _as_batch(F)
    J = np.linalg.det(Fb)
    P = mat.mu * Fb + mat.lam * (J - mat.alpha)[:, None, None] * _cofactor(Fb)
    return P[0] if single else P


def _hat(v: np.ndarray) -> np.ndarray:
    """Batched cross-product matrices, (m,3) -> (m,3,3)."""
    m = v.shape[0]
    h = np.zeros((m, 3, 3))
    h[:, 0, 1], h[:, 0, 2] = -v[:, 2], v[:, 1]
    h[:, 1, 0], h[:, 1, 2] = v[:, 2], -v[:, 0]
    h[:, 2, 0], h[:, 2, 1] = -v[:, 1], v[:, 0]
    return h


def _energy_hessian_wrt_F(F: np.ndarray, mat: Material) -> np.ndarray:
    """d2 psi / dF2 as (m,9,9) in column-major vec layout."""
    m = F.shape[0]
    J = np.linalg.det(F)
    g = _cofactor(F).transpose(0, 2, 1).reshape(m, 9)  # vec_col of dJ/dF
    K = mat.lam * np.einsum("ei,ej->eij", g, g)
    K[:, np.arange(9), np.arange(9)] += mat.mu
    # determinant Hessian: skew blocks of the columns of F
    h0, h1, h2 = _hat(F[:, :, 0]), _hat(F[:, :, 1]), _hat(F[:, :, 2])
    HJ = np.zeros((m, 9, 9))
    HJ[:, 0:3, 3:6] = -h2
    HJ[:, 0:3, 6:9] = h1
    HJ[:, 3:6, 0:3] = h2
    HJ[:, 3:6, 6:9] = -h0
    HJ[:, 6:9, 0:3] = -h1
    HJ[:, 6:9, 3:6] = h0
    K += mat.lam * (J - mat.alpha)[:, None, None] * HJ
    return K


def _vec_col(P: np.ndarray) -> np.ndarray:
    return P.transpose(0, 2, 1).reshape(P.shape[0], 9)


def total_energy(mesh, u: np.ndarray, mat: Material,
                 elements: np.ndarray | None = None,
                 weights: np.ndarray | None = None) -> float:
    """Sum of vol_e * psi_e, optionally over a weighted element subset."""
    F = deformation_gradients(mesh, u, elements)
    vol = mesh.rest_volume if elements is None else mesh.rest_volume[elements]
    terms = vol * element_energy(F, mat)
    if weights is not None:
        terms = weights * terms
    return float(terms.sum())


def total_gradient(mesh, u: np.ndarray, mat: Material,
                   elements: np.ndarray | None = None,
                   weights: np.ndarray | None = None) -> np.ndarray:
    """Assembled d(total energy)/du, length N (Newtons)."""
    F = deformation_gradients(mesh, u, elements)
    vol = mesh.rest_volume if elements is None else mesh.rest_volume[elements]
    gop = mesh.dof_grad_op if elements is None else mesh.dof_grad_op[elements]
    dofs = mesh.element_dofs() if elements is None else mesh.element_dofs()[elements]
    scale = vol if weights is None else vol * weights
    P = element_stress(F, mat)
    g12 = np.einsum("erc,er->ec", gop, _vec_col(P)) * scale[:, None]
    out = np.zeros(mesh.n_dofs)
    np.add.at(out, dofs.ravel(), g12.ravel())
    return out


def element_hessian_blocks(mesh, u: np.ndarray, mat: Material,
                           elements: np.ndarray | None = None,
                           weights: np.ndarray | None = None,
                           project: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Per-element 12x12 Hessian blocks and their global dof indices.

    With project=True each block is clamped to positive semidefinite via a
    symmetric eigendecomposition (Newton robustness); disable for exact
    second-derivative checks.
    """
    F = deformation_gradients(mesh, u, elements)
    vol = mesh.rest_volume if elements is None else mesh.rest_volume[elements]
    gop = mesh.dof_grad_op if elements is None else mesh.dof_grad_op[elements]
    dofs = mesh.element_dofs() if elements is None else mesh.element_dofs()[elements]
    scale = vol if weights is None else vol * weights
    K = _energy_hessian_wrt_F(F, mat)
    He = np.einsum("era,erc,ecb->eab", gop, K, gop) * scale[:, None, None]
    He = 0.5 * (He + He.transpose(0, 2, 1))
    if project:
        w, V = np.linalg.eigh(He)
        w = np.maximum(w, 0.0)
        He = np.einsum("eab,eb,ecb->eac", V, w, V)
        He = 0.5 * (He + He.transpose(0, 2, 1))
    return He, dofs


def total_hessian(mesh, u: np.ndarray, mat: Material, project: bool = True,
                  elements: np.ndarray | None = None,
                  weights: np.ndarray | None = None) -> sp.csr_matrix:
    """Assembled sparse symmetric Hessian of the total energy."""
    He, dofs = element_hessian_blocks(mesh, u, mat, elements, weights, project)
    rows = np.broadcast_to(dofs[:, :, None], He.shape)
    cols = np.broadcast_to(dofs[:, None, :], He.shape)
    H = sp.coo_matrix(
        (He.ravel(), (rows.ravel(), cols.ravel())), shape=(mesh.n_dofs, mesh.n_dofs)
    )
    return H.tocsr()
