"""P1 finite elements for the Dirichlet problem div(f grad u) = s, u = 0 on the boundary.

The diffusivity enters through its value at each triangle centroid (one-point
quadrature of the P1 interpolant), the source through centroid quadrature of
the load. Dirichlet conditions are imposed by eliminating boundary rows and
columns, so the interior system is symmetric positive definite.

With a positive source the solution is non-positive (the operator is
``div(f grad .)``, not its negative).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import cg, splu

from .mesh import NodalField, TriangularMesh, interpolation_matrix

logger = logging.getLogger(__name__)

Source = Union[float, Callable[[np.ndarray], np.ndarray]]

SOLVER_RTOL = 1e-10


class EllipticityError(ValueError):
    """Diffusivity is not strictly positive."""


class SolverError(RuntimeError):
    """The linear solve did not reach the requested residual."""


def p1_gradients(mesh: TriangularMesh) -> np.ndarray:
    """Gradients of the three hat functions on each triangle, shape (T, 3, 2)."""
    p = mesh.node_coords[mesh.triangles]
    two_a = 2.0 * mesh.signed_areas[:, None]
    x, y = p[..., 0], p[..., 1]
    gx = (np.roll(y, -1, axis=1) - np.roll(y, -2, axis=1)) / two_a
    gy = (np.roll(x, -2, axis=1) - np.roll(x, -1, axis=1)) / two_a
    return np.stack([gx, gy], axis=-1)


def local_stiffness(mesh: TriangularMesh) -> np.ndarray:
    """Element matrices of int grad(psi_i).grad(psi_j) for f = 1, shape (T, 3, 3)."""
    g = p1_gradients(mesh)
    return mesh.signed_areas[:, None, None] * np.einsum("tik,tjk->tij", g, g)


def local_mass(mesh: TriangularMesh) -> np.ndarray:
    base = (np.ones((3, 3)) + np.eye(3)) / 12.0
    return mesh.signed_areas[:, None, None] * base


def _coo_to_csr(mesh: TriangularMesh, local: np.ndarray, nodes=None) -> sp.csr_matrix:
    rows = np.repeat(mesh.triangles, 3, axis=1).ravel()
    cols = np.tile(mesh.triangles, (1, 3)).ravel()
    A = sp.csr_matrix((local.ravel(), (rows, cols)), shape=(mesh.M, mesh.M))
    A.sum_duplicates()
    if nodes is not None:
        A = A[nodes][:, nodes]
    return A


def _check_positive(values: np.ndarray) -> None:
    if not np.all(np.isfinite(values)):
        raise EllipticityError("diffusivity has non-finite values")
    if np.any(values <= 0):
        bad = int(np.argmin(values))
        raise EllipticityError(
            f"diffusivity must be strictly positive; node {bad} has value {values[bad]:g}")


def _values(f) -> np.ndarray:
    return f.values if isinstance(f, NodalField) else np.asarray(f, dtype=float)


def assemble_stiffness(mesh: TriangularMesh, f, restrict: bool = True) -> sp.csr_matrix:
    """Stiffness matrix of int f grad(psi_i).grad(psi_j), f taken at centroids.

    With ``restrict`` (default) rows and columns of boundary nodes are removed
    and the result is indexed by ``mesh.interior_nodes``.
    """
    fv = _values(f)
    if fv.shape != (mesh.M,):
        raise ValueError("diffusivity must have one value per node")
    _check_positive(fv)
    fc = fv[mesh.triangles].mean(axis=1)
    local = fc[:, None, None] * local_stiffness(mesh)
    return _coo_to_csr(mesh, local, mesh.interior_nodes if restrict else None)


def assemble_mass(mesh: TriangularMesh, restrict: bool = False) -> sp.csr_matrix:
    """Consistent P1 mass matrix."""
    return _coo_to_csr(mesh, local_mass(mesh), mesh.interior_nodes if restrict else None)


def source_at(s: Source, points: np.ndarray) -> np.ndarray:
    if callable(s):
        vals = np.broadcast_to(np.asarray(s(points), dtype=float), (len(points),))
    else:
        vals = np.full(len(points), float(s))
    if not np.all(np.isfinite(vals)):
        raise ValueError("source has non-finite values")
    return vals


def assemble_load(mesh: TriangularMesh, s: Source) -> np.ndarray:
    """Load vector b_i = sum over triangles at node i of s(centroid) * area / 3."""
    w = source_at(s, mesh.centroids) * mesh.signed_areas / 3.0
    return np.bincount(mesh.triangles.ravel(), weights=np.repeat(w, 3), minlength=mesh.M)


@dataclass
class ForwardSolution:
    u: NodalField
    f_used: NodalField
    residual_norm: float

    def __call__(self, points) -> np.ndarray:
        return evaluate_solution(self, points)


class ForwardOperator:
    """Repeated solves on one mesh with a fixed source.

    The sparsity pattern of the interior stiffness matrix is computed once;
    each call then only scatters the new element contributions and factorises.
    """

    def __init__(self, mesh: TriangularMesh, source: Source = 1.0, rtol: float = SOLVER_RTOL):
        self.mesh = mesh
        self.rtol = rtol
        interior = mesh.interior_nodes
        self._interior = interior
        n_int = len(interior)
        renum = np.full(mesh.M, -1, dtype=np.int64)
        renum[interior] = np.arange(n_int)
        rows = renum[np.repeat(mesh.triangles, 3, axis=1)].ravel()
        cols = renum[np.tile(mesh.triangles, (1, 3))].ravel()
        keep = (rows >= 0) & (cols >= 0)
        keys = rows[keep] * n_int + cols[keep]
        ukeys, self._slot = np.unique(keys, return_inverse=True)
        self._keep = keep
        self._nnz = len(ukeys)
        r, c = np.divmod(ukeys, n_int)
        self._indices = c.astype(np.int32)
        self._indptr = np.searchsorted(r, np.arange(n_int + 1)).astype(np.int32)
        self._kloc = local_stiffness(mesh).reshape(len(mesh.triangles), 9)
        self._n_int = n_int
        self.load = assemble_load(mesh, source)
        self._rhs = -self.load[interior]
        self._rhs_norm = float(np.linalg.norm(self._rhs))

    def stiffness(self, f_values: np.ndarray) -> sp.csc_matrix:
        _check_positive(f_values)
        fc = f_values[self.mesh.triangles].mean(axis=1)
        contrib = (fc[:, None] * self._kloc).ravel()[self._keep]
        data = np.bincount(self._slot, weights=contrib, minlength=self._nnz)
        # symmetric, so the CSR arrays read as CSC describe the same matrix
        return sp.csc_matrix((data, self._indices, self._indptr), shape=(self._n_int,) * 2)

    def solve(self, f_values) -> np.ndarray:
        """Nodal solution values (zero on the boundary)."""
        u, _ = self._solve(_values(f_values))
        return u

    def _solve(self, fv: np.ndarray):
        u = np.zeros(self.mesh.M)
        if self._n_int == 0 or self._rhs_norm == 0.0:
            _check_positive(fv)
            return u, 0.0
        K = self.stiffness(fv)
        b = self._rhs
        try:
            x = splu(K, permc_spec="MMD_AT_PLUS_A",
                     options={"SymmetricMode": True}).solve(b)
        except RuntimeError as err:
            logger.warning("sparse factorisation failed (%s); falling back to CG", err)
            x = None
        res = np.inf if x is None else float(np.linalg.norm(K @ x - b))
        if not res <= self.rtol * self._rhs_norm:
            d = K.diagonal()
            if np.any(d <= 0):
                raise SolverError("stiffness matrix has a non-positive diagonal entry")
            pre = sp.diags(1.0 / d)
            x, info = cg(K, b, x0=x if x is not None and np.all(np.isfinite(x)) else None,
                         rtol=self.rtol, atol=0.0, M=pre, maxiter=10 * self._n_int)
            res = float(np.linalg.norm(K @ x - b))
            if info != 0 or not res <= self.rtol * self._rhs_norm * 1.0001:
                raise SolverError(f"linear solve failed: relative residual "
                                  f"{res / self._rhs_norm:.3e} (cg info={info})")
        u[self._interior] = x
        return u, res

    def __call__(self, f) -> ForwardSolution:
        fv = _values(f)
        u, res = self._solve(fv)
        return ForwardSolution(NodalField(u, self.mesh), NodalField(fv, self.mesh), res)


def solve_forward(mesh: TriangularMesh, f, s: Source = 1.0) -> ForwardSolution:
    """Solve div(f grad u) = s with u = 0 on the boundary."""
    return ForwardOperator(mesh, s)(f)


def evaluate_solution(sol: ForwardSolution, points) -> np.ndarray:
    """P1 interpolation of the solution at ``points`` (input order)."""
    P = interpolation_matrix(sol.u.mesh, points)
    return P @ sol.u.values
