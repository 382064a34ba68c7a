"""Dirichlet-Laplacian eigenpairs: closed form on the disk, finite elements elsewhere.

Sign convention: -Laplace(e) = lambda * e with lambda > 0 and e = 0 on the
boundary. Eigenfunctions are normalised to unit L2 norm.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from scipy import special
from scipy.sparse.linalg import eigsh
from scipy.stats import linregress

from .fem import assemble_mass, assemble_stiffness
from .mesh import DISK_RADIUS, NodalField, TriangularMesh

logger = logging.getLogger(__name__)


class EigenError(RuntimeError):
    pass


# --------------------------------------------------------------------------
# Bessel zeros

def mcmahon(m: int, k: int) -> float:
    """McMahon's large-zero expansion for the k-th positive zero of J_m."""
    beta = (k + 0.5 * m - 0.25) * np.pi
    mu = 4.0 * m * m
    b8 = 8.0 * beta
    return (beta - (mu - 1) / b8
            - 4 * (mu - 1) * (7 * mu - 31) / (3 * b8 ** 3)
            - 32 * (mu - 1) * (83 * mu ** 2 - 982 * mu + 3779) / (15 * b8 ** 5))


def _first_zero_large_order(m: int) -> float:
    # asymptotic in the order; accurate to a few 1e-3 already for m = 1
    return m + 1.8557571 * m ** (1 / 3) + 1.033150 * m ** (-1 / 3) - 0.00397 / m


def _newton_in_bracket(m: int, lo: float, hi: float, seed: float, tol: float = 1e-14) -> float:
    flo = special.jv(m, lo)
    x = seed if lo < seed < hi else 0.5 * (lo + hi)
    for _ in range(100):
        fx = special.jv(m, x)
        if fx == 0.0:
            return x
        if np.sign(fx) == np.sign(flo):
            lo, flo = x, fx
        else:
            hi = x
        step = fx / special.jvp(m, x)
        xn = x - step
        if not lo < xn < hi:
            xn = 0.5 * (lo + hi)
        if abs(xn - x) <= tol * max(1.0, abs(x)):
            return xn
        x = xn
    return x


def bessel_j_zeros(m: int, x_max: Optional[float] = None, count: Optional[int] = None) -> np.ndarray:
    """Positive zeros of J_m, either all below ``x_max`` or the first ``count``.

    Each zero is bracketed by a sign-change scan (zeros of J_m are more than
    pi apart and the first exceeds m) and polished by safeguarded Newton
    iteration started from McMahon's expansion.
    """
    if m < 0:
        raise ValueError("order must be non-negative")
    if (x_max is None) == (count is None):
        raise ValueError("give exactly one of x_max and count")
    zeros: List[float] = []
    x = max(float(m), 1e-3)
    step = 0.5
    while True:
        if count is not None and len(zeros) >= count:
            break
        a, fa = x, special.jv(m, x)
        b = a + step
        while np.sign(special.jv(m, b)) == np.sign(fa) and special.jv(m, b) != 0.0:
            a, b = b, b + step
        if x_max is not None and a > x_max:
            break
        k = len(zeros) + 1
        seed = mcmahon(m, k) if (k > 1 or m == 0) else _first_zero_large_order(m)
        z = _newton_in_bracket(m, a, b, seed)
        if x_max is not None and z > x_max:
            break
        zeros.append(z)
        x = z + 1e-9
    return np.array(zeros)


# --------------------------------------------------------------------------
# Eigen bases

@dataclass(eq=False)
class EigenBasis:
    """Eigenvalues (ascending) and nodal eigenfunctions, one column per pair."""

    lambdas: np.ndarray
    vectors: np.ndarray
    mesh: Optional[TriangularMesh]
    lambda_max: float
    method: str
    labels: list = field(default_factory=list)

    @property
    def J(self) -> int:
        return len(self.lambdas)

    @property
    def efuns(self) -> List[NodalField]:
        return [NodalField(self.vectors[:, j], self.mesh) for j in range(self.J)]

    def truncate(self, J: int) -> "EigenBasis":
        if not 1 <= J <= self.J:
            raise ValueError(f"cannot truncate {self.J} eigenpairs to {J}")
        return EigenBasis(self.lambdas[:J], self.vectors[:, :J], self.mesh,
                          float(self.lambdas[J - 1]), self.method, self.labels[:J])


@dataclass(frozen=True)
class DiskMode:
    """One closed-form Dirichlet eigenfunction of the disk of radius R."""

    m: int
    k: int
    branch: str          # "cos" or "sin"
    zero: float
    R: float

    @property
    def eigenvalue(self) -> float:
        return (self.zero / self.R) ** 2

    @property
    def norm_const(self) -> float:
        # int_0^R J_m(z r/R)^2 r dr = R^2 J_{m+1}(z)^2 / 2
        radial = 0.5 * self.R ** 2 * special.jv(self.m + 1, self.zero) ** 2
        angular = 2 * np.pi if self.m == 0 else np.pi
        return 1.0 / np.sqrt(radial * angular)

    def __call__(self, points) -> np.ndarray:
        p = np.atleast_2d(np.asarray(points, dtype=float))
        r = np.hypot(p[:, 0], p[:, 1])
        th = np.arctan2(p[:, 1], p[:, 0])
        ang = np.cos(self.m * th) if self.branch == "cos" else np.sin(self.m * th)
        val = self.norm_const * special.jv(self.m, self.zero * r / self.R) * ang
        return np.where(r <= self.R * (1 + 1e-12), val, 0.0)


def disk_modes(R: float, lambda_max: float) -> List[DiskMode]:
    """All disk modes with eigenvalue <= lambda_max, ascending (cos before sin)."""
    x_max = np.sqrt(lambda_max) * R
    modes = []
    m = 0
    while True:
        zs = bessel_j_zeros(m, x_max=x_max)
        if len(zs) == 0:
            break
        for k, z in enumerate(zs, start=1):
            modes.append(DiskMode(m, k, "cos", float(z), R))
            if m > 0:
                modes.append(DiskMode(m, k, "sin", float(z), R))
        m += 1
    order = {"cos": 0, "sin": 1}
    modes.sort(key=lambda d: (d.zero, d.m, order[d.branch]))
    return modes


def eigen_disk_analytic(R: float = DISK_RADIUS, lambda_max: float = 1000.0,
                        mesh: Optional[TriangularMesh] = None) -> EigenBasis:
    """Closed-form disk eigenpairs with eigenvalue <= lambda_max.

    Eigenfunctions are evaluated at the nodes of ``mesh`` when given; they
    are orthonormal in L2 of the disk, and orthonormal up to discretisation
    error under the mesh mass matrix.
    """
    if R <= 0:
        raise ValueError("radius must be positive")
    first = (bessel_j_zeros(0, count=1)[0] / R) ** 2
    if lambda_max < first:
        raise ValueError(f"lambda_max={lambda_max:g} is below the fundamental eigenvalue {first:.6g}")
    modes = disk_modes(R, lambda_max)
    lambdas = np.array([d.eigenvalue for d in modes])
    if mesh is not None:
        vectors = np.column_stack([d(mesh.node_coords) for d in modes])
        vectors[mesh.boundary_nodes] = 0.0
    else:
        vectors = np.empty((0, len(modes)))
    return EigenBasis(lambdas, vectors, mesh, float(lambda_max), "analytic", modes)


def eigen_fem(mesh: TriangularMesh, lambda_max: float, max_rounds: int = 6) -> EigenBasis:
    """P1 eigenpairs of K e = lambda M e on interior nodes with lambda <= lambda_max.

    Shift-invert Lanczos about zero; the number of requested pairs starts
    from a Weyl-law estimate and grows until the spectrum passes lambda_max.
    """
    if lambda_max <= 0:
        raise ValueError("lambda_max must be positive")
    interior = mesh.interior_nodes
    n = len(interior)
    K = assemble_stiffness(mesh, np.ones(mesh.M)).tocsc()
    Mm = assemble_mass(mesh, restrict=True).tocsc()
    k = int(np.ceil(1.3 * mesh.total_area * lambda_max / (4 * np.pi))) + 10
    vals = vecs = None
    for _ in range(max_rounds):
        k = min(k, n - 1)
        vals, vecs = eigsh(K, k=k, M=Mm, sigma=0.0, which="LM")
        order = np.argsort(vals)
        vals, vecs = vals[order], vecs[:, order]
        if vals[-1] > lambda_max or k == n - 1:
            break
        k *= 2
    else:
        count = int(np.sum(vals <= lambda_max))
        raise EigenError(f"spectrum not resolved past lambda_max after {max_rounds} rounds; "
                         f"{count} pairs converged")
    keep = vals <= lambda_max
    vals, vecs = vals[keep], vecs[:, keep]
    # sign convention: largest-magnitude entry positive
    idx = np.argmax(np.abs(vecs), axis=0)
    vecs = vecs * np.sign(vecs[idx, np.arange(vecs.shape[1])])
    full = np.zeros((mesh.M, len(vals)))
    full[interior] = vecs
    return EigenBasis(vals, full, mesh, float(lambda_max), "fem")


def weyl_fit(basis) -> Tuple[float, float, float]:
    """Least-squares line lambda_j ~ slope * j + intercept with j = 1..J.

    Accepts an :class:`EigenBasis` or a plain array of eigenvalues.
    Returns (slope, intercept, r_squared).
    """
    lam = np.asarray(basis.lambdas if isinstance(basis, EigenBasis) else basis, dtype=float)
    if len(lam) < 10:
        raise ValueError(f"need at least 10 eigenvalues for a Weyl fit, got {len(lam)}")
    j = np.arange(1, len(lam) + 1)
    fit = linregress(j, lam)
    return float(fit.slope), float(fit.intercept), float(fit.rvalue ** 2)
