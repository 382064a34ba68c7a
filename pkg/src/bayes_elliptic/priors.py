"""Gaussian priors for the latent field F, link functions, and n-dependent scaling.

Two prior families are supported:

* ``matern``: F at the mesh nodes is N(0, C) with C the Matérn covariance
  between nodes; sampled through a Cholesky factor of C + jitter * I.
* ``series``: F = sum_j F_j e_j over a Dirichlet-Laplacian eigenbasis with
  independent centred normal F_j, of variance lambda_j^(-alpha) by default.

A sampler works in its *native* coordinates (nodal values or series
coefficients); :meth:`PriorSampler.to_nodal` maps states to nodal values.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy import linalg, special
from scipy.spatial.distance import pdist, squareform

from .eigen import EigenBasis
from .mesh import DISK_RADIUS, NodalField, TriangularMesh

logger = logging.getLogger(__name__)

MAX_JITTER = 1e-6
LINK_CLAMP = 700.0


class PriorError(RuntimeError):
    pass


@dataclass(frozen=True)
class MaternConfig:
    alpha: float
    ell: float
    jitter: float = 1e-10

    def __post_init__(self):
        if not self.alpha > 0 or not self.ell > 0 or not self.jitter >= 0:
            raise ValueError("Matérn config needs alpha > 0, ell > 0, jitter >= 0")


def matern_kernel(r, alpha: float, ell: float) -> np.ndarray:
    """Matérn correlation as a function of distance ``r`` (vectorised).

    Evaluated in log space through the exponentially scaled K_alpha so that
    large smoothness (alpha = 10) neither overflows nor underflows; the
    removable singularity at r = 0 gives 1.
    """
    r = np.asarray(r, dtype=float)
    z = np.abs(r) * np.sqrt(2.0 * alpha) / ell
    out = np.ones_like(z)
    pos = z > 0
    zp = z[pos]
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        logc = ((1.0 - alpha) * np.log(2.0) - special.gammaln(alpha)
                + alpha * np.log(zp) + np.log(special.kve(alpha, zp)) - zp)
        vals = np.exp(logc)
    # kve overflows for extremely small z, where the kernel is 1 to machine precision
    vals[~np.isfinite(vals)] = 1.0
    out[pos] = np.minimum(vals, 1.0)
    return out


def matern_cov(x, y, cfg: MaternConfig) -> float:
    """Matérn covariance between two points."""
    r = np.linalg.norm(np.asarray(x, dtype=float) - np.asarray(y, dtype=float))
    return float(matern_kernel(r, cfg.alpha, cfg.ell))


def matern_cov_matrix(points, cfg: MaternConfig) -> np.ndarray:
    """Exactly symmetric covariance matrix between ``points``."""
    pts = np.asarray(points, dtype=float)
    C = squareform(matern_kernel(pdist(pts), cfg.alpha, cfg.ell))
    np.fill_diagonal(C, 1.0)
    return C


def prior_scaling(n: int, alpha: float, d: int = 2) -> float:
    """Shrinkage factor n^(-d / (4 alpha + 4 + 2 d)) of the rescaled prior."""
    return float(n) ** (-d / (4.0 * alpha + 4.0 + 2.0 * d))


def radial_cutoff(mesh: TriangularMesh, inner: float, outer: float = DISK_RADIUS) -> np.ndarray:
    """Smooth radial taper: 1 for r <= inner, 0 for r >= outer, C-infinity between."""
    r = np.hypot(*mesh.node_coords.T)
    t = np.clip((r - inner) / (outer - inner), 0.0, 1.0)

    def g(s):
        with np.errstate(divide="ignore", over="ignore"):
            return np.where(s > 0, np.exp(-1.0 / np.where(s > 0, s, 1.0)), 0.0)

    return g(1 - t) / (g(1 - t) + g(t))


class PriorSampler:
    """Centred Gaussian prior in native coordinates.

    Parameters
    ----------
    kind : {"matern", "series"}
    factor : ndarray
        Lower Cholesky factor (matern) or coefficient standard deviations (series).
    mesh : TriangularMesh
    scaling : float
        Multiplier in (0, 1] applied to every draw.
    synthesis : ndarray, optional
        (M, J) nodal eigenfunctions for the series prior.
    seed : int, optional
        Seed of the sampler's own stream, used when no generator is passed.
    """

    def __init__(self, kind: str, factor: np.ndarray, mesh: TriangularMesh,
                 scaling: float = 1.0, synthesis: Optional[np.ndarray] = None,
                 seed: Optional[int] = None, jitter: float = 0.0, taper: Optional[np.ndarray] = None):
        if kind not in ("matern", "series"):
            raise ValueError(f"unknown prior kind {kind!r}")
        if not 0.0 < scaling <= 1.0:
            raise ValueError("scaling must lie in (0, 1]")
        if kind == "series" and synthesis is None:
            raise ValueError("series prior needs a synthesis basis")
        self.kind = kind
        self.factor = factor
        self.mesh = mesh
        self.scaling = float(scaling)
        self.synthesis = synthesis
        self.seed = seed
        self.jitter = jitter
        self.taper = taper
        self.rng = np.random.default_rng(seed)

    @property
    def dim(self) -> int:
        return len(self.factor)

    def draw(self, rng: Optional[np.random.Generator] = None) -> np.ndarray:
        """One prior draw in native coordinates."""
        z = (rng or self.rng).standard_normal(self.dim)
        if self.kind == "matern":
            x = self.factor @ z
            if self.taper is not None:
                x *= self.taper
        else:
            x = self.factor * z
        return self.scaling * x

    def to_nodal(self, state: np.ndarray) -> np.ndarray:
        """Nodal values of a native state (or of a stack of states, one per row)."""
        if self.kind == "matern":
            return np.asarray(state)
        return np.asarray(state) @ self.synthesis.T

    def sample(self, rng: Optional[np.random.Generator] = None) -> Tuple[np.ndarray, NodalField]:
        """Native draw and its nodal field."""
        x = self.draw(rng)
        return x, NodalField(self.to_nodal(x), self.mesh)

    def covariance(self) -> np.ndarray:
        """Covariance of the native coordinates (including scaling)."""
        if self.kind == "matern":
            L = self.factor if self.taper is None else self.taper[:, None] * self.factor
            return self.scaling ** 2 * (L @ L.T)
        return np.diag((self.scaling * self.factor) ** 2)

    def spawn(self, n: int) -> list:
        """Independent generators derived from the seed, e.g. one per thread."""
        return [np.random.default_rng(s) for s in np.random.SeedSequence(self.seed).spawn(n)]


def build_matern_sampler(mesh: TriangularMesh, cfg: MaternConfig, scaling: float = 1.0,
                         seed: Optional[int] = None, taper: Optional[np.ndarray] = None) -> PriorSampler:
    """Cholesky-based sampler of the Matérn prior at the mesh nodes.

    The diagonal jitter starts at ``cfg.jitter`` and is raised tenfold per
    failed factorisation, up to 1e-6.
    """
    if not scaling > 0:
        raise ValueError("scaling must be positive")
    C = matern_cov_matrix(mesh.node_coords, cfg)
    jitter = cfg.jitter
    while True:
        try:
            L = linalg.cholesky(C + jitter * np.eye(mesh.M), lower=True, check_finite=False)
            break
        except linalg.LinAlgError:
            if jitter >= MAX_JITTER:
                raise PriorError(f"Matérn covariance (alpha={cfg.alpha}, ell={cfg.ell}) not "
                                 f"factorisable with jitter up to {MAX_JITTER:g}")
            jitter = min(MAX_JITTER, max(10 * jitter, 1e-12))
    if jitter != cfg.jitter:
        logger.info("Matérn factorisation needed jitter %.1e", jitter)
    return PriorSampler("matern", L, mesh, scaling, seed=seed, jitter=jitter, taper=taper)


@dataclass(frozen=True)
class SeriesPriorConfig:
    """Truncated eigen-series prior.

    ``coefficient_law="variance"`` draws F_j with variance lambda_j^(-alpha);
    ``"std"`` uses lambda_j^(-alpha) as the standard deviation instead, a
    markedly tighter prior for the same alpha.
    """

    basis: EigenBasis
    alpha: float
    J: Optional[int] = None
    coefficient_law: str = "variance"

    def __post_init__(self):
        if self.coefficient_law not in ("variance", "std"):
            raise ValueError(f"unknown coefficient law {self.coefficient_law!r}")

    @property
    def n_terms(self) -> int:
        return self.basis.J if self.J is None else self.J


def build_series_sampler(cfg: SeriesPriorConfig, scaling: float = 1.0,
                         seed: Optional[int] = None) -> PriorSampler:
    """Sampler of sum_j F_j e_j with independent centred normal F_j."""
    if not scaling > 0:
        raise ValueError("scaling must be positive")
    J = cfg.n_terms
    if J < 1 or J > cfg.basis.J:
        raise ValueError(f"truncation level {J} outside 1..{cfg.basis.J}")
    if cfg.basis.mesh is None:
        raise ValueError("series prior needs eigenfunctions evaluated on a mesh")
    power = cfg.alpha / 2.0 if cfg.coefficient_law == "variance" else cfg.alpha
    std = cfg.basis.lambdas[:J] ** (-power)
    return PriorSampler("series", std, cfg.basis.mesh, scaling,
                        synthesis=cfg.basis.vectors[:, :J], seed=seed)


@dataclass
class LinkFunction:
    """Positive link f = Phi(F): ``exp`` or ``shifted_exp`` (f_min + exp)."""

    kind: str = "exp"
    f_min: float = 1.0
    n_clamped: int = 0

    def __post_init__(self):
        if self.kind not in ("exp", "shifted_exp"):
            raise ValueError(f"unknown link {self.kind!r}")
        if self.kind == "shifted_exp" and not self.f_min > 0:
            raise ValueError("shifted_exp link needs f_min > 0")

    @property
    def lower_bound(self) -> float:
        return self.f_min if self.kind == "shifted_exp" else 0.0

    def __call__(self, F) -> np.ndarray:
        F = np.asarray(F, dtype=float)
        if np.any(np.abs(F) > LINK_CLAMP):
            self.n_clamped += 1
            warnings.warn(f"link input clamped to +-{LINK_CLAMP:g} "
                          f"({self.n_clamped} clamp events so far)", RuntimeWarning, stacklevel=2)
            F = np.clip(F, -LINK_CLAMP, LINK_CLAMP)
        out = np.exp(F)
        return out + self.f_min if self.kind == "shifted_exp" else out

    def inverse(self, f) -> np.ndarray:
        f = np.asarray(f, dtype=float)
        return np.log(f - self.f_min) if self.kind == "shifted_exp" else np.log(f)


def apply_link(F: NodalField, link: LinkFunction) -> NodalField:
    return NodalField(link(F.values), F.mesh)
