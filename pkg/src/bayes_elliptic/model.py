"""Observation model Y_i = G(f)(X_i) + sigma * W_i and its log-likelihood."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .fem import ForwardOperator, Source
from .mesh import DISK_RADIUS, NodalField, TriangularMesh, interpolation_matrix

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class FourBumps:
    """Background level plus four Gaussian bumps centred at (+-c, +-c).

    f(x, y) = offset + amplitude * sum exp(-(s x -+ s c)^2 - (s y -+ s c)^2)

    With the defaults the values range over [1, 2]. On the boundary of the
    unit-area disk they lie within 1e-4 of 1 on the axes and reach about
    1.011 on the diagonals.
    """

    offset: float = 1.0
    amplitude: float = 1.0
    centre: float = 0.25
    scale: float = 10.0

    def __call__(self, points) -> np.ndarray:
        p = np.atleast_2d(np.asarray(points, dtype=float))
        sx, sy = self.scale * p[:, 0], self.scale * p[:, 1]
        sc = self.scale * self.centre
        total = np.zeros(len(p))
        for cx in (sc, -sc):
            for cy in (sc, -sc):
                total += np.exp(-(sx - cx) ** 2 - (sy - cy) ** 2)
        return self.offset + self.amplitude * total


def ground_truth_field(mesh: TriangularMesh, truth=None) -> NodalField:
    """Nodal values of the ground-truth diffusivity (four bumps by default)."""
    truth = FourBumps() if truth is None else truth
    return NodalField(truth(mesh.node_coords), mesh)


@dataclass(eq=False)
class ObservationSet:
    X: np.ndarray
    Y: np.ndarray
    sigma: float

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        self.Y = np.asarray(self.Y, dtype=float).ravel()
        if self.X.shape != (len(self.Y), 2):
            raise ValueError(f"X has shape {self.X.shape} but there are {len(self.Y)} responses")
        if not self.sigma >= 0:
            raise ValueError("noise level sigma must be non-negative")

    @property
    def n(self) -> int:
        return len(self.Y)

    def subset(self, n: int) -> "ObservationSet":
        """The first ``n`` observations (nested subsampling)."""
        if not 1 <= n <= self.n:
            raise ValueError(f"cannot take {n} of {self.n} observations")
        return ObservationSet(self.X[:n], self.Y[:n], self.sigma)

    def to_csv(self, path: Union[str, Path]) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "y", "value"])
            for (x, y), v in zip(self.X.tolist(), self.Y.tolist()):
                w.writerow([repr(x), repr(y), repr(v)])

    @classmethod
    def from_csv(cls, path: Union[str, Path], sigma: float) -> "ObservationSet":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows or [c.strip() for c in rows[0]] != ["x", "y", "value"]:
            raise ValueError(f"{path}: expected header 'x,y,value'")
        data = np.array([[float(c) for c in r] for r in rows[1:] if r], dtype=float).reshape(-1, 3)
        return cls(data[:, :2], data[:, 2], sigma)


def uniform_design(mesh: TriangularMesh, n: int, rng: np.random.Generator,
                   radius: float = DISK_RADIUS) -> np.ndarray:
    """n points uniform on the disk (r = R sqrt(U)), redrawn if they miss the mesh.

    The mesh is an inscribed polygon, so a few points in the slivers between
    the circle and the boundary edges are rejected.
    """
    out = np.empty((0, 2))
    while len(out) < n:
        k = n - len(out)
        r = radius * np.sqrt(rng.random(k))
        th = 2 * np.pi * rng.random(k)
        pts = np.column_stack([r * np.cos(th), r * np.sin(th)])
        out = np.concatenate([out, pts[mesh.contains(pts)]])
    return out


def generate_data(mesh: TriangularMesh, f0: NodalField, s: Source, n: int, sigma: float,
                  seed: Optional[int] = None) -> ObservationSet:
    """Simulate n noisy point evaluations of G(f0) at uniform random design points."""
    if n < 1:
        raise ValueError("n must be at least 1")
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    rng = np.random.default_rng(seed)
    X = uniform_design(mesh, n, rng)
    u = ForwardOperator(mesh, s).solve(f0.values)
    clean = interpolation_matrix(mesh, X) @ u
    Y = clean + sigma * rng.standard_normal(n)
    return ObservationSet(X, Y, sigma)


class LogLikelihood:
    """l_n(f) = -1/(2 sigma^2) sum (Y_i - G(f)(X_i))^2 for nodal diffusivities f.

    Holds the forward operator and the design interpolation matrix, so each
    call costs one sparse factorisation and one sparse matvec.
    """

    def __init__(self, mesh: TriangularMesh, obs: ObservationSet, source: Source = 1.0):
        self.mesh = mesh
        self.obs = obs
        if not obs.sigma > 0:
            raise ValueError("the likelihood needs sigma > 0 (noiseless data has none)")
        self.forward = ForwardOperator(mesh, source)
        self.P = interpolation_matrix(mesh, obs.X)
        self._scale = 0.5 / obs.sigma ** 2

    def predict(self, f) -> np.ndarray:
        """G(f) at the design points."""
        fv = f.values if isinstance(f, NodalField) else f
        return self.P @ self.forward.solve(fv)

    def __call__(self, f) -> float:
        r = self.obs.Y - self.predict(f)
        return -self._scale * float(r @ r)


def log_likelihood(obs: ObservationSet, f: NodalField, source: Source = 1.0) -> float:
    """One-off log-likelihood of a nodal diffusivity (builds the operators each call)."""
    return LogLikelihood(f.mesh, obs, source)(f)
