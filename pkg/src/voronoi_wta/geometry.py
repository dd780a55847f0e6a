"""Voronoi tessellations restricted to an axis-aligned box.

Cells are defined with the squared Euclidean metric.  Everything here is
vectorised over a leading batch axis so that thousands of per-input
tessellations can be processed at once by the estimators.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

UNIT_TOL = 1e-9
DUPLICATE_TOL = 1e-9
DUPLICATE_SHIFT = 1e-8
ZERO_RADIUS = 1e-12


@dataclass(frozen=True)
class Domain:
    """Axis-aligned box ``[lower, upper]``."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = np.asarray(self.lower, dtype=float).reshape(-1)
        upper = np.asarray(self.upper, dtype=float).reshape(-1)
        if lower.shape != upper.shape:
            raise ValueError("lower and upper must have the same dimension")
        if not np.all(lower < upper):
            raise ValueError(f"degenerate domain: lower={lower}, upper={upper}")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @classmethod
    def cube(cls, d: int = 2, half_width: float = 1.0) -> "Domain":
        return cls(np.full(d, -half_width), np.full(d, half_width))

    @property
    def d(self) -> int:
        return self.lower.shape[0]

    def volume(self) -> float:
        return float(np.prod(self.upper - self.lower))

    def contains(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        return np.all((y >= self.lower) & (y <= self.upper), axis=-1)

    def uniform(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return self.lower + (self.upper - self.lower) * rng.random((n, self.d))


def assign(y, generators) -> np.ndarray:
    """Index of the nearest generator, lowest index on ties.

    ``y`` has shape ``(..., n, d)`` or ``(n, d)``; ``generators`` has shape
    ``(..., K, d)`` with matching leading axes (or none, to broadcast).
    """
    y = np.asarray(y, dtype=float)
    g = np.asarray(generators, dtype=float)
    # ||y||^2 is constant over k, so only -2 y.g + ||g||^2 matters.
    scores = np.sum(g * g, axis=-1)[..., None, :] - 2.0 * (y @ np.swapaxes(g, -1, -2))
    return np.argmin(scores, axis=-1)


def squared_distances(y, generators) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    g = np.asarray(generators, dtype=float)
    diff = y[..., :, None, :] - g[..., None, :, :]
    return np.einsum("...i,...i->...", diff, diff)


def random_directions(n: int, d: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` directions drawn uniformly on the unit sphere of R^d."""
    s = rng.standard_normal((n, d))
    norms = np.linalg.norm(s, axis=-1, keepdims=True)
    # a zero draw has probability zero, but guard anyway
    while np.any(norms == 0.0):
        bad = norms[:, 0] == 0.0
        s[bad] = rng.standard_normal((int(bad.sum()), d))
        norms = np.linalg.norm(s, axis=-1, keepdims=True)
    return s / norms


def directional_radii(generators, k, directions, lower, upper) -> np.ndarray:
    """Distance from ``generators[k]`` to the boundary of its cell, per direction.

    Batched form: ``generators`` is ``(B, K, d)``, ``k`` is ``(B,)`` and
    ``directions`` is ``(B, M, d)`` or ``(M, d)``.  Returns ``(B, M)``.
    The cell is intersected with the box, so every radius is finite.
    """
    g = np.asarray(generators, dtype=float)
    k = np.asarray(k)
    s = np.asarray(directions, dtype=float)
    B, K, d = g.shape
    if s.ndim == 2:
        s = np.broadcast_to(s, (B,) + s.shape)
    z = g[np.arange(B), k]  # (B, d)

    # bisector with generator j: u = ||z_j - z_k||^2 / (2 s.(z_j - z_k)) when s.n > 0
    normals = g - z[:, None, :]  # (B, K, d)
    sq = np.sum(normals * normals, axis=-1)  # (B, K)
    proj = np.einsum("bmd,bkd->bmk", s, normals)  # (B, M, K)
    with np.errstate(divide="ignore", invalid="ignore"):
        u_bis = np.where(proj > 0.0, sq[:, None, :] / (2.0 * proj), np.inf)
    u_bis[np.arange(B), :, k] = np.inf
    radius = np.min(u_bis, axis=-1)

    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        up = np.where(s > 0.0, (upper - z[:, None, :]) / s, np.inf)
        down = np.where(s < 0.0, (lower - z[:, None, :]) / s, np.inf)
    radius = np.minimum(radius, np.min(np.minimum(up, down), axis=-1))
    radius = np.maximum(radius, 0.0)
    radius[radius < ZERO_RADIUS] = 0.0
    return radius


@dataclass(frozen=True)
class VoronoiTessellation:
    """Voronoi cells of ``generators`` intersected with ``domain``.

    Generators closer than ``1e-9`` to an earlier one are shifted by
    ``1e-8`` along the first axis and ``perturbed`` is set.
    """

    generators: np.ndarray
    domain: Domain
    perturbed: bool = field(default=False, compare=False)

    def __post_init__(self):
        g = np.array(self.generators, dtype=float, ndmin=2)
        if g.shape[0] < 1:
            raise ValueError("need at least one generator")
        if g.shape[1] != self.domain.d:
            raise ValueError(f"generators have dimension {g.shape[1]}, domain has {self.domain.d}")
        if not np.all(np.isfinite(g)):
            raise ValueError("generators must be finite")
        if not np.all(self.domain.contains(g)):
            raise ValueError("all generators must lie inside the domain")
        perturbed = False
        for i in range(1, g.shape[0]):
            while np.min(np.linalg.norm(g[:i] - g[i], axis=-1)) < DUPLICATE_TOL:
                g[i, 0] += DUPLICATE_SHIFT
                perturbed = True
        g.setflags(write=False)
        object.__setattr__(self, "generators", g)
        object.__setattr__(self, "perturbed", perturbed)

    @property
    def K(self) -> int:
        return self.generators.shape[0]

    @property
    def d(self) -> int:
        return self.generators.shape[1]

    def winner_index(self, y):
        """Nearest generator of ``y`` (a point or an ``(n, d)`` array)."""
        y = np.asarray(y, dtype=float)
        if y.ndim == 1:
            return int(assign(y[None, :], self.generators)[0])
        return assign(y, self.generators)

    def directional_radius(self, k: int, s):
        """Largest ``u >= 0`` keeping ``z_k + u s`` in cell ``k`` and in the box.

        ``s`` may be one unit vector or an ``(m, d)`` array of them.
        """
        if not 0 <= k < self.K:
            raise IndexError(f"cell index {k} out of range for K={self.K}")
        s = np.asarray(s, dtype=float)
        single = s.ndim == 1
        s2 = np.atleast_2d(s)
        if s2.shape[-1] != self.d:
            raise ValueError("direction dimension mismatch")
        if np.any(np.abs(np.linalg.norm(s2, axis=-1) - 1.0) > UNIT_TOL):
            raise ValueError("directions must have unit norm")
        r = directional_radii(
            self.generators[None], np.array([k]), s2[None], self.domain.lower, self.domain.upper
        )[0]
        return float(r[0]) if single else r

    def cell_diameter_bound(
        self, k: int, n_dirs: int, rng: np.random.Generator | None = None, directions=None
    ) -> float:
        """Twice the largest directional radius over ``n_dirs`` random directions.

        Explicit ``directions`` may be passed instead of a random stream.
        """
        if n_dirs < 1:
            raise ValueError("n_dirs must be >= 1")
        if directions is None:
            dirs = random_directions(n_dirs, self.d, rng)
        else:
            dirs = np.atleast_2d(np.asarray(directions, dtype=float))[:n_dirs]
        return 2.0 * float(np.max(self.directional_radius(k, dirs)))


def grid_dims(K: int) -> tuple[int, int]:
    """Rows and columns of the most nearly square grid with ``K`` bins."""
    if K < 1:
        raise ValueError("K must be >= 1")
    cols = int(math.isqrt(K))
    while K % cols:
        cols -= 1
    return K // cols, cols


def regular_grid(shape, domain: Domain) -> np.ndarray:
    """Bin centres of a regular grid over ``domain``, row-major, shape ``(prod(shape), d)``."""
    shape = tuple(int(n) for n in shape)
    if len(shape) != domain.d:
        raise ValueError("grid shape must have one entry per dimension")
    axes = [
        domain.lower[a] + (np.arange(n) + 0.5) * (domain.upper[a] - domain.lower[a]) / n
        for a, n in enumerate(shape)
    ]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.reshape(-1) for m in mesh], axis=-1)
