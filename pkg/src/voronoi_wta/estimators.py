"""Conditional density estimators built on a set of hypotheses and scores.

A :class:`HypothesisSet` may carry a leading batch axis, one set per
conditioning input.  Estimators that need per-cell normalisers (Voronoi-WTA
kernel masses, Uniform-WTA Lebesgue volumes) take them from a precomputed
cache; density evaluation itself never draws random numbers.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .geometry import Domain, assign, directional_radii, random_directions
from .kernels import KernelSpec

DENSITY_FLOOR = 1e-300
LOG_DENSITY_FLOOR = math.log(DENSITY_FLOOR)
MAX_ATTEMPTS = 100_000
DEFAULT_VERSORS = 40
DEFAULT_VOLUME_MC = 100_000


class NoDensityError(ValueError):
    """The estimator is a point-mass mixture and has no density."""


class RejectionSamplingError(RuntimeError):
    pass


class Variant(str, enum.Enum):
    DIRAC_WTA = "dirac_wta"
    UNIFORM_WTA = "uniform_wta"
    KERNEL_WTA = "kernel_wta"
    VORONOI_WTA = "voronoi_wta"
    HISTOGRAM = "histogram"
    MDN = "mdn"


KERNEL_VARIANTS = {Variant.KERNEL_WTA, Variant.VORONOI_WTA}
KERNEL_OPTIONAL = {Variant.HISTOGRAM}


@dataclass(frozen=True)
class HypothesisSet:
    """Hypotheses ``points`` (..., K, d) with raw ``scores`` (..., K).

    ``scales`` holds the per-component standard deviations of an MDN and
    is ``None`` for every other estimator.
    """

    points: np.ndarray
    scores: np.ndarray
    scales: np.ndarray | None = None

    def __post_init__(self):
        points = np.asarray(self.points, dtype=float)
        scores = np.asarray(self.scores, dtype=float)
        if points.ndim < 2 or points.shape[:-1] != scores.shape:
            raise ValueError(f"points {points.shape} and scores {scores.shape} disagree")
        if np.any(scores < 0):
            raise ValueError("scores must be nonnegative")
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "scores", scores)
        if self.scales is not None:
            scales = np.asarray(self.scales, dtype=float)
            if scales.shape != scores.shape or np.any(scales <= 0):
                raise ValueError("scales must be positive with one entry per hypothesis")
            object.__setattr__(self, "scales", scales)

    @property
    def K(self) -> int:
        return self.points.shape[-2]

    @property
    def d(self) -> int:
        return self.points.shape[-1]

    @property
    def batch_shape(self) -> tuple:
        return self.points.shape[:-2]

    def normalized_scores(self) -> np.ndarray:
        total = self.scores.sum(axis=-1, keepdims=True)
        if np.any(total <= 0):
            raise ValueError("scores sum to zero")
        return self.scores / total

    def batched(self) -> "HypothesisSet":
        """View with exactly one leading batch axis."""
        K, d = self.points.shape[-2:]
        scales = None if self.scales is None else self.scales.reshape(-1, K)
        return HypothesisSet(self.points.reshape(-1, K, d), self.scores.reshape(-1, K), scales)

    def __getitem__(self, idx) -> "HypothesisSet":
        scales = None if self.scales is None else self.scales[idx]
        return HypothesisSet(self.points[idx], self.scores[idx], scales)


@dataclass(frozen=True)
class EstimatorKind:
    variant: Variant
    kernel: KernelSpec | None = None
    n_versors: int = DEFAULT_VERSORS

    def __post_init__(self):
        variant = Variant(self.variant)
        object.__setattr__(self, "variant", variant)
        if variant in KERNEL_VARIANTS and self.kernel is None:
            raise ValueError(f"{variant.value} requires a kernel")
        if variant not in KERNEL_VARIANTS | KERNEL_OPTIONAL and self.kernel is not None:
            raise ValueError(f"{variant.value} does not take a kernel")
        if self.n_versors < 1:
            raise ValueError("n_versors must be >= 1")

    @property
    def has_density(self) -> bool:
        return self.variant is not Variant.DIRAC_WTA


# --------------------------------------------------------------------------
# cell normalisers


def cell_volume(hs: HypothesisSet, k, kernel: KernelSpec, domain: Domain, n_versors: int,
                rng: np.random.Generator) -> np.ndarray:
    """Kernel mass of cell ``k`` (clipped to the domain), by averaging the
    closed-form radial mass over ``n_versors`` random directions.

    ``k`` is an int or one index per set in the batch.
    """
    if n_versors < 1:
        raise ValueError("n_versors must be >= 1")
    b = hs.batched()
    B = b.points.shape[0]
    k = np.broadcast_to(np.asarray(k), (B,))
    dirs = random_directions(B * n_versors, b.d, rng).reshape(B, n_versors, b.d)
    radii = directional_radii(b.points, k, dirs, domain.lower, domain.upper)
    vol = kernel.radial_mass(radii).mean(axis=-1)
    return vol.reshape(hs.batch_shape) if hs.batch_shape else float(vol[0])


def kernel_cell_volumes(hs: HypothesisSet, kernel: KernelSpec, domain: Domain, n_versors: int,
                        rng: np.random.Generator, chunk: int = 256) -> np.ndarray:
    """Kernel masses of every cell, shape ``batch_shape + (K,)``.

    The same versors are shared by all cells of one set.
    """
    b = hs.batched()
    B, K, d = b.points.shape
    out = np.empty((B, K))
    for start in range(0, B, chunk):
        stop = min(B, start + chunk)
        n = stop - start
        dirs = random_directions(n * n_versors, d, rng).reshape(n, n_versors, d)
        for k in range(K):
            radii = directional_radii(b.points[start:stop], np.full(n, k), dirs,
                                      domain.lower, domain.upper)
            out[start:stop, k] = kernel.radial_mass(radii).mean(axis=-1)
    return out.reshape(hs.batch_shape + (K,))


def lebesgue_cell_fractions(hs: HypothesisSet, domain: Domain, n_mc: int,
                            rng: np.random.Generator) -> np.ndarray:
    """Fraction of the domain's volume in each cell, by uniform membership counts.

    Cells with no hit get one pseudo-count so their density stays finite.
    """
    if n_mc < 1:
        raise ValueError("n_mc must be >= 1")
    b = hs.batched()
    B, K, _ = b.points.shape
    u = domain.uniform(n_mc, rng)
    counts = np.empty((B, K))
    for i in range(B):
        counts[i] = np.bincount(assign(u, b.points[i]), minlength=K)
    counts = np.maximum(counts, 1.0)
    return (counts / n_mc).reshape(hs.batch_shape + (K,))


def precompute_volumes(kind: EstimatorKind, hs: HypothesisSet, domain: Domain,
                       rng: np.random.Generator, n_mc: int = DEFAULT_VOLUME_MC):
    """Volume cache needed by ``density`` for this estimator, or ``None``."""
    if kind.variant is Variant.VORONOI_WTA:
        return kernel_cell_volumes(hs, kind.kernel, domain, kind.n_versors, rng)
    if kind.variant is Variant.UNIFORM_WTA:
        return lebesgue_cell_fractions(hs, domain, n_mc, rng) * domain.volume()
    if kind.variant is Variant.HISTOGRAM and kind.kernel is not None:
        return kernel_cell_volumes(hs, kind.kernel, domain, kind.n_versors, rng)
    return None


def grid_shape(points: np.ndarray) -> tuple:
    """Number of distinct coordinates along each axis of a regular grid."""
    pts = points.reshape(-1, points.shape[-1])[: points.shape[-2]]
    shape = tuple(len(np.unique(np.round(pts[:, a], 12))) for a in range(pts.shape[1]))
    if math.prod(shape) != points.shape[-2]:
        raise ValueError("histogram hypotheses do not form a regular grid")
    return shape


# --------------------------------------------------------------------------
# density


def _gather(arr: np.ndarray, idx: np.ndarray) -> np.ndarray:
    return np.take_along_axis(arr, idx, axis=-1)


def log_density(kind: EstimatorKind, hs: HypothesisSet, domain: Domain, y,
                volume_cache=None) -> np.ndarray:
    """Log density at ``y``.

    Shapes: unbatched ``hs`` accepts ``y`` of shape ``(d,)`` or ``(n, d)``;
    batched ``hs`` with batch shape ``(B,)`` accepts ``(B, d)`` (one target
    per set) or ``(B, n, d)``.
    """
    if not kind.has_density:
        raise NoDensityError("Dirac-WTA is a point-mass mixture and has no density")
    y = np.asarray(y, dtype=float)
    batched = bool(hs.batch_shape)
    if batched and len(hs.batch_shape) != 1:
        raise ValueError("only a single batch axis is supported")
    # bring everything to (B, K, d) and (B, n, d)
    b = hs.batched()
    if not batched:
        yy = y.reshape(1, -1, hs.d)
    elif y.ndim == 2:
        yy = y[:, None, :]
    else:
        yy = y
    if yy.shape[-1] != hs.d:
        raise ValueError("target dimension mismatch")
    out = _log_density_batched(kind, b, domain, yy, volume_cache)
    if not batched:
        return out[0, 0] if y.ndim == 1 else out[0]
    return out[:, 0] if y.ndim == 2 else out


def _log_density_batched(kind, b: HypothesisSet, domain, y, volume_cache):
    variant = kind.variant
    B, K, d = b.points.shape
    with np.errstate(divide="ignore"):
        log_w = np.log(b.normalized_scores())  # (B, K)

    if variant is Variant.MDN:
        sigma = b.scales[:, None, :]  # (B, 1, K)
        diff = y[:, :, None, :] - b.points[:, None, :, :]
        sq = np.einsum("bnkd,bnkd->bnk", diff, diff)
        comp = -0.5 * sq / sigma**2 - d * np.log(sigma) - 0.5 * d * math.log(2 * math.pi)
        return logsumexp(comp + log_w[:, None, :], axis=-1)

    if variant is Variant.KERNEL_WTA:
        comp = kind.kernel.log_density(b.points[:, None, :, :], y[:, :, None, :])  # (B, n, K)
        return logsumexp(comp + log_w[:, None, :], axis=-1)

    winner = assign(y, b.points)  # (B, n)
    log_w_star = _gather(log_w, winner)
    inside = domain.contains(y)

    if variant is Variant.HISTOGRAM and kind.kernel is None:
        log_vol = math.log(domain.volume() / K)
        out = log_w_star - log_vol
    else:
        if volume_cache is None:
            raise ValueError(f"{variant.value} density needs precomputed cell volumes")
        vols = np.asarray(volume_cache, dtype=float).reshape(B, K)
        log_v_star = np.log(_gather(vols, winner))
        if variant is Variant.UNIFORM_WTA:
            out = log_w_star - log_v_star
        else:  # Voronoi-WTA, or truncated-kernel histogram
            z_star = np.take_along_axis(b.points, winner[..., None], axis=1)  # (B, n, d)
            out = log_w_star + kind.kernel.log_density(z_star, y) - log_v_star
    return np.where(inside, out, -np.inf)


def density(kind: EstimatorKind, hs: HypothesisSet, domain: Domain, y, volume_cache=None):
    return np.exp(log_density(kind, hs, domain, y, volume_cache))


# --------------------------------------------------------------------------
# sampling


def sample(kind: EstimatorKind, hs: HypothesisSet, domain: Domain, n: int,
           rng: np.random.Generator, max_attempts: int = MAX_ATTEMPTS) -> np.ndarray:
    """Draw ``n`` points from the estimator defined by an unbatched ``hs``."""
    if hs.batch_shape:
        raise ValueError("sample expects a single hypothesis set")
    if n < 0:
        raise ValueError("n must be nonnegative")
    d = hs.d
    if n == 0:
        return np.empty((0, d))
    weights = hs.normalized_scores()
    cells = rng.choice(hs.K, size=n, p=weights)
    centers = hs.points[cells]
    variant = kind.variant

    if variant is Variant.DIRAC_WTA:
        return centers.copy()
    if variant is Variant.KERNEL_WTA:
        return kind.kernel.sample(centers, rng)
    if variant is Variant.MDN:
        return centers + hs.scales[cells][:, None] * rng.standard_normal((n, d))
    if variant is Variant.HISTOGRAM and kind.kernel is None:
        half = (domain.upper - domain.lower) / (2.0 * np.asarray(grid_shape(hs.points)))
        return centers + half * (2.0 * rng.random((n, d)) - 1.0)

    if variant is Variant.UNIFORM_WTA:
        def propose(idx):
            return domain.uniform(len(idx), rng)
    else:
        def propose(idx):
            return kind.kernel.sample(centers[idx], rng)

    out = np.empty((n, d))
    pending = np.arange(n)
    attempts = np.zeros(n, dtype=np.int64)
    while pending.size:
        cand = propose(pending)
        ok = domain.contains(cand) & (assign(cand, hs.points) == cells[pending])
        out[pending[ok]] = cand[ok]
        attempts[pending] += 1
        pending = pending[~ok]
        if pending.size and attempts[pending].max() >= max_attempts:
            k = int(cells[pending[np.argmax(attempts[pending])]])
            in_k = cells == k
            accepted = np.sum(in_k) - np.sum(cells[pending] == k)
            rate = accepted / max(1, int(attempts[in_k].sum()))
            raise RejectionSamplingError(
                f"rejection sampling exceeded {max_attempts} attempts in cell {k} "
                f"(estimated acceptance {rate:.2e})"
            )
    return out


# --------------------------------------------------------------------------


class ConditionalDensityEstimator:
    """An estimator bound to its hypotheses, domain and cached cell volumes."""

    def __init__(self, kind: EstimatorKind, hs: HypothesisSet, domain: Domain,
                 rng: np.random.Generator | None = None, n_mc: int = DEFAULT_VOLUME_MC,
                 volume_cache=None):
        self.kind = kind
        self.hs = hs
        self.domain = domain
        if volume_cache is None and kind.has_density:
            needs = kind.variant in (Variant.VORONOI_WTA, Variant.UNIFORM_WTA) or (
                kind.variant is Variant.HISTOGRAM and kind.kernel is not None)
            if needs:
                if rng is None:
                    raise ValueError("a random stream is required to estimate cell volumes")
                volume_cache = precompute_volumes(kind, hs, domain, rng, n_mc=n_mc)
        self.volumes = volume_cache

    def log_density(self, y):
        return log_density(self.kind, self.hs, self.domain, y, self.volumes)

    def density(self, y):
        return np.exp(self.log_density(y))

    def sample(self, n: int, rng: np.random.Generator, index: int | None = None):
        hs = self.hs if index is None else self.hs[index]
        return sample(self.kind, hs, self.domain, n, rng)
