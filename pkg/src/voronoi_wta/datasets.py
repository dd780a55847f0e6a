"""Synthetic conditional distributions on x in [0, 1], y in [-1, 1]^2."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from .geometry import Domain
from .streams import stream

DOMAIN = Domain.cube(2)


class DatasetKind(str, enum.Enum):
    SINGLE_GAUSSIAN = "single_gaussian"
    ROTATING_TWO_MOONS = "rotating_two_moons"
    CHANGING_DAMIER = "changing_damier"
    UNIFORM_TO_GAUSSIANS = "uniform_to_gaussians"


class DensityUnavailable(LookupError):
    pass


DEFAULT_PARAMS = {
    DatasetKind.SINGLE_GAUSSIAN: {"mean": (0.25, 0.25), "sigma": 0.25},
    DatasetKind.ROTATING_TWO_MOONS: {
        "noise": 0.1, "scale": 0.5, "reference_size": 10_000, "bandwidth": 0.2, "reference_seed": 0,
    },
    DatasetKind.CHANGING_DAMIER: {},
    DatasetKind.UNIFORM_TO_GAUSSIANS: {
        "sigma2": 0.2, "sigma3": 0.05, "center2": (-0.5, 0.5), "center3": (0.5, -0.5),
    },
}

# quadrant boxes (lower, upper) for the Uniform-to-Gaussians dataset
QUADRANTS = {
    1: ((-1.0, -1.0), (0.0, 0.0)),
    2: ((-1.0, 0.0), (0.0, 1.0)),
    3: ((0.0, -1.0), (1.0, 0.0)),
    4: ((0.0, 0.0), (1.0, 1.0)),
}


def _box_gaussian_mass(mean, sigma, lower, upper) -> float:
    mean = np.asarray(mean, dtype=float)
    lo = (np.asarray(lower) - mean) / sigma
    hi = (np.asarray(upper) - mean) / sigma
    return float(np.prod(ndtr(hi) - ndtr(lo)))


def _gaussian_pdf(y, mean, sigma):
    sq = np.sum((y - np.asarray(mean)) ** 2, axis=-1)
    return np.exp(-0.5 * sq / sigma**2) / (2 * math.pi * sigma**2)


def _in_box(y, lower, upper):
    """Half-open box ``[lower, upper)``, closed at the domain's upper edge."""
    lower = np.asarray(lower)
    upper = np.asarray(upper)
    return np.all((y >= lower) & ((y < upper) | (upper >= 1.0) & (y <= upper)), axis=-1)


def damier_black(y) -> np.ndarray:
    """True on the 8 squares of the 4x4 checkerboard whose indices sum to an even number."""
    idx = np.clip(np.floor((np.asarray(y) + 1.0) * 2.0), 0, 3).astype(int)
    return (idx[..., 0] + idx[..., 1]) % 2 == 0


@dataclass
class SyntheticDataset:
    kind: DatasetKind
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        self.kind = DatasetKind(self.kind)
        merged = dict(DEFAULT_PARAMS[self.kind])
        merged.update(self.params or {})
        self.params = merged
        self._moons_reference = None
        if self.kind is DatasetKind.SINGLE_GAUSSIAN:
            self._sg_mass = _box_gaussian_mass(merged["mean"], merged["sigma"], DOMAIN.lower, DOMAIN.upper)
        if self.kind is DatasetKind.UNIFORM_TO_GAUSSIANS:
            self._g2_mass = _box_gaussian_mass(merged["center2"], merged["sigma2"], *QUADRANTS[2])
            self._g3_mass = _box_gaussian_mass(merged["center3"], merged["sigma3"], *QUADRANTS[3])

    # ------------------------------------------------------------------
    # sampling

    def sample(self, n: int, rng: np.random.Generator):
        """``n`` pairs with ``x ~ U[0, 1]``; returns ``(x, y)`` of shapes ``(n,)``, ``(n, 2)``."""
        x = rng.random(n)
        return x, self.sample_y(x, rng)

    def sample_y(self, x, rng: np.random.Generator) -> np.ndarray:
        """One target per entry of ``x``."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        n = x.shape[0]
        kind = self.kind
        if kind is DatasetKind.SINGLE_GAUSSIAN:
            p = self.params
            return _redraw(lambda m: np.asarray(p["mean"]) + p["sigma"] * rng.standard_normal((m, 2)),
                           lambda y: DOMAIN.contains(y), n)
        if kind is DatasetKind.CHANGING_DAMIER:
            return self._sample_damier(x, rng)
        if kind is DatasetKind.UNIFORM_TO_GAUSSIANS:
            return self._sample_u2g(x, rng)
        return self._sample_moons(x, rng)

    def _sample_damier(self, x, rng):
        n = x.shape[0]
        want_black = rng.random(n) >= x  # probability 1 - x
        # pick one of the 8 squares of the requested colour
        square = rng.integers(0, 8, size=n)
        row = square // 2
        col = 2 * (square % 2) + ((row + (~want_black).astype(int)) % 2)
        corner = np.stack([row, col], axis=-1) * 0.5 - 1.0
        return corner + 0.5 * rng.random((n, 2))

    def _sample_u2g(self, x, rng):
        p = self.params
        n = x.shape[0]
        u = rng.random(n)
        half = (1.0 - x) / 2.0
        # cumulative order S1, S2, S3, S4 with probabilities (1-x)/2, x/2, x/2, (1-x)/2
        quadrant = np.where(u < half, 1, np.where(u < 0.5, 2, np.where(u < 0.5 + x / 2.0, 3, 4)))
        y = np.empty((n, 2))
        for q in (1, 4):
            sel = quadrant == q
            lo, hi = (np.asarray(b) for b in QUADRANTS[q])
            y[sel] = lo + (hi - lo) * rng.random((int(sel.sum()), 2))
        for q, c, s in ((2, p["center2"], p["sigma2"]), (3, p["center3"], p["sigma3"])):
            sel = quadrant == q
            lo, hi = QUADRANTS[q]
            y[sel] = _redraw(lambda m, c=c, s=s: np.asarray(c) + s * rng.standard_normal((m, 2)),
                             lambda v, lo=lo, hi=hi: _in_box(v, lo, hi), int(sel.sum()))
        return y

    def _moons_base(self, n, rng):
        """Two interleaving half circles, centred and scaled (not yet rotated)."""
        p = self.params
        n_outer = n // 2
        n_inner = n - n_outer
        t_out = np.pi * rng.random(n_outer)
        t_in = np.pi * rng.random(n_inner)
        outer = np.stack([np.cos(t_out), np.sin(t_out)], axis=-1)
        inner = np.stack([1.0 - np.cos(t_in), 0.5 - np.sin(t_in)], axis=-1)
        pts = np.concatenate([outer, inner])[rng.permutation(n)]
        pts = pts + p["noise"] * rng.standard_normal(pts.shape)
        return (pts - np.array([0.5, 0.25])) * p["scale"]

    def _sample_moons(self, x, rng):
        n = x.shape[0]
        out = np.empty((n, 2))
        pending = np.arange(n)
        while pending.size:
            y = rotate(self._moons_base(pending.size, rng), 2.0 * np.pi * x[pending])
            ok = DOMAIN.contains(y)
            out[pending[ok]] = y[ok]
            pending = pending[~ok]
        return out

    # ------------------------------------------------------------------
    # densities

    def true_density(self, x, y) -> np.ndarray:
        """Ground-truth density of ``y`` given ``x`` (broadcast over leading axes)."""
        y = np.asarray(y, dtype=float)
        x = np.asarray(x, dtype=float)
        kind = self.kind
        if kind is DatasetKind.SINGLE_GAUSSIAN:
            p = self.params
            val = _gaussian_pdf(y, p["mean"], p["sigma"]) / self._sg_mass
            return np.where(DOMAIN.contains(y), val, 0.0) * np.ones_like(x)
        if kind is DatasetKind.CHANGING_DAMIER:
            # each colour covers 8 squares of area 0.25
            val = np.where(damier_black(y), 1.0 - x, x) / 2.0
            return np.where(DOMAIN.contains(y), val, 0.0)
        if kind is DatasetKind.UNIFORM_TO_GAUSSIANS:
            return self._u2g_density(x, y)
        return self._moons_density(x, y)

    def _u2g_density(self, x, y):
        p = self.params
        val = np.zeros(np.broadcast_shapes(x.shape, y.shape[:-1]))
        val = val + np.where(_in_box(y, *QUADRANTS[1]) | _in_box(y, *QUADRANTS[4]), (1.0 - x) / 2.0, 0.0)
        g2 = _gaussian_pdf(y, p["center2"], p["sigma2"]) / self._g2_mass
        g3 = _gaussian_pdf(y, p["center3"], p["sigma3"]) / self._g3_mass
        val = val + np.where(_in_box(y, *QUADRANTS[2]), x / 2.0 * g2, 0.0)
        val = val + np.where(_in_box(y, *QUADRANTS[3]), x / 2.0 * g3, 0.0)
        return np.where(DOMAIN.contains(y), val, 0.0)

    def moons_reference(self) -> np.ndarray:
        """Unrotated reference cloud used by the KDE surrogate density."""
        size = int(self.params["reference_size"])
        if size <= 0:
            raise DensityUnavailable("two-moons KDE reference is disabled (reference_size=0)")
        if self._moons_reference is None:
            rng = stream(int(self.params["reference_seed"]), "moons-reference")
            ref = self._moons_base(size, rng)
            # keep the points that survive every rotation, as the sampler does
            self._moons_reference = ref[np.linalg.norm(ref, axis=-1) <= 1.0]
        return self._moons_reference

    def _moons_density(self, x, y, chunk: int = 512):
        ref = self.moons_reference()
        bw = float(self.params["bandwidth"])
        x, y = np.broadcast_arrays(x[..., None], y)
        x = x[..., 0]
        flat_x = x.reshape(-1)
        # rotating y by -2 pi x is equivalent to rotating the reference by +2 pi x
        flat_y = rotate(y.reshape(-1, 2), -2.0 * np.pi * flat_x)
        out = np.empty(flat_x.shape[0])
        norm = 1.0 / (2 * math.pi * bw**2 * ref.shape[0])
        for start in range(0, flat_y.shape[0], chunk):
            block = flat_y[start:start + chunk]
            sq = np.sum((block[:, None, :] - ref[None, :, :]) ** 2, axis=-1)
            out[start:start + chunk] = norm * np.exp(-0.5 * sq / bw**2).sum(axis=-1)
        out = out.reshape(x.shape)
        return np.where(DOMAIN.contains(y), out, 0.0)

    def quadrant_of(self, y) -> np.ndarray:
        """Quadrant label 1..4 of each target (Uniform-to-Gaussians convention)."""
        y = np.asarray(y)
        left = y[..., 0] < 0
        low = y[..., 1] < 0
        return np.where(left, np.where(low, 1, 2), np.where(low, 3, 4))


def rotate(points, angle) -> np.ndarray:
    """Rotate each point about the origin by its own angle."""
    points = np.asarray(points, dtype=float)
    c, s = np.cos(angle), np.sin(angle)
    return np.stack([c * points[..., 0] - s * points[..., 1], s * points[..., 0] + c * points[..., 1]], axis=-1)


def _redraw(draw, accept, n: int) -> np.ndarray:
    out = np.empty((n, 2))
    pending = np.arange(n)
    while pending.size:
        cand = draw(pending.size)
        ok = accept(cand)
        out[pending[ok]] = cand[ok]
        pending = pending[~ok]
    return out


@dataclass
class Splits:
    x_train: np.ndarray
    y_train: np.ndarray
    x_val: np.ndarray
    y_val: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray


def make_splits(ds: SyntheticDataset, n_train: int, n_val: int, n_test: int, seed: int) -> Splits:
    """Deterministic train/validation/test splits, one random stream per split."""
    for name, count in (("n_train", n_train), ("n_val", n_val), ("n_test", n_test)):
        if count < 1:
            raise ValueError(f"{name} must be positive, got {count}")
    parts = []
    for label, count in (("data-train", n_train), ("data-val", n_val), ("data-test", n_test)):
        parts.extend(ds.sample(count, stream(seed, label)))
    return Splits(*parts)


def dump_pairs(path, x, y) -> None:
    """Write ``x,y1,y2`` rows with 17 significant digits."""
    with open(path, "w", newline="\n") as fh:
        fh.write("x,y1,y2\n")
        for xi, (a, b) in zip(np.asarray(x), np.asarray(y)):
            fh.write(f"{xi:.17g},{a:.17g},{b:.17g}\n")


def load_pairs(path):
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data[:, 0], data[:, 1:]
