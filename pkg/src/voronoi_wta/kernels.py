"""Isotropic kernels with closed-form radial mass."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammainc, gammaln


class KernelFamily(str, enum.Enum):
    GAUSSIAN = "gaussian"
    UNIFORM = "uniform"


def unit_ball_volume(d: int) -> float:
    return math.exp(0.5 * d * math.log(math.pi) - gammaln(0.5 * d + 1.0))


@dataclass(frozen=True)
class KernelSpec:
    family: KernelFamily
    h: float
    d: int = 2

    def __post_init__(self):
        object.__setattr__(self, "family", KernelFamily(self.family))
        if not self.h > 0 or not math.isfinite(self.h):
            raise ValueError(f"scaling factor must be positive and finite, got {self.h}")
        if self.d < 1:
            raise ValueError(f"dimension must be >= 1, got {self.d}")

    @classmethod
    def gaussian(cls, h: float, d: int = 2) -> "KernelSpec":
        return cls(KernelFamily.GAUSSIAN, h, d)

    @classmethod
    def uniform(cls, h: float, d: int = 2) -> "KernelSpec":
        return cls(KernelFamily.UNIFORM, h, d)

    def log_density(self, center, y) -> np.ndarray:
        """Log kernel value at ``y``; broadcasts over leading axes."""
        center = np.asarray(center, dtype=float)
        y = np.asarray(y, dtype=float)
        if center.shape[-1] != self.d or y.shape[-1] != self.d:
            raise ValueError(f"expected points of dimension {self.d}")
        diff = y - center
        sq = np.einsum("...i,...i->...", diff, diff)
        if self.family is KernelFamily.GAUSSIAN:
            return -0.5 * sq / self.h**2 - self.d * math.log(self.h) - 0.5 * self.d * math.log(2 * math.pi)
        log_norm = -math.log(unit_ball_volume(self.d)) - self.d * math.log(self.h)
        return np.where(sq <= self.h**2, log_norm, -np.inf)

    def density(self, center, y) -> np.ndarray:
        return np.exp(self.log_density(center, y))

    def sample(self, centers, rng: np.random.Generator) -> np.ndarray:
        """One kernel draw around each row of ``centers``."""
        centers = np.asarray(centers, dtype=float)
        if self.family is KernelFamily.GAUSSIAN:
            return centers + self.h * rng.standard_normal(centers.shape)
        # uniform in the ball: direction times radius h * U^(1/d)
        s = rng.standard_normal(centers.shape)
        s /= np.linalg.norm(s, axis=-1, keepdims=True)
        r = self.h * rng.random(centers.shape[:-1]) ** (1.0 / self.d)
        return centers + r[..., None] * s

    def radial_mass(self, l) -> np.ndarray:
        """Fraction of kernel mass within radius ``l`` along a direction.

        Averaging this over uniform directions gives the kernel mass of a
        star-shaped region around the kernel center.
        """
        l = np.asarray(l, dtype=float)
        if np.any(l < 0) or np.any(np.isnan(l)):
            raise ValueError("radius must be nonnegative")
        if self.family is KernelFamily.GAUSSIAN:
            with np.errstate(over="ignore"):
                z = np.where(np.isinf(l), np.inf, l * l / (2.0 * self.h**2))
            return gammainc(0.5 * self.d, z)
        return np.minimum(1.0, (l / self.h) ** self.d)


def kernel_density(spec: KernelSpec, center, y):
    return spec.density(center, y)


def radial_cell_mass(spec: KernelSpec, l):
    return spec.radial_mass(l)
