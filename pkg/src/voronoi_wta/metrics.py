"""Evaluation metrics and asymptotic quantization risks."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

from .estimators import LOG_DENSITY_FLOOR
from .geometry import Domain, assign, squared_distances

# Zador constants for d = 1, 2
ZADOR_J = {1: 1.0 / 12.0, 2: 5.0 / (18.0 * math.sqrt(3.0))}

CSV_COLUMNS = ("dataset", "estimator", "K", "h", "seed", "nll", "emd", "distortion", "theoretical_distortion")


def zador_constant(d: int) -> float:
    try:
        return ZADOR_J[d]
    except KeyError:
        raise ValueError(f"Zador constant only tabulated for d in {sorted(ZADOR_J)}") from None


@dataclass
class NllResult:
    value: float
    floor_hits: int
    n: int


def nll_from_log_density(log_dens) -> NllResult:
    """Mean negative log-density, clamping each term at ``log(1e-300)``."""
    log_dens = np.asarray(log_dens, dtype=float).reshape(-1)
    if log_dens.size == 0:
        raise ValueError("need at least one test point")
    hits = int(np.sum(~(log_dens >= LOG_DENSITY_FLOOR)))
    clamped = np.where(log_dens >= LOG_DENSITY_FLOOR, log_dens, LOG_DENSITY_FLOOR)
    return NllResult(float(-np.mean(clamped)), hits, log_dens.size)


def empirical_nll(log_density_fn, x, y) -> NllResult:
    """NLL of targets ``y`` given inputs ``x`` under ``log_density_fn(x, y)``.

    Estimators without a density raise ``NoDensityError`` from the callable.
    """
    return nll_from_log_density(log_density_fn(np.asarray(x), np.asarray(y)))


def emd(cloud_a, cloud_b) -> float:
    """Exact earth mover's distance between two equal-size uniform clouds.

    Uniform marginals make an optimal plan a permutation, so this is the
    mean Euclidean cost of an optimal assignment.
    """
    a = np.atleast_2d(np.asarray(cloud_a, dtype=float))
    b = np.atleast_2d(np.asarray(cloud_b, dtype=float))
    if a.shape != b.shape:
        raise ValueError(f"clouds must have equal shapes, got {a.shape} and {b.shape}")
    if a.shape[0] < 1:
        raise ValueError("clouds must be nonempty")
    cost = cdist(a, b)
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].mean())


def empirical_distortion(hypotheses, samples) -> float:
    """Mean squared distance from each sample to its nearest hypothesis.

    Either one hypothesis set ``(K, d)`` for all samples ``(n, d)``, or one
    set per sample: ``(n, K, d)`` with ``(n, d)``.
    """
    z = np.asarray(hypotheses, dtype=float)
    y = np.asarray(samples, dtype=float)
    if y.ndim == 1:
        y = y[None, :]
    if z.ndim == 3:
        sq = np.sum((z - y[:, None, :]) ** 2, axis=-1)
        return float(np.mean(sq.min(axis=-1)))
    total = 0.0
    for start in range(0, y.shape[0], 65536):
        block = y[start:start + 65536]
        total += squared_distances(block, z).min(axis=-1).sum()
    return float(total / y.shape[0])


def zador_theoretical_risk(density_fn, K: int, d: int, n_mc: int, rng: np.random.Generator,
                           domain: Domain | None = None) -> float:
    """Zador asymptotic risk ``J_d (int rho^(d/(d+2)))^((d+2)/d) / K^(2/d)``.

    The integral is a domain-uniform Monte Carlo average with ``n_mc`` points.
    """
    if K < 1 or n_mc < 1:
        raise ValueError("K and n_mc must be >= 1")
    domain = domain if domain is not None else Domain.cube(d)
    u = domain.uniform(n_mc, rng)
    rho = np.asarray(density_fn(u), dtype=float)
    integral = domain.volume() * np.mean(rho ** (d / (d + 2.0)))
    return zador_constant(d) * integral ** ((d + 2.0) / d) / K ** (2.0 / d)


def histogram_theoretical_risk(domain_volume: float, K: int, d: int) -> float:
    if K < 1:
        raise ValueError("K must be >= 1")
    return (d / 12.0) * domain_volume ** (2.0 / d) / K ** (2.0 / d)


def lloyd(points, samples, iters: int = 50) -> np.ndarray:
    """Lloyd (k-means) refinement of ``points`` on a fixed sample cloud.

    Empty cells keep their generator.
    """
    z = np.array(points, dtype=float)
    y = np.asarray(samples, dtype=float)
    K, d = z.shape
    for _ in range(iters):
        lab = assign(y, z)
        counts = np.bincount(lab, minlength=K)
        sums = np.zeros((K, d))
        np.add.at(sums, lab, y)
        nonempty = counts > 0
        z[nonempty] = sums[nonempty] / counts[nonempty, None]
    return z


@dataclass
class MetricReport:
    dataset: str
    estimator: str
    K: int
    h: float | None
    seed: int
    nll: float | None
    distortion: float
    n_eval: int
    emd: float | None = None
    theoretical_distortion: float | None = None
    config_hash: str = ""
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.n_eval <= 0:
            raise ValueError("n_eval must be positive")
        if self.distortion < 0 or (self.emd is not None and self.emd < 0):
            raise ValueError("distortion and emd must be nonnegative")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "MetricReport":
        return cls(**json.loads(line))

    def csv_row(self) -> list:
        return ["" if v is None else v for v in (getattr(self, c) for c in CSV_COLUMNS)]


def reports_to_csv(reports) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for r in reports:
        writer.writerow(r.csv_row())
    return buf.getvalue()


def aggregate(reports) -> dict:
    """Mean and standard deviation of each metric over seeds, per (estimator, K, h).

    All rows must carry the same config hash.
    """
    reports = list(reports)
    hashes = {r.config_hash for r in reports}
    if len(hashes) > 1:
        raise ValueError(f"refusing to aggregate rows from different configs: {sorted(hashes)}")
    groups: dict = {}
    for r in reports:
        groups.setdefault((r.dataset, r.estimator, r.K, r.h), []).append(r)
    out = {}
    for key, rows in groups.items():
        stats = {}
        for name in ("nll", "emd", "distortion", "theoretical_distortion"):
            vals = [getattr(r, name) for r in rows if getattr(r, name) is not None]
            if vals:
                stats[name] = (float(np.mean(vals)), float(np.std(vals)))
        stats["n_seeds"] = len(rows)
        out[key] = stats
    return out
