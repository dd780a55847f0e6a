"""Experiment orchestration: configuration, checkpoints and the commands
behind the ``voronoi-wta`` CLI.

Every command is a plain function of a :class:`RunConfig` so it can be
driven from tests as well as from the command line.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import tomli

from .datasets import DatasetKind, DensityUnavailable, SyntheticDataset, dump_pairs, make_splits
from .estimators import (
    ConditionalDensityEstimator,
    EstimatorKind,
    NoDensityError,
    Variant,
    sample as estimator_sample,
)
from .geometry import Domain, grid_dims
from .kernels import KernelSpec
from .metrics import (
    MetricReport,
    emd,
    empirical_distortion,
    histogram_theoretical_risk,
    nll_from_log_density,
    reports_to_csv,
    zador_theoretical_risk,
)
from .nn import AdamState, HeadKind, MlpModel, TrainingLog, train
from .streams import stream
from .tuning import SearchConfig, golden_section_min

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
DOMAIN = Domain.cube(2)

# fields that do not change what a run computes
_UNHASHED = {"out", "seeds"}
# fields that determine the trained weights
_TRAINING_FIELDS = ("dataset", "dataset_params", "K", "n_train", "n_val", "epochs", "batch_size",
                    "lr", "beta", "hidden")


@dataclass
class RunConfig:
    dataset: str = DatasetKind.SINGLE_GAUSSIAN.value
    dataset_params: dict = field(default_factory=dict)
    estimator: str = Variant.VORONOI_WTA.value
    kernel: str = "gaussian"
    K: int = 16
    h: list = field(default_factory=lambda: [0.1])
    seeds: list = field(default_factory=lambda: [0, 1, 2])
    n_train: int = 100_000
    n_val: int = 25_000
    n_test: int = 2_000
    n_versors: int = 40
    n_volume_mc: int = 100_000
    emd_samples: int = 500
    emd_inputs: int = 0
    epochs: int = 100
    batch_size: int = 1024
    lr: float = 1e-3
    beta: float = 1.0
    hidden: list = field(default_factory=lambda: [256, 256])
    K_grid: list = field(default_factory=lambda: [9, 16, 25, 49, 100])
    theory_inputs: int = 10
    theory_mc: int = 10_000
    h_search: dict = field(default_factory=lambda: {"lo": 0.1, "hi": 2.0, "tolerance": 0.1})
    out: str = "runs"

    def __post_init__(self):
        self.dataset = DatasetKind(self.dataset).value
        self.estimator = Variant(self.estimator).value
        if not isinstance(self.h, list):
            self.h = [self.h]
        if not isinstance(self.seeds, list):
            self.seeds = [self.seeds]
        self.h = [float(v) for v in self.h]
        self.seeds = [int(s) for s in self.seeds]
        self.hidden = [int(w) for w in self.hidden]
        for name in ("n_train", "n_val", "n_test", "n_versors", "n_volume_mc", "emd_samples",
                     "epochs", "batch_size", "theory_inputs", "theory_mc"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if not self.seeds:
            raise ValueError("at least one seed is required")

    @classmethod
    def from_toml(cls, path, overrides: dict | None = None) -> "RunConfig":
        with open(path, "rb") as fh:
            values = tomli.load(fh)
        values.update(overrides or {})
        return cls.from_dict(values)

    @classmethod
    def from_dict(cls, values: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**values)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def config_hash(self) -> str:
        payload = {k: v for k, v in self.to_dict().items() if k not in _UNHASHED}
        return _hash(payload)

    def training_hash(self) -> str:
        d = self.to_dict()
        return _hash({k: d[k] for k in _TRAINING_FIELDS} | {"head": self.head_kind.value})

    @property
    def head_kind(self) -> HeadKind:
        v = Variant(self.estimator)
        if v is Variant.MDN:
            return HeadKind.MDN
        if v is Variant.HISTOGRAM:
            return HeadKind.HISTOGRAM
        return HeadKind.WTA_SCORING

    def dataset_obj(self) -> SyntheticDataset:
        return SyntheticDataset(DatasetKind(self.dataset), dict(self.dataset_params))

    def out_dir(self) -> Path:
        path = Path(self.out)
        path.mkdir(parents=True, exist_ok=True)
        return path

    def checkpoint_path(self, seed: int) -> Path:
        return Path(self.out) / f"checkpoint_{self.dataset}_{self.head_kind.value}_K{self.K}_seed{seed}.json"


def _hash(payload) -> str:
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]


# --------------------------------------------------------------------------
# checkpoints


def encode_params(flat: np.ndarray) -> str:
    return np.asarray(flat, dtype=">f8").tobytes().hex()


def decode_params(text: str) -> np.ndarray:
    return np.frombuffer(bytes.fromhex(text), dtype=">f8").astype(float)


@dataclass
class Checkpoint:
    model: MlpModel
    training_log: dict
    config_hash: str
    seed: int
    format_version: int = CHECKPOINT_VERSION

    def to_json(self) -> str:
        m = self.model
        doc = {
            "format_version": self.format_version,
            "architecture": {
                "head_kind": m.head_kind.value,
                "K": m.K,
                "d": m.d,
                "in_dim": m.in_dim,
                "hidden": list(m.hidden),
                "grid_shape": None if m.grid_shape is None else list(m.grid_shape),
                "domain": {"lower": m.domain.lower.tolist(), "upper": m.domain.upper.tolist()},
            },
            "n_params": m.n_params,
            "params": encode_params(m.flat()),
            "training_log": self.training_log,
            "config_hash": self.config_hash,
            "seed": self.seed,
        }
        return json.dumps(doc, indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "Checkpoint":
        doc = json.loads(text)
        if doc.get("format_version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {doc.get('format_version')}")
        arch = doc["architecture"]
        flat = decode_params(doc["params"])
        if flat.size != doc["n_params"]:
            raise ValueError("checkpoint parameter count does not match its header")
        domain = Domain(arch["domain"]["lower"], arch["domain"]["upper"])
        skeleton = MlpModel.init(arch["head_kind"], arch["K"], arch["d"], np.random.default_rng(0),
                                 in_dim=arch["in_dim"], hidden=tuple(arch["hidden"]),
                                 grid_shape=None if arch["grid_shape"] is None else tuple(arch["grid_shape"]),
                                 domain=domain)
        if skeleton.n_params != flat.size:
            raise ValueError("parameter count does not match the architecture")
        return cls(skeleton.with_flat(flat), doc["training_log"], doc["config_hash"], doc["seed"],
                   doc["format_version"])

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> "Checkpoint":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"missing checkpoint: {path}")
        return cls.from_json(path.read_text())


# --------------------------------------------------------------------------
# commands


def cmd_generate(cfg: RunConfig) -> list[Path]:
    ds = cfg.dataset_obj()
    out = cfg.out_dir()
    written = []
    for seed in cfg.seeds:
        sp = make_splits(ds, cfg.n_train, cfg.n_val, cfg.n_test, seed)
        for name, x, y in (("train", sp.x_train, sp.y_train), ("val", sp.x_val, sp.y_val),
                           ("test", sp.x_test, sp.y_test)):
            path = out / f"{cfg.dataset}_seed{seed}_{name}.csv"
            dump_pairs(path, x, y)
            written.append(path)
    return written


def build_model(cfg: RunConfig, seed: int) -> MlpModel:
    grid = grid_dims(cfg.K) if cfg.head_kind is HeadKind.HISTOGRAM else None
    return MlpModel.init(cfg.head_kind, cfg.K, 2, stream(seed, "init"), hidden=tuple(cfg.hidden),
                         grid_shape=grid, domain=DOMAIN)


def train_seed(cfg: RunConfig, seed: int) -> tuple[MlpModel, TrainingLog]:
    sp = make_splits(cfg.dataset_obj(), cfg.n_train, cfg.n_val, cfg.n_test, seed)
    model = build_model(cfg, seed)
    return train(model, sp.x_train, sp.y_train, sp.x_val, sp.y_val, stream(seed, "shuffle"),
                 epochs=cfg.epochs, batch_size=cfg.batch_size, adam=AdamState(lr=cfg.lr), beta=cfg.beta)


def cmd_train(cfg: RunConfig) -> list[Path]:
    cfg.out_dir()
    paths = []
    for seed in cfg.seeds:
        model, history = train_seed(cfg, seed)
        path = cfg.checkpoint_path(seed)
        Checkpoint(model, history.to_dict(), cfg.training_hash(), seed).save(path)
        path.with_suffix(".log.json").write_text(json.dumps(history.to_dict(), indent=1) + "\n")
        log.info("seed %d: best epoch %d, val loss %.5f", seed, history.best_epoch,
                 history.val_loss[history.best_epoch])
        paths.append(path)
    return paths


def load_model(cfg: RunConfig, seed: int, path=None) -> MlpModel:
    ckpt = Checkpoint.load(path or cfg.checkpoint_path(seed))
    if ckpt.model.head_kind is not cfg.head_kind:
        raise ValueError(f"checkpoint head {ckpt.model.head_kind.value} cannot serve "
                         f"estimator {cfg.estimator}")
    if ckpt.config_hash != cfg.training_hash():
        raise ValueError("checkpoint was trained with a different configuration")
    return ckpt.model


def estimator_kind(variant, h: float | None, cfg: RunConfig) -> EstimatorKind:
    variant = Variant(variant)
    kernel = None
    if variant in (Variant.KERNEL_WTA, Variant.VORONOI_WTA):
        kernel = KernelSpec(cfg.kernel, h, 2)
    return EstimatorKind(variant, kernel, cfg.n_versors)


def _h_values(cfg: RunConfig, variant: Variant) -> list:
    if variant in (Variant.KERNEL_WTA, Variant.VORONOI_WTA):
        if not cfg.h:
            raise ValueError("kernel estimators need at least one h value")
        return list(cfg.h)
    return [None]


def evaluate(cfg: RunConfig, model: MlpModel, seed: int, variant, h, x, y, with_emd: bool = True) -> MetricReport:
    """Metrics of one estimator on test pairs ``(x, y)``."""
    variant = Variant(variant)
    ds = cfg.dataset_obj()
    hs = model.forward(x)
    kind = estimator_kind(variant, h, cfg)
    extra = {}
    est = None
    if kind.has_density:
        est = ConditionalDensityEstimator(kind, hs, DOMAIN, rng=stream(seed, "versors", _h_key(h)),
                                          n_mc=cfg.n_volume_mc)
        res = nll_from_log_density(est.log_density(y))
        nll = res.value
        extra["nll_floor_hits"] = res.floor_hits
    else:
        nll = None
        extra["nll_status"] = "no-density"
    distortion = empirical_distortion(hs.points, y)

    theo = theoretical_distortion(cfg, ds, cfg.K, seed)

    emd_value = None
    if with_emd and cfg.emd_inputs > 0:
        rng_s = stream(seed, "sampling", _h_key(h))
        rng_t = stream(seed, "emd-target")
        vals = []
        for i in range(min(cfg.emd_inputs, len(x))):
            pred = estimator_sample(kind, hs[i], DOMAIN, cfg.emd_samples, rng_s)
            target = ds.sample_y(np.full(cfg.emd_samples, x[i]), rng_t)
            vals.append(emd(pred, target))
        emd_value = float(np.mean(vals))

    return MetricReport(dataset=cfg.dataset, estimator=variant.value, K=cfg.K, h=h, seed=seed, nll=nll,
                        distortion=distortion, n_eval=len(x), emd=emd_value,
                        theoretical_distortion=theo, config_hash=cfg.config_hash(), extra=extra)


def _h_key(h) -> int:
    return 0 if h is None else int(round(float(h) * 1e6))


def theoretical_distortion(cfg: RunConfig, ds: SyntheticDataset, K: int, seed: int) -> float | None:
    """Zador risk averaged over ``theory_inputs`` evenly spaced inputs."""
    rng = stream(seed, "mc", K)
    xs = (np.arange(cfg.theory_inputs) + 0.5) / cfg.theory_inputs
    try:
        vals = [zador_theoretical_risk(lambda u, xv=xv: ds.true_density(xv, u), K, 2, cfg.theory_mc, rng, DOMAIN)
                for xv in xs]
    except DensityUnavailable:
        return None
    return float(np.mean(vals))


def _write_reports(cfg: RunConfig, reports, stem: str) -> tuple[Path, Path]:
    out = cfg.out_dir()
    jsonl = out / f"{stem}.jsonl"
    csv_path = out / f"{stem}.csv"
    jsonl.write_text("".join(r.to_json() + "\n" for r in reports))
    csv_path.write_text(reports_to_csv(reports))
    return jsonl, csv_path


def cmd_eval(cfg: RunConfig, checkpoints: dict | None = None) -> list[MetricReport]:
    """One report per (seed, h); Dirac-WTA rows carry a ``no-density`` marker."""
    variant = Variant(cfg.estimator)
    reports = []
    for seed in cfg.seeds:
        model = load_model(cfg, seed, (checkpoints or {}).get(seed))
        sp = make_splits(cfg.dataset_obj(), cfg.n_train, cfg.n_val, cfg.n_test, seed)
        for h in _h_values(cfg, variant):
            reports.append(evaluate(cfg, model, seed, variant, h, sp.x_test, sp.y_test))
    _write_reports(cfg, reports, f"eval_{cfg.dataset}_{cfg.estimator}_K{cfg.K}")
    return reports


def _nll(cfg, model, seed, variant, h, x, y, hs=None) -> float:
    hs = model.forward(x) if hs is None else hs
    est = ConditionalDensityEstimator(estimator_kind(variant, h, cfg), hs, DOMAIN,
                                      rng=stream(seed, "versors", _h_key(h)), n_mc=cfg.n_volume_mc)
    return nll_from_log_density(est.log_density(y)).value


SWEEP_COLUMNS = ("seed", "h", "nll_kernel_wta", "nll_voronoi_wta", "abs_diff", "nll_uniform_wta")


def cmd_sweep_h(cfg: RunConfig, h_grid=None, checkpoints: dict | None = None) -> dict:
    """NLL of Kernel-WTA and Voronoi-WTA across ``h``, plus a tuned ``h*``.

    ``h*`` minimises Voronoi-WTA NLL on the validation split by golden-section
    search over ``cfg.h_search``.
    """
    h_grid = list(cfg.h if h_grid is None else h_grid)
    if not h_grid:
        raise ValueError("h grid is empty")
    if cfg.head_kind is not HeadKind.WTA_SCORING:
        raise ValueError("h sweeps need a WTA scoring model")
    rows, tuned = [], {}
    for seed in cfg.seeds:
        model = load_model(cfg, seed, (checkpoints or {}).get(seed))
        sp = make_splits(cfg.dataset_obj(), cfg.n_train, cfg.n_val, cfg.n_test, seed)
        hs = model.forward(sp.x_test)
        uniform = _nll(cfg, model, seed, Variant.UNIFORM_WTA, None, sp.x_test, sp.y_test, hs)
        for h in h_grid:
            kw = _nll(cfg, model, seed, Variant.KERNEL_WTA, h, sp.x_test, sp.y_test, hs)
            vw = _nll(cfg, model, seed, Variant.VORONOI_WTA, h, sp.x_test, sp.y_test, hs)
            rows.append({"seed": seed, "h": h, "nll_kernel_wta": kw, "nll_voronoi_wta": vw,
                         "abs_diff": abs(kw - vw), "nll_uniform_wta": uniform})
        hs_val = model.forward(sp.x_val)
        search = golden_section_min(
            lambda h: _nll(cfg, model, seed, Variant.VORONOI_WTA, h, sp.x_val, sp.y_val, hs_val),
            SearchConfig(**cfg.h_search))
        tuned[seed] = {"h_star": search.h, "best_h": search.best_h, "val_nll": search.value,
                       "evals": search.evals, "converged": search.converged}
    out = cfg.out_dir()
    with open(out / f"sweep_h_{cfg.dataset}_K{cfg.K}.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, SWEEP_COLUMNS, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    (out / f"sweep_h_{cfg.dataset}_K{cfg.K}_tuned.json").write_text(
        json.dumps({str(k): v for k, v in tuned.items()}, indent=1, sort_keys=True) + "\n")
    return {"rows": rows, "tuned": tuned}


def cmd_theory(cfg: RunConfig) -> list[dict]:
    """Zador and histogram asymptotic risks for each K of ``cfg.K_grid``."""
    ds = cfg.dataset_obj()
    seed = cfg.seeds[0]
    rows = []
    for K in cfg.K_grid:
        rows.append({"K": int(K), "zador": theoretical_distortion(cfg, ds, int(K), seed),
                     "histogram": histogram_theoretical_risk(DOMAIN.volume(), int(K), 2)})
    with open(cfg.out_dir() / f"theory_{cfg.dataset}.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, ("K", "zador", "histogram"), lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    return rows


def cmd_sample(cfg: RunConfig, x_values, n: int, seed: int | None = None, model: MlpModel | None = None,
               path=None) -> Path:
    """Write ``n`` estimator samples for each input in ``x_values`` as ``x,y1,y2`` rows."""
    seed = cfg.seeds[0] if seed is None else seed
    model = load_model(cfg, seed) if model is None else model
    variant = Variant(cfg.estimator)
    h = cfg.h[0] if variant in (Variant.KERNEL_WTA, Variant.VORONOI_WTA) else None
    kind = estimator_kind(variant, h, cfg)
    x_values = np.atleast_1d(np.asarray(x_values, dtype=float))
    hs = model.forward(x_values)
    rng = stream(seed, "sampling", _h_key(h))
    xs, ys = [], []
    for i, xv in enumerate(x_values):
        pts = estimator_sample(kind, hs[i], DOMAIN, n, rng)
        xs.append(np.full(len(pts), xv))
        ys.append(pts)
    path = Path(path) if path else cfg.out_dir() / f"samples_{cfg.dataset}_{cfg.estimator}_seed{seed}.csv"
    dump_pairs(path, np.concatenate(xs) if xs else np.empty(0),
               np.concatenate(ys) if ys else np.empty((0, 2)))
    return path


__all__ = [
    "RunConfig", "Checkpoint", "cmd_generate", "cmd_train", "cmd_eval", "cmd_sweep_h", "cmd_theory",
    "cmd_sample", "evaluate", "NoDensityError",
]
