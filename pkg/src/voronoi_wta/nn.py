"""Multi-head MLP with hand-written backpropagation, Adam, and the three
training objectives (WTA + scoring, MDN likelihood, histogram scores).

All arrays are float64.  Losses are averaged over the batch and return a
gradient dict keyed like ``MlpModel.params``.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .estimators import HypothesisSet
from .geometry import Domain, assign, regular_grid

log = logging.getLogger(__name__)

LOGVAR_FLOOR = math.log(1e-6)


class HeadKind(str, enum.Enum):
    WTA_SCORING = "wta_scoring"
    MDN = "mdn"
    HISTOGRAM = "histogram"


class MDNOverflowError(FloatingPointError):
    pass


def _sigmoid(a):
    return 0.5 * (1.0 + np.tanh(0.5 * a))


def _softplus(a):
    return np.logaddexp(0.0, a)


def _log_softmax(a):
    m = a.max(axis=-1, keepdims=True)
    z = a - m
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


@dataclass
class MlpModel:
    """Two ReLU hidden layers followed by one linear layer holding every head.

    Output layout (columns of the last layer):

    * ``WTA_SCORING``: ``K*d`` hypothesis coordinates (tanh), ``K`` score logits (sigmoid)
    * ``MDN``: ``K*d`` means (tanh), ``K`` log-variances, ``K`` mixture logits (softmax)
    * ``HISTOGRAM``: ``K`` score logits; the hypotheses are the bins of ``grid_shape``
    """

    head_kind: HeadKind
    K: int
    d: int
    params: dict
    in_dim: int = 1
    hidden: tuple = (256, 256)
    grid_shape: tuple | None = None
    domain: Domain = field(default_factory=Domain.cube)

    def __post_init__(self):
        self.head_kind = HeadKind(self.head_kind)
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.head_kind is HeadKind.HISTOGRAM:
            if self.grid_shape is None or math.prod(self.grid_shape) != self.K:
                raise ValueError("histogram head needs a grid shape with K bins")
            self.grid_shape = tuple(int(n) for n in self.grid_shape)
        for name, shape in self.param_shapes().items():
            if self.params[name].shape != shape:
                raise ValueError(f"parameter {name} has shape {self.params[name].shape}, expected {shape}")

    @classmethod
    def init(cls, head_kind, K: int, d: int, rng: np.random.Generator, in_dim: int = 1,
             hidden=(256, 256), grid_shape=None, domain: Domain | None = None) -> "MlpModel":
        """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and biases.

        Score-logit biases of the WTA head start at logit(1/K), the value the
        scores converge to on average.  Starting them at 0 makes the scoring
        loss push every score down together through the shared layers in the
        first few steps, which drags hypotheses out of the data and kills them.
        """
        head_kind = HeadKind(head_kind)
        shapes = _param_shapes(head_kind, K, d, in_dim, tuple(hidden))
        params = {}
        for name, shape in shapes.items():
            fan_in = shape[0] if name.startswith("W") else shapes["W" + name[1:]][0]
            bound = 1.0 / math.sqrt(fan_in)
            params[name] = rng.uniform(-bound, bound, size=shape)
        if head_kind is HeadKind.WTA_SCORING and K > 1:
            params["b_out"][K * d:] += math.log(1.0 / (K - 1))
        return cls(head_kind, K, d, params, in_dim, tuple(hidden), grid_shape,
                   domain if domain is not None else Domain.cube(d))

    def param_shapes(self) -> dict:
        return _param_shapes(self.head_kind, self.K, self.d, self.in_dim, self.hidden)

    @property
    def n_outputs(self) -> int:
        return _n_outputs(self.head_kind, self.K, self.d)

    @property
    def n_params(self) -> int:
        return sum(math.prod(s) for s in self.param_shapes().values())

    def flat(self) -> np.ndarray:
        return np.concatenate([self.params[n].ravel() for n in self.param_shapes()])

    def with_flat(self, flat: np.ndarray) -> "MlpModel":
        flat = np.asarray(flat, dtype=float)
        if flat.size != self.n_params:
            raise ValueError(f"expected {self.n_params} parameters, got {flat.size}")
        params, pos = {}, 0
        for name, shape in self.param_shapes().items():
            size = math.prod(shape)
            params[name] = flat[pos:pos + size].reshape(shape).copy()
            pos += size
        return MlpModel(self.head_kind, self.K, self.d, params, self.in_dim, self.hidden,
                        self.grid_shape, self.domain)

    def copy(self) -> "MlpModel":
        return self.with_flat(self.flat())

    def grid_points(self) -> np.ndarray:
        if self.grid_shape is None:
            raise ValueError("model has no grid")
        return regular_grid(self.grid_shape, self.domain)

    # ------------------------------------------------------------------

    def _prepare(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 0:
            x = x.reshape(1, 1)
        elif x.ndim == 1:
            x = x.reshape(-1, 1) if self.in_dim == 1 else x.reshape(1, -1)
        if x.shape[-1] != self.in_dim:
            raise ValueError(f"input has width {x.shape[-1]}, model expects {self.in_dim}")
        return x

    def _forward(self, x):
        acts = [x]
        h = x
        for i in range(len(self.hidden)):
            h = np.maximum(h @ self.params[f"W{i}"] + self.params[f"b{i}"], 0.0)
            acts.append(h)
        out = h @ self.params["W_out"] + self.params["b_out"]
        return out, acts

    def _backward(self, acts, d_out) -> dict:
        grads = {"W_out": acts[-1].T @ d_out, "b_out": d_out.sum(axis=0)}
        delta = d_out @ self.params["W_out"].T
        for i in reversed(range(len(self.hidden))):
            delta = delta * (acts[i + 1] > 0.0)
            grads[f"W{i}"] = acts[i].T @ delta
            grads[f"b{i}"] = delta.sum(axis=0)
            if i:
                delta = delta @ self.params[f"W{i}"].T
        return grads

    def _split(self, out):
        K, d = self.K, self.d
        if self.head_kind is HeadKind.HISTOGRAM:
            return {"score_logits": out}
        split = {"hyp_pre": out[:, : K * d].reshape(-1, K, d)}
        if self.head_kind is HeadKind.WTA_SCORING:
            split["score_logits"] = out[:, K * d:]
        else:
            split["logvar"] = out[:, K * d: K * d + K]
            split["mix_logits"] = out[:, K * d + K:]
        return split

    def forward(self, x) -> HypothesisSet:
        """Head values for a batch of inputs as a batched ``HypothesisSet``.

        WTA: tanh hypotheses and raw sigmoid scores.  MDN: means, mixture
        weights and standard deviations.  Histogram: grid points and scores.
        """
        x = self._prepare(x)
        out, _ = self._forward(x)
        s = self._split(out)
        n = x.shape[0]
        if self.head_kind is HeadKind.WTA_SCORING:
            return HypothesisSet(np.tanh(s["hyp_pre"]), _sigmoid(s["score_logits"]))
        if self.head_kind is HeadKind.HISTOGRAM:
            grid = np.broadcast_to(self.grid_points(), (n, self.K, self.d))
            return HypothesisSet(grid, _sigmoid(s["score_logits"]))
        logvar = np.maximum(s["logvar"], LOGVAR_FLOOR)
        pi = np.exp(_log_softmax(s["mix_logits"]))
        return HypothesisSet(np.tanh(s["hyp_pre"]), pi, np.exp(0.5 * logvar))


def _n_outputs(head_kind: HeadKind, K: int, d: int) -> int:
    if head_kind is HeadKind.WTA_SCORING:
        return K * d + K
    if head_kind is HeadKind.MDN:
        return K * d + 2 * K
    return K


def _param_shapes(head_kind, K, d, in_dim, hidden) -> dict:
    shapes = {}
    width = in_dim
    for i, h in enumerate(hidden):
        shapes[f"W{i}"] = (width, h)
        shapes[f"b{i}"] = (h,)
        width = h
    n_out = _n_outputs(HeadKind(head_kind), K, d)
    shapes["W_out"] = (width, n_out)
    shapes["b_out"] = (n_out,)
    return shapes


def _as_targets(y, d: int) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    return y.reshape(-1, d)


# --------------------------------------------------------------------------
# losses


def wta_compound_loss(model: MlpModel, x, y, beta: float = 1.0):
    """Winner-takes-all distortion plus ``beta`` times the scoring cross-entropy.

    Only the winning hypothesis receives a gradient from the first term;
    every score head is trained against the one-hot winner indicator.
    """
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    if model.head_kind is not HeadKind.WTA_SCORING:
        raise ValueError("wta_compound_loss needs a WTA scoring head")
    x = model._prepare(x)
    y = _as_targets(y, model.d)
    n, K, d = x.shape[0], model.K, model.d
    out, acts = model._forward(x)
    s = model._split(out)
    hyp = np.tanh(s["hyp_pre"])
    sq = np.sum((hyp - y[:, None, :]) ** 2, axis=-1)  # (n, K)
    winner = np.argmin(sq, axis=-1)
    rows = np.arange(n)
    target = np.zeros((n, K))
    target[rows, winner] = 1.0
    a = s["score_logits"]
    bce = _softplus(a) - target * a
    loss = float(np.mean(sq[rows, winner] + beta * bce.sum(axis=-1)))

    d_hyp = np.zeros((n, K, d))
    d_hyp[rows, winner] = 2.0 * (hyp[rows, winner] - y) * (1.0 - hyp[rows, winner] ** 2)
    d_scores = beta * (_sigmoid(a) - target)
    d_out = np.concatenate([d_hyp.reshape(n, K * d), d_scores], axis=1) / n
    return loss, model._backward(acts, d_out)


def mdn_loss(model: MlpModel, x, y):
    """Negative log-likelihood of an isotropic Gaussian mixture."""
    if model.head_kind is not HeadKind.MDN:
        raise ValueError("mdn_loss needs an MDN head")
    x = model._prepare(x)
    y = _as_targets(y, model.d)
    n, K, d = x.shape[0], model.K, model.d
    with np.errstate(over="raise", invalid="raise", divide="raise"):
        try:
            out, acts = model._forward(x)
            s = model._split(out)
            mu = np.tanh(s["hyp_pre"])
            raw_logvar = s["logvar"]
            logvar = np.maximum(raw_logvar, LOGVAR_FLOOR)
            inv_var = np.exp(-logvar)
            sq = np.sum((y[:, None, :] - mu) ** 2, axis=-1)
            log_pi = _log_softmax(s["mix_logits"])
            comp = log_pi - 0.5 * d * math.log(2 * math.pi) - 0.5 * d * logvar - 0.5 * sq * inv_var
            m = comp.max(axis=-1, keepdims=True)
            lse = m[:, 0] + np.log(np.exp(comp - m).sum(axis=-1))
            resp = np.exp(comp - lse[:, None])  # posterior responsibilities
        except FloatingPointError as exc:
            raise MDNOverflowError(f"numeric overflow in MDN likelihood: {exc}") from exc
    loss = float(-np.mean(lse))
    if not math.isfinite(loss):
        raise MDNOverflowError("non-finite MDN loss")

    d_mu = -resp[..., None] * (y[:, None, :] - mu) * inv_var[..., None] * (1.0 - mu**2)
    d_logvar = resp * (0.5 * d - 0.5 * sq * inv_var) * (raw_logvar > LOGVAR_FLOOR)
    d_mix = np.exp(log_pi) - resp
    d_out = np.concatenate([d_mu.reshape(n, K * d), d_logvar, d_mix], axis=1) / n
    grads = model._backward(acts, d_out)
    if not all(np.all(np.isfinite(g)) for g in grads.values()):
        raise MDNOverflowError("non-finite MDN gradient")
    return loss, grads


def histogram_loss(model: MlpModel, grid: HypothesisSet | np.ndarray, x, y):
    """Per-bin binary cross-entropy against the bin containing ``y``."""
    if model.head_kind is not HeadKind.HISTOGRAM:
        raise ValueError("histogram_loss needs a histogram head")
    points = grid.points if isinstance(grid, HypothesisSet) else np.asarray(grid, dtype=float)
    x = model._prepare(x)
    y = _as_targets(y, model.d)
    n = x.shape[0]
    out, acts = model._forward(x)
    a = out
    target = np.zeros_like(a)
    target[np.arange(n), assign(y, points)] = 1.0
    loss = float(np.mean((_softplus(a) - target * a).sum(axis=-1)))
    return loss, model._backward(acts, (_sigmoid(a) - target) / n)


def loss_for(model: MlpModel, beta: float = 1.0):
    """The training objective matching the model's head."""
    if model.head_kind is HeadKind.WTA_SCORING:
        return lambda m, x, y: wta_compound_loss(m, x, y, beta)
    if model.head_kind is HeadKind.MDN:
        return mdn_loss
    grid = model.grid_points()
    return lambda m, x, y: histogram_loss(m, grid, x, y)


def selection_loss_for(model: MlpModel):
    """Validation metric used to pick the checkpoint.

    For WTA heads this is the distortion term alone: the optimum of the
    scoring term depends on the current tessellation and grows as the
    hypotheses spread out, so the compound loss favours early, collapsed
    checkpoints.  Other heads select on their training objective.
    """
    if model.head_kind is HeadKind.WTA_SCORING:
        return lambda m, x, y: wta_compound_loss(m, x, y, 0.0)
    return loss_for(model)


# --------------------------------------------------------------------------
# optimisation


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def update(self, params: dict, grads: dict, trainable=None) -> None:
        """In-place Adam step on ``params``; names outside ``trainable`` are frozen."""
        self.step += 1
        c1 = 1.0 - self.beta1**self.step
        c2 = 1.0 - self.beta2**self.step
        for name, g in grads.items():
            if trainable is not None and name not in trainable:
                continue
            if name not in self.m:
                self.m[name] = np.zeros_like(g)
                self.v[name] = np.zeros_like(g)
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            if isinstance(trainable, dict) and trainable[name] is not None:
                mask = trainable[name]
                params[name] -= self.lr * mask * (m / c1) / (np.sqrt(v / c2) + self.eps)
            else:
                params[name] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class TrainingLog:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    val_select: list = field(default_factory=list)
    best_epoch: int = -1

    def to_dict(self) -> dict:
        return {"train_loss": self.train_loss, "val_loss": self.val_loss, "val_select": self.val_select,
                "best_epoch": self.best_epoch}


def evaluate_loss(model: MlpModel, loss_fn, x, y, batch_size: int = 8192) -> float:
    total, n = 0.0, len(x)
    for start in range(0, n, batch_size):
        xb, yb = x[start:start + batch_size], y[start:start + batch_size]
        total += loss_fn(model, xb, yb)[0] * len(xb)
    return total / n


def train(model: MlpModel, x_train, y_train, x_val, y_val, rng: np.random.Generator,
          epochs: int = 100, batch_size: int = 1024, adam: AdamState | None = None,
          beta: float = 1.0, loss_fn=None, trainable=None, patience: int | None = None,
          select_fn=None):
    """Mini-batch Adam training with checkpoint selection on validation data.

    Returns ``(best_model, log)``; ``model`` itself is left untouched.
    ``trainable`` restricts updates to the named parameters; a dict value
    may be a 0/1 mask of the parameter's shape.  The checkpoint minimising
    ``select_fn`` (default :func:`selection_loss_for`) on the validation
    split is kept; the log also records the full validation objective.
    """
    model = model.copy()
    adam = adam if adam is not None else AdamState()
    loss_fn = loss_fn if loss_fn is not None else loss_for(model, beta)
    select_fn = select_fn if select_fn is not None else selection_loss_for(model)
    x_train = np.asarray(x_train, dtype=float)
    y_train = np.asarray(y_train, dtype=float)
    x_val = np.asarray(x_val, dtype=float)
    y_val = np.asarray(y_val, dtype=float)
    n = len(x_train)
    history = TrainingLog()
    best, best_val, stale = model.copy(), math.inf, 0
    for epoch in range(epochs):
        order = rng.permutation(n)
        running = 0.0
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            try:
                loss, grads = loss_fn(model, x_train[idx], y_train[idx])
            except MDNOverflowError as exc:
                raise MDNOverflowError(f"epoch {epoch}: {exc}") from exc
            adam.update(model.params, grads, trainable)
            running += loss * len(idx)
        val = evaluate_loss(model, select_fn, x_val, y_val)
        history.train_loss.append(running / n)
        history.val_loss.append(evaluate_loss(model, loss_fn, x_val, y_val))
        history.val_select.append(val)
        log.debug("epoch %d train %.5f val %.5f select %.5f", epoch, running / n, history.val_loss[-1], val)
        if val < best_val:
            best, best_val, stale = model.copy(), val, 0
            history.best_epoch = epoch
        else:
            stale += 1
            if patience is not None and stale >= patience:
                break
    return best, history
