"""Threshold rule, logistic regression and a one-hidden-layer perceptron.

Both trainable models standardize their inputs with a normalizer fitted on
the training rows only and score with a 0.5 probability cutoff (ties are
positive).
"""

from __future__ import annotations

import json
import math
from collections.abc import Sequence
from dataclasses import asdict, dataclass, field

import numpy as np

from .features import FEATURE_NAMES, LOGISTIC_FEATURES, WINDOW_DAYS, FeatureVector, NormalizationParams, fit_normalizer_array

CUTOFF = 0.5


class TrainingDivergenceError(RuntimeError):
    """Raised when a training loss becomes non-finite."""


class SingleClassError(ValueError):
    """Raised when training labels contain only one class."""


def sigmoid(z):
    z = np.asarray(z, dtype=float)
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def _bce(z: np.ndarray, y: np.ndarray) -> float:
    # mean of -[y log p + (1-y) log(1-p)] with p = sigmoid(z), written stably
    return float(np.mean(np.logaddexp(0.0, z) - y * z))


def _check_labels(y: np.ndarray) -> np.ndarray:
    y = np.asarray(y, dtype=float).ravel()
    if not (np.any(y == 1.0) and np.any(y == 0.0)):
        raise SingleClassError("training labels must contain both classes")
    return y


# --------------------------------------------------------------------------
# threshold rule


@dataclass(frozen=True)
class ThresholdRule:
    min_stays: int = 67
    window_days: int = WINDOW_DAYS

    def __post_init__(self) -> None:
        if not 0 <= self.min_stays <= self.window_days:
            raise ValueError("need 0 <= min_stays <= window_days")

    def predict_array(self, sleep: np.ndarray) -> np.ndarray:
        return np.asarray(sleep) >= self.min_stays


def threshold_predict(rule: ThresholdRule, f: FeatureVector) -> bool:
    return f.sleep >= rule.min_stays


# --------------------------------------------------------------------------
# training configuration


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    max_epochs: int = 500
    batch_size: int = 32
    tolerance: float = 1e-4
    adaptive: bool = True
    seed: int = 0
    lr_divisor: float = 5.0
    patience: int = 2
    min_learning_rate: float = 1e-6
    lr_growth: float = 1.1  # logistic only: step growth after an accepted step

    def __post_init__(self) -> None:
        if self.learning_rate <= 0 or self.batch_size < 1 or self.max_epochs < 0:
            raise ValueError("learning_rate and batch_size must be positive, max_epochs >= 0")
        if self.tolerance < 0 or self.lr_divisor <= 1 or self.patience < 1:
            raise ValueError("invalid tolerance / lr_divisor / patience")

    @classmethod
    def from_dict(cls, doc: dict) -> TrainConfig:
        known = set(cls.__dataclass_fields__)
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**doc)


# --------------------------------------------------------------------------
# logistic regression


@dataclass(frozen=True)
class LogisticModel:
    weights: np.ndarray
    bias: float
    normalizer: NormalizationParams
    config: TrainConfig = field(default_factory=TrainConfig)
    loss_history: tuple[float, ...] = ()

    def predict_proba(self, x_raw: np.ndarray) -> np.ndarray:
        z = self.normalizer.apply(x_raw) @ self.weights + self.bias
        return sigmoid(z)

    def predict(self, x_raw: np.ndarray) -> np.ndarray:
        return self.predict_proba(x_raw) >= CUTOFF

    def to_dict(self) -> dict:
        return {
            "model": "logistic",
            "architecture": {"inputs": list(self.normalizer.names), "outputs": 1, "activation": "sigmoid"},
            "weights": self.weights.tolist(),
            "bias": float(self.bias),
            "normalizer": self.normalizer.to_dict(),
            "config": asdict(self.config),
            "seed": self.config.seed,
            "loss_history": list(self.loss_history),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> LogisticModel:
        return cls(
            np.asarray(doc["weights"], dtype=float),
            float(doc["bias"]),
            NormalizationParams.from_dict(doc["normalizer"]),
            TrainConfig.from_dict(doc["config"]),
            tuple(doc.get("loss_history", ())),
        )


def logistic_loss_grad(w: np.ndarray, b: float, x: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray, float]:
    """Mean binary cross-entropy of ``sigmoid(x @ w + b)`` and its gradient."""
    z = x @ w + b
    r = (sigmoid(z) - y) / len(y)
    return _bce(z, y), x.T @ r, float(r.sum())


def train_logistic(
    x_raw: np.ndarray,
    y: np.ndarray,
    cfg: TrainConfig = TrainConfig(),
    names: Sequence[str] = LOGISTIC_FEATURES,
) -> LogisticModel:
    """Unregularized logistic regression by full-batch gradient descent.

    A step that would raise the loss is rejected and the rate divided by
    ``cfg.lr_divisor``; with ``cfg.adaptive`` an accepted step grows the rate
    by ``cfg.lr_growth``. Stops when the gradient norm drops below
    ``cfg.tolerance``, the rate falls under ``cfg.min_learning_rate`` or the
    epoch budget runs out.
    """
    y = _check_labels(y)
    norm = fit_normalizer_array(x_raw, names)
    with np.errstate(over="ignore", invalid="ignore"):
        return _fit_logistic(norm.apply(x_raw), y, cfg, norm)


def _fit_logistic(x: np.ndarray, y: np.ndarray, cfg: TrainConfig, norm: NormalizationParams) -> LogisticModel:
    w = np.zeros(x.shape[1])
    b = 0.0
    lr = cfg.learning_rate
    loss, gw, gb = logistic_loss_grad(w, b, x, y)
    history = [loss]
    for _ in range(cfg.max_epochs):
        if math.sqrt(float(gw @ gw) + gb * gb) < cfg.tolerance:
            break
        w_new = w - lr * gw
        b_new = b - lr * gb
        new_loss, new_gw, new_gb = logistic_loss_grad(w_new, b_new, x, y)
        if not math.isfinite(new_loss):
            raise TrainingDivergenceError(
                f"logistic loss became non-finite at learning rate {lr:g}; try a lower learning rate"
            )
        if new_loss <= loss:
            w, b, loss, gw, gb = w_new, b_new, new_loss, new_gw, new_gb
            history.append(loss)
            if cfg.adaptive:
                lr *= cfg.lr_growth
        else:
            lr /= cfg.lr_divisor
            if lr < cfg.min_learning_rate:
                break
    return LogisticModel(w, b, norm, cfg, tuple(history))


def logistic_predict(m: LogisticModel, f: FeatureVector) -> tuple[float, bool]:
    p = float(m.predict_proba(f.as_array(m.normalizer.names)[None, :])[0])
    return p, p >= CUTOFF


# --------------------------------------------------------------------------
# multilayer perceptron


@dataclass(frozen=True)
class MlpParams:
    w_hidden: np.ndarray  # (n_inputs, n_hidden)
    b_hidden: np.ndarray  # (n_hidden,)
    w_out: np.ndarray  # (n_hidden,)
    b_out: float

    def copy(self) -> MlpParams:
        return MlpParams(self.w_hidden.copy(), self.b_hidden.copy(), self.w_out.copy(), float(self.b_out))


def init_mlp(n_inputs: int, n_hidden: int, rng: np.random.Generator) -> MlpParams:
    lim1 = math.sqrt(6.0 / (n_inputs + n_hidden))
    lim2 = math.sqrt(6.0 / (n_hidden + 1))
    return MlpParams(
        rng.uniform(-lim1, lim1, size=(n_inputs, n_hidden)),
        np.zeros(n_hidden),
        rng.uniform(-lim2, lim2, size=n_hidden),
        0.0,
    )


def mlp_forward(p: MlpParams, x: np.ndarray) -> np.ndarray:
    """Output logits for the rows of ``x``."""
    h = np.maximum(x @ p.w_hidden + p.b_hidden, 0.0)
    return h @ p.w_out + p.b_out


def mlp_loss(p: MlpParams, x: np.ndarray, y: np.ndarray, l2: float, n_total: int) -> float:
    penalty = l2 * (np.sum(p.w_hidden**2) + np.sum(p.w_out**2)) / (2.0 * n_total)
    return _bce(mlp_forward(p, x), y) + float(penalty)


def mlp_loss_grad(
    p: MlpParams, x: np.ndarray, y: np.ndarray, l2: float, n_total: int
) -> tuple[float, MlpParams]:
    """Regularized loss on ``(x, y)`` and its gradient by backpropagation.

    The L2 term covers weights only and is scaled by ``1 / (2 * n_total)``;
    the cross-entropy is averaged over the rows given.
    """
    pre = x @ p.w_hidden + p.b_hidden
    h = np.maximum(pre, 0.0)
    z = h @ p.w_out + p.b_out
    dz = (sigmoid(z) - y) / len(y)
    scale = l2 / n_total
    g_w_out = h.T @ dz + scale * p.w_out
    g_b_out = float(dz.sum())
    dpre = np.outer(dz, p.w_out)
    dpre[pre <= 0.0] = 0.0
    g_w_hidden = x.T @ dpre + scale * p.w_hidden
    g_b_hidden = dpre.sum(axis=0)
    loss = _bce(z, y) + 0.5 * scale * float(np.sum(p.w_hidden**2) + np.sum(p.w_out**2))
    return loss, MlpParams(g_w_hidden, g_b_hidden, g_w_out, g_b_out)


@dataclass(frozen=True)
class MlpModel:
    params: MlpParams
    normalizer: NormalizationParams
    l2_penalty: float = 0.05
    config: TrainConfig = field(default_factory=TrainConfig)
    loss_history: tuple[float, ...] = ()
    final_learning_rate: float | None = None

    @property
    def hidden_units(self) -> int:
        return self.params.w_hidden.shape[1]

    def predict_proba(self, x_raw: np.ndarray) -> np.ndarray:
        return sigmoid(mlp_forward(self.params, self.normalizer.apply(x_raw)))

    def predict(self, x_raw: np.ndarray) -> np.ndarray:
        return self.predict_proba(x_raw) >= CUTOFF

    def to_dict(self) -> dict:
        p = self.params
        return {
            "model": "mlp",
            "architecture": {
                "inputs": list(self.normalizer.names),
                "hidden_units": self.hidden_units,
                "hidden_activation": "relu",
                "output_activation": "sigmoid",
            },
            "w_hidden": p.w_hidden.ravel(order="C").tolist(),
            "b_hidden": p.b_hidden.tolist(),
            "w_out": p.w_out.tolist(),
            "b_out": float(p.b_out),
            "l2_penalty": self.l2_penalty,
            "normalizer": self.normalizer.to_dict(),
            "config": asdict(self.config),
            "seed": self.config.seed,
            "loss_history": list(self.loss_history),
            "final_learning_rate": self.final_learning_rate,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> MlpModel:
        n_in = len(doc["architecture"]["inputs"])
        n_hidden = doc["architecture"]["hidden_units"]
        params = MlpParams(
            np.asarray(doc["w_hidden"], dtype=float).reshape(n_in, n_hidden),
            np.asarray(doc["b_hidden"], dtype=float),
            np.asarray(doc["w_out"], dtype=float),
            float(doc["b_out"]),
        )
        return cls(
            params,
            NormalizationParams.from_dict(doc["normalizer"]),
            doc["l2_penalty"],
            TrainConfig.from_dict(doc["config"]),
            tuple(doc.get("loss_history", ())),
            doc.get("final_learning_rate"),
        )


def train_mlp_normalized(
    x: np.ndarray,
    y: np.ndarray,
    cfg: TrainConfig,
    l2_penalty: float = 0.05,
    hidden_units: int = 100,
) -> tuple[MlpParams, list[float], float]:
    """Minibatch SGD on already-standardized inputs.

    Returns the parameters, per-epoch full training loss and the final rate.
    """
    y = _check_labels(y)
    with np.errstate(over="ignore", invalid="ignore"):
        return _sgd(x, y, cfg, l2_penalty, hidden_units)


def _sgd(x, y, cfg, l2_penalty, hidden_units):
    n = len(y)
    rng = np.random.default_rng(cfg.seed)
    p = init_mlp(x.shape[1], hidden_units, rng)
    w1, b1, w2, b2 = p.w_hidden, p.b_hidden, p.w_out, p.b_out
    lr = cfg.learning_rate
    history: list[float] = []
    best = math.inf
    stale = 0
    for _ in range(cfg.max_epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            _, g = mlp_loss_grad(MlpParams(w1, b1, w2, b2), x[idx], y[idx], l2_penalty, n)
            w1 = w1 - lr * g.w_hidden
            b1 = b1 - lr * g.b_hidden
            w2 = w2 - lr * g.w_out
            b2 = b2 - lr * g.b_out
        loss = mlp_loss(MlpParams(w1, b1, w2, b2), x, y, l2_penalty, n)
        if not math.isfinite(loss):
            raise TrainingDivergenceError(
                f"MLP loss became non-finite at learning rate {lr:g}; try a lower learning rate"
            )
        history.append(loss)
        if loss > best - cfg.tolerance:
            stale += 1
        else:
            stale = 0
        best = min(best, loss)
        if stale >= cfg.patience:
            if not cfg.adaptive:
                break
            lr /= cfg.lr_divisor
            stale = 0
            if lr < cfg.min_learning_rate:
                break
    return MlpParams(w1, b1, w2, float(b2)), history, lr


def train_mlp(
    x_raw: np.ndarray,
    y: np.ndarray,
    cfg: TrainConfig = TrainConfig(),
    l2_penalty: float = 0.05,
    hidden_units: int = 100,
    names: Sequence[str] = FEATURE_NAMES,
) -> MlpModel:
    """Fit the normalizer on ``x_raw`` and train a ``len(names) -> hidden -> 1`` network."""
    norm = fit_normalizer_array(x_raw, names)
    params, history, lr = train_mlp_normalized(norm.apply(x_raw), y, cfg, l2_penalty, hidden_units)
    return MlpModel(params, norm, l2_penalty, cfg, tuple(history), lr)


def mlp_predict(m: MlpModel, f: FeatureVector) -> tuple[float, bool]:
    p = float(m.predict_proba(f.as_array(m.normalizer.names)[None, :])[0])
    return p, p >= CUTOFF


def model_to_json(model: LogisticModel | MlpModel) -> str:
    return json.dumps(model.to_dict(), sort_keys=True, indent=1)


def model_from_json(text: str) -> LogisticModel | MlpModel:
    doc = json.loads(text)
    kind = doc.get("model")
    if kind == "logistic":
        return LogisticModel.from_dict(doc)
    if kind == "mlp":
        return MlpModel.from_dict(doc)
    raise ValueError(f"unknown model kind {kind!r}")
