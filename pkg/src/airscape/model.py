"""The prediction network and its training loop, built on bare numpy.

Architecture: z-scored inputs through two ReLU hidden layers into a linear
4-wide output head, one unit per pollutant. The loss is mean squared
logarithmic error over the (row, pollutant) pairs that actually carry a
measurement; raw outputs are clamped at zero inside the loss (and in
:func:`predict`) because concentrations cannot be negative, and the clamp
passes no gradient where it binds.

Gradients are exact reverse-mode derivatives written out by hand; the
optimizer is Adam with the usual bias correction. Everything is
deterministic given the data and the seed: He-uniform initialisation,
per-epoch shuffles and batch order all come from one seeded generator.

Transfer fitting re-trains only the output head on a new dataset while the
hidden layers and input normalisation stay bit-identical, which is how a
model trained on data-rich regions gets specialised to a sparse one.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MODEL_FORMAT = "airscape-model"
MODEL_VERSION = 1

PARAM_NAMES = ("W1", "b1", "W2", "b2", "W3", "b3")
HEAD_PARAMS = ("W3", "b3")


@dataclass
class TrainConfig:
    learning_rate: float = 0.001
    batch_size: int = 1024
    epochs: int = 30
    seed: int = 0
    n1: int = 64
    n2: int = 32

    def __post_init__(self):
        if min(self.learning_rate, self.batch_size, self.epochs,
               self.n1, self.n2) <= 0:
            raise ValueError("all training settings must be positive")


@dataclass
class MLPModel:
    feature_names: tuple
    preset: str
    norm_mean: np.ndarray
    norm_std: np.ndarray
    params: dict                      # W1 (F,n1), b1, W2 (n1,n2), b2, W3 (n2,4), b3
    impute_means: np.ndarray = None   # gap-filling values, frozen like the norms

    def __post_init__(self):
        f = len(self.feature_names)
        n1 = self.params["W1"].shape[1]
        n2 = self.params["W2"].shape[1]
        expected = {
            "W1": (f, n1), "b1": (n1,),
            "W2": (n1, n2), "b2": (n2,),
            "W3": (n2, 4), "b3": (4,),
        }
        for name, shape in expected.items():
            if self.params[name].shape != shape:
                raise ValueError(f"{name} has shape {self.params[name].shape}, "
                                 f"expected {shape}")
        if self.norm_mean.shape != (f,) or self.norm_std.shape != (f,):
            raise ValueError("normalisation statistics do not match the features")
        if np.any(self.norm_std <= 0):
            raise ValueError("normalisation stds must be positive")
        if self.impute_means is not None and self.impute_means.shape != (f,):
            raise ValueError("imputation means do not match the features")

    def imputation_values(self) -> np.ndarray:
        """What to substitute for missing features; norm means by default."""
        return self.norm_mean if self.impute_means is None else self.impute_means

    def copy(self) -> "MLPModel":
        return MLPModel(
            self.feature_names, self.preset, self.norm_mean.copy(),
            self.norm_std.copy(), {k: v.copy() for k, v in self.params.items()},
            None if self.impute_means is None else self.impute_means.copy(),
        )

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(json.dumps(self.feature_names).encode())
        h.update(self.preset.encode())
        for arr in (self.norm_mean, self.norm_std):
            h.update(np.ascontiguousarray(arr).tobytes())
        if self.impute_means is not None:
            h.update(np.ascontiguousarray(self.impute_means).tobytes())
        for name in PARAM_NAMES:
            h.update(np.ascontiguousarray(self.params[name]).tobytes())
        return h.hexdigest()[:16]


def _normalize(model: MLPModel, X: np.ndarray) -> np.ndarray:
    return (X - model.norm_mean) / model.norm_std


def forward(model: MLPModel, X: np.ndarray) -> np.ndarray:
    """Raw (unclamped) outputs, shape (n, 4)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != len(model.feature_names):
        raise ValueError(
            f"feature dimension {X.shape[1]} does not match model "
            f"({len(model.feature_names)})"
        )
    p = model.params
    h1 = np.maximum(_normalize(model, X) @ p["W1"] + p["b1"], 0.0)
    h2 = np.maximum(h1 @ p["W2"] + p["b2"], 0.0)
    return h2 @ p["W3"] + p["b3"]


def predict(model: MLPModel, X: np.ndarray) -> np.ndarray:
    """Concentrations in ug/m3: forward pass clamped at zero."""
    return np.maximum(forward(model, X), 0.0)


def _drop_empty_rows(outputs, targets):
    # compacting keeps reductions bitwise independent of all-NA rows, which
    # plain zero-masking would not (numpy's pairwise sums regroup with size)
    keep = np.isfinite(targets).any(axis=1)
    if not keep.all():
        return outputs[keep], targets[keep]
    return outputs, targets


def msle_loss(outputs: np.ndarray, targets: np.ndarray) -> float:
    """Mean over present (row, pollutant) pairs of squared log1p error.

    Targets use NaN for "not measured"; rows that are entirely missing
    contribute nothing, so appending them changes the value by exactly 0.
    """
    outputs = np.atleast_2d(outputs)
    targets = np.atleast_2d(targets)
    outputs, targets = _drop_empty_rows(outputs, targets)
    mask = np.isfinite(targets)
    n = int(mask.sum())
    if n == 0:
        raise ValueError("no present targets in the batch")
    clamped = np.maximum(outputs, 0.0)
    err = np.where(mask, np.log1p(clamped) - np.log1p(np.where(mask, targets, 0.0)), 0.0)
    return float((err * err).sum() / n)


def _loss_and_output_grad(outputs, targets):
    mask = np.isfinite(targets)
    n = int(mask.sum())
    if n == 0:
        raise ValueError("no present targets in the batch")
    clamped = np.maximum(outputs, 0.0)
    err = np.where(mask, np.log1p(clamped) - np.log1p(np.where(mask, targets, 0.0)), 0.0)
    loss = float((err * err).sum() / n)
    # d loss / d raw output; the clamp blocks gradient where raw < 0
    grad = np.where(mask & (outputs >= 0.0), 2.0 * err / (1.0 + clamped) / n, 0.0)
    return loss, grad, n


def gradient(model: MLPModel, X: np.ndarray, targets: np.ndarray):
    """Loss and exact parameter gradients for one batch."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    X, targets = _drop_empty_rows(X, targets)
    p = model.params
    xn = _normalize(model, X)
    z1 = xn @ p["W1"] + p["b1"]
    a1 = np.maximum(z1, 0.0)
    z2 = a1 @ p["W2"] + p["b2"]
    a2 = np.maximum(z2, 0.0)
    raw = a2 @ p["W3"] + p["b3"]

    loss, d_raw, _ = _loss_and_output_grad(raw, targets)
    grads = {}
    grads["W3"] = a2.T @ d_raw
    grads["b3"] = d_raw.sum(axis=0)
    d_a2 = d_raw @ p["W3"].T
    d_z2 = d_a2 * (z2 > 0.0)
    grads["W2"] = a1.T @ d_z2
    grads["b2"] = d_z2.sum(axis=0)
    d_a1 = d_z2 @ p["W2"].T
    d_z1 = d_a1 * (z1 > 0.0)
    grads["W1"] = xn.T @ d_z1
    grads["b1"] = d_z1.sum(axis=0)
    return loss, grads


@dataclass
class AdamState:
    """First/second moment accumulators; hyperparameters are the standard
    defaults, only the learning rate is an experiment knob."""

    m: dict
    v: dict
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: dict, names=PARAM_NAMES) -> "AdamState":
        return cls(
            m={k: np.zeros_like(params[k]) for k in names},
            v={k: np.zeros_like(params[k]) for k in names},
        )


def adam_step(params: dict, grads: dict, state: AdamState, lr: float) -> None:
    """One in-place Adam update over the parameters tracked by the state."""
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1 ** state.step
    corr2 = 1.0 - b2 ** state.step
    for k in state.m:
        g = grads[k]
        if g.shape != params[k].shape:
            raise ValueError(f"gradient shape mismatch for {k}")
        state.m[k] = b1 * state.m[k] + (1 - b1) * g
        state.v[k] = b2 * state.v[k] + (1 - b2) * (g * g)
        m_hat = state.m[k] / corr1
        v_hat = state.v[k] / corr2
        params[k] -= lr * m_hat / (np.sqrt(v_hat) + state.eps)


def _he_uniform(rng, fan_in, shape):
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, shape)


def _init_model(feature_names, preset, norm_mean, norm_std, targets, config):
    rng = np.random.default_rng(config.seed)
    f, n1, n2 = len(feature_names), config.n1, config.n2
    params = {
        "W1": _he_uniform(rng, f, (f, n1)),
        "b1": np.zeros(n1),
        "W2": _he_uniform(rng, n1, (n1, n2)),
        "b2": np.zeros(n2),
        "W3": _he_uniform(rng, n2, (n2, 4)),
        "b3": np.zeros(4),
    }
    # start each output at the mean log-level of its pollutant so no head
    # unit begins in the clamped region
    for j in range(4):
        col = targets[:, j]
        ok = np.isfinite(col)
        if ok.any():
            params["b3"][j] = np.expm1(np.log1p(col[ok]).mean())
    return MLPModel(tuple(feature_names), preset, norm_mean, norm_std, params), rng


def _epoch_batches(rng, n, batch_size):
    perm = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield perm[start:start + batch_size]


def train(features: np.ndarray, targets: np.ndarray, feature_names,
          config: TrainConfig, preset: str = "full", impute_means=None):
    """Fit a fresh model; returns (model, per-epoch training loss trace)."""
    X = np.asarray(features, dtype=float)
    Y = np.asarray(targets, dtype=float)
    if X.ndim != 2 or len(X) == 0:
        raise ValueError("training needs a non-empty (n, features) matrix")
    if not np.isfinite(X).all():
        raise ValueError("features must be imputed before training")

    norm_mean = X.mean(axis=0)
    norm_std = X.std(axis=0)
    norm_std[~(norm_std > 1e-12)] = 1.0

    model, rng = _init_model(feature_names, preset, norm_mean, norm_std, Y, config)
    if impute_means is not None:
        model.impute_means = np.asarray(impute_means, dtype=float)
    state = AdamState.for_params(model.params)
    trace = []
    for _ in range(config.epochs):
        sq_sum = 0.0
        count = 0
        for idx in _epoch_batches(rng, len(X), config.batch_size):
            loss, grads = gradient(model, X[idx], Y[idx])
            n_present = int(np.isfinite(Y[idx]).sum())
            sq_sum += loss * n_present
            count += n_present
            adam_step(model.params, grads, state, config.learning_rate)
        trace.append(sq_sum / max(count, 1))
    return model, trace


def transfer_fit(global_model: MLPModel, features: np.ndarray,
                 targets: np.ndarray, config: TrainConfig, impute_means=None):
    """Re-train only the output head on a regional dataset.

    Hidden layers and normalisation are carried over bit-exact; with zero
    epochs the result equals the global model.
    """
    X = np.asarray(features, dtype=float)
    Y = np.asarray(targets, dtype=float)
    if X.ndim != 2 or X.shape[1] != len(global_model.feature_names):
        raise ValueError("regional features do not match the global model layout")
    model = global_model.copy()
    if impute_means is not None:
        model.impute_means = np.asarray(impute_means, dtype=float)
    state = AdamState.for_params(model.params, names=HEAD_PARAMS)
    rng = np.random.default_rng(config.seed)
    trace = []
    for _ in range(config.epochs):
        sq_sum = 0.0
        count = 0
        for idx in _epoch_batches(rng, len(X), config.batch_size):
            loss, grads = gradient(model, X[idx], Y[idx])
            n_present = int(np.isfinite(Y[idx]).sum())
            sq_sum += loss * n_present
            count += n_present
            adam_step(model.params, {k: grads[k] for k in HEAD_PARAMS}, state,
                      config.learning_rate)
        trace.append(sq_sum / max(count, 1))
    return model, trace


# ---------------------------------------------------------------------------
# persistence: a JSON container with exact float round-trip
# ---------------------------------------------------------------------------

def save_model(model: MLPModel, path) -> None:
    doc = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "preset": model.preset,
        "feature_names": list(model.feature_names),
        "norm_mean": model.norm_mean.tolist(),
        "norm_std": model.norm_std.tolist(),
        "impute_means": (None if model.impute_means is None
                         else model.impute_means.tolist()),
        "params": {k: model.params[k].tolist() for k in PARAM_NAMES},
        "fingerprint": model.fingerprint(),
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True) + "\n", encoding="utf-8")


def load_model(path) -> MLPModel:
    with open(path, "r", encoding="utf-8") as f:
        doc = json.load(f)
    if doc.get("format") != MODEL_FORMAT:
        raise ValueError(f"{path}: not a model file")
    if doc.get("version") != MODEL_VERSION:
        raise ValueError(
            f"{path}: unsupported model version {doc.get('version')!r}"
        )
    impute = doc.get("impute_means")
    model = MLPModel(
        feature_names=tuple(doc["feature_names"]),
        preset=doc["preset"],
        norm_mean=np.asarray(doc["norm_mean"], dtype=float),
        norm_std=np.asarray(doc["norm_std"], dtype=float),
        params={k: np.asarray(v, dtype=float) for k, v in doc["params"].items()},
        impute_means=None if impute is None else np.asarray(impute, dtype=float),
    )
    if doc.get("fingerprint") != model.fingerprint():
        raise ValueError(f"{path}: fingerprint mismatch, file corrupted")
    return model
