"""
Stacked GRU classifier written against numpy.

Cell (weights act on the concatenation [h_prev, x]):
    r  = sigmoid(W_r [h_prev, x] + b_r)
    z  = sigmoid(W_z [h_prev, x] + b_z)
    h~ = tanh(W_h [r * h_prev, x] + b_h)
    h  = z * h_prev + (1 - z) * h~

z gates retention of the previous state. The last hidden state of the top
layer feeds a dense softmax head. Everything runs in float64.
"""
import hashlib
import json
import logging
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Deque, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from src.errors import DataError, SchemaMismatchError
from src.fault_injection import BIAS_TYPES, BiasType
from src.features import make_windows
from src.metrics import detection_f1

logger = logging.getLogger(__name__)

MODEL_VERSION = "grad-gru/1"
GATES = ("W_r", "W_z", "W_h", "b_r", "b_z", "b_h")


def sigmoid(a: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * a))


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def schema_hash(feature_names: Sequence[str], window: int) -> str:
    payload = json.dumps({"features": list(feature_names), "window": int(window)}, sort_keys=True)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


@dataclass
class GruLayerWeights:
    W_r: np.ndarray
    W_z: np.ndarray
    W_h: np.ndarray
    b_r: np.ndarray
    b_z: np.ndarray
    b_h: np.ndarray

    def __post_init__(self):
        hidden = self.b_r.shape[0]
        cols = self.W_r.shape[1]
        for name in ("W_r", "W_z", "W_h"):
            if getattr(self, name).shape != (hidden, cols):
                raise ValueError(f"{name} has shape {getattr(self, name).shape}, expected {(hidden, cols)}")
        for name in ("b_r", "b_z", "b_h"):
            if getattr(self, name).shape != (hidden,):
                raise ValueError(f"{name} has shape {getattr(self, name).shape}, expected {(hidden,)}")
        if cols <= hidden:
            raise ValueError("Weight matrices must cover [h_prev, x]")

    @property
    def hidden(self) -> int:
        return int(self.b_r.shape[0])

    @property
    def input_dim(self) -> int:
        return int(self.W_r.shape[1] - self.hidden)


def gru_cell(x: np.ndarray, h_prev: np.ndarray, w: GruLayerWeights) -> np.ndarray:
    """One step for a single vector or a batch of row vectors"""
    h, _ = _cell_forward(np.asarray(x, dtype=np.float64), np.asarray(h_prev, dtype=np.float64), w)
    return h


def _cell_forward(x: np.ndarray, h_prev: np.ndarray, w: GruLayerWeights) -> Tuple[np.ndarray, Tuple]:
    if x.shape[-1] != w.input_dim or h_prev.shape[-1] != w.hidden:
        raise ValueError(
            f"Cell expects input {w.input_dim} / hidden {w.hidden}, got {x.shape[-1]} / {h_prev.shape[-1]}"
        )
    c = np.concatenate([h_prev, x], axis=-1)
    r = sigmoid(c @ w.W_r.T + w.b_r)
    z = sigmoid(c @ w.W_z.T + w.b_z)
    c_reset = np.concatenate([r * h_prev, x], axis=-1)
    h_tilde = np.tanh(c_reset @ w.W_h.T + w.b_h)
    h = z * h_prev + (1.0 - z) * h_tilde
    return h, (c, c_reset, r, z, h_tilde, h_prev)


def _layer_forward(X: np.ndarray, w: GruLayerWeights) -> Tuple[np.ndarray, List[Tuple]]:
    """X: (batch, steps, input) -> hidden states (batch, steps, hidden)"""
    batch, steps, _ = X.shape
    h = np.zeros((batch, w.hidden))
    states = np.empty((batch, steps, w.hidden))
    caches = []
    for t in range(steps):
        h, cache = _cell_forward(X[:, t], h, w)
        states[:, t] = h
        caches.append(cache)
    return states, caches


def _layer_backward(
    dH: np.ndarray, caches: List[Tuple], w: GruLayerWeights
) -> Tuple[np.ndarray, Dict[str, np.ndarray]]:
    """Backpropagate through time; dH holds the loss gradient w.r.t. every output state"""
    H = w.hidden
    grads = {name: np.zeros_like(getattr(w, name)) for name in GATES}
    batch, steps, _ = dH.shape
    dX = np.empty((batch, steps, w.input_dim))
    dh_next = np.zeros((batch, H))

    for t in reversed(range(steps)):
        c, c_reset, r, z, h_tilde, h_prev = caches[t]
        dh = dH[:, t] + dh_next

        dz = dh * (h_prev - h_tilde)
        da_h = dh * (1.0 - z) * (1.0 - h_tilde * h_tilde)
        dh_prev = dh * z

        grads["W_h"] += da_h.T @ c_reset
        grads["b_h"] += da_h.sum(axis=0)
        dc_reset = da_h @ w.W_h
        dx = dc_reset[:, H:].copy()
        dh_prev += dc_reset[:, :H] * r
        dr = dc_reset[:, :H] * h_prev

        da_z = dz * z * (1.0 - z)
        da_r = dr * r * (1.0 - r)
        grads["W_z"] += da_z.T @ c
        grads["b_z"] += da_z.sum(axis=0)
        grads["W_r"] += da_r.T @ c
        grads["b_r"] += da_r.sum(axis=0)

        dc = da_z @ w.W_z + da_r @ w.W_r
        dh_prev += dc[:, :H]
        dx += dc[:, H:]

        dX[:, t] = dx
        dh_next = dh_prev

    return dX, grads


@dataclass
class GruModel:
    """Stacked GRU layers plus a dense softmax head; params are keyed 'layer<i>.<gate>' and 'head.W'/'head.b'"""
    params: Dict[str, np.ndarray]
    window: int
    feature_names: Tuple[str, ...]
    classes: int = 2
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.feature_names = tuple(self.feature_names)
        dim = self.input_dim
        for layer in self.layers():
            if layer.input_dim != dim:
                raise ValueError(f"Layer input {layer.input_dim} does not match {dim}")
            dim = layer.hidden
        if self.params["head.W"].shape != (self.classes, dim) or self.params["head.b"].shape != (self.classes,):
            raise ValueError("Head dimensions do not match the top layer")
        if self.window < 1:
            raise ValueError("Window must be positive")

    @classmethod
    def initialize(
        cls,
        input_dim: int,
        window: int,
        hidden: Sequence[int] = (32, 16),
        classes: int = 2,
        rng: Optional[np.random.Generator] = None,
        feature_names: Optional[Sequence[str]] = None,
    ) -> "GruModel":
        """Glorot-uniform weights, zero biases"""
        rng = rng or np.random.default_rng(0)

        def glorot(fan_out: int, fan_in: int) -> np.ndarray:
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            return rng.uniform(-limit, limit, size=(fan_out, fan_in))

        params: Dict[str, np.ndarray] = {}
        dim = input_dim
        for i, units in enumerate(hidden, 1):
            for gate in ("W_r", "W_z", "W_h"):
                params[f"layer{i}.{gate}"] = glorot(units, units + dim)
            for gate in ("b_r", "b_z", "b_h"):
                params[f"layer{i}.{gate}"] = np.zeros(units)
            dim = units
        params["head.W"] = glorot(classes, dim)
        params["head.b"] = np.zeros(classes)

        names = tuple(feature_names) if feature_names else tuple(f"f{i}" for i in range(input_dim))
        if len(names) != input_dim:
            raise ValueError("feature_names length does not match input_dim")
        return cls(params=params, window=window, feature_names=names, classes=classes)

    @property
    def depth(self) -> int:
        return sum(1 for key in self.params if key.endswith(".b_r"))

    @property
    def input_dim(self) -> int:
        return len(self.feature_names)

    @property
    def hidden_sizes(self) -> Tuple[int, ...]:
        return tuple(layer.hidden for layer in self.layers())

    @property
    def schema_hash(self) -> str:
        return schema_hash(self.feature_names, self.window)

    def layer(self, index: int) -> GruLayerWeights:
        """Weights of layer `index` (1-based) as views into params"""
        return GruLayerWeights(**{gate: self.params[f"layer{index}.{gate}"] for gate in GATES})

    def layers(self) -> List[GruLayerWeights]:
        return [self.layer(i) for i in range(1, self.depth + 1)]

    def copy(self) -> "GruModel":
        return GruModel(
            params={k: v.copy() for k, v in self.params.items()},
            window=self.window,
            feature_names=self.feature_names,
            classes=self.classes,
            metadata=json.loads(json.dumps(self.metadata)),
        )


def _check_input(model: GruModel, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 2:
        X = X[None]
    if X.ndim != 3 or X.shape[1] != model.window or X.shape[2] != model.input_dim:
        raise ValueError(
            f"Expected windows of shape (*, {model.window}, {model.input_dim}), got {X.shape}"
        )
    return X


def _forward_logits(model: GruModel, X: np.ndarray) -> Tuple[np.ndarray, List, List[np.ndarray]]:
    caches, outputs = [], []
    states = X
    for layer in model.layers():
        states, layer_caches = _layer_forward(states, layer)
        caches.append(layer_caches)
        outputs.append(states)
    logits = states[:, -1] @ model.params["head.W"].T + model.params["head.b"]
    return logits, caches, outputs


def forward(model: GruModel, frames: np.ndarray) -> np.ndarray:
    """
    Class probabilities for one window (steps, features) or a batch
    (batch, steps, features). Hidden states start at zero.
    """
    X = np.asarray(frames, dtype=np.float64)
    single = X.ndim == 2
    logits, _, _ = _forward_logits(model, _check_input(model, X))
    probs = softmax(logits)
    return probs[0] if single else probs


def predict_proba(model: GruModel, X: np.ndarray, batch_size: int = 4096) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if len(X) == 0:
        return np.empty((0, model.classes))
    return np.concatenate([forward(model, X[i:i + batch_size]) for i in range(0, len(X), batch_size)])


def loss_and_grads(
    model: GruModel,
    X: np.ndarray,
    y: np.ndarray,
    class_weights: Optional[np.ndarray] = None,
) -> Tuple[float, Dict[str, np.ndarray]]:
    """
    Class-weighted cross-entropy (sum of weighted sample losses / batch size)
    and its gradient for every parameter, by full BPTT.
    """
    X = _check_input(model, X)
    y = np.asarray(y, dtype=np.int64)
    batch = X.shape[0]
    if batch == 0:
        raise ValueError("Empty batch")
    if y.shape != (batch,) or y.min() < 0 or y.max() >= model.classes:
        raise ValueError(f"Labels must be {batch} integers in [0, {model.classes})")
    weights = np.ones(model.classes) if class_weights is None else np.asarray(class_weights, dtype=np.float64)
    sample_w = weights[y]

    logits, caches, outputs = _forward_logits(model, X)
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    loss = float(-(sample_w * log_probs[np.arange(batch), y]).sum() / batch)

    dlogits = np.exp(log_probs)
    dlogits[np.arange(batch), y] -= 1.0
    dlogits *= (sample_w / batch)[:, None]

    top = outputs[-1][:, -1]
    grads: Dict[str, np.ndarray] = {
        "head.W": dlogits.T @ top,
        "head.b": dlogits.sum(axis=0),
    }
    layers = model.layers()
    dH = np.zeros_like(outputs[-1])
    dH[:, -1] = dlogits @ model.params["head.W"]
    for index in reversed(range(len(layers))):
        dH, layer_grads = _layer_backward(dH, caches[index], layers[index])
        for gate, g in layer_grads.items():
            grads[f"layer{index + 1}.{gate}"] = g
    return loss, grads


def clip_gradients(grads: Dict[str, np.ndarray], max_norm: float) -> float:
    """Scale gradients in place to global norm <= max_norm; returns the pre-clip norm"""
    norm = float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))
    if max_norm and norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


class Adam:
    def __init__(self, learning_rate: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if not learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m: Dict[str, np.ndarray] = {}
        self._v: Dict[str, np.ndarray] = {}

    def step(self, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray]) -> None:
        self.t += 1
        correction1 = 1.0 - self.beta1 ** self.t
        correction2 = 1.0 - self.beta2 ** self.t
        for name, g in grads.items():
            m = self._m.setdefault(name, np.zeros_like(g))
            v = self._v.setdefault(name, np.zeros_like(g))
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            params[name] -= self.learning_rate * (m / correction1) / (np.sqrt(v / correction2) + self.eps)


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 50
    batch_size: int = 64
    class_weights: Union[str, Sequence[float], None] = "balanced"
    clip_norm: float = 5.0
    seed: int = 0
    patience: int = 5
    hidden: Tuple[int, ...] = (32, 16)

    def __post_init__(self):
        self.hidden = tuple(self.hidden)
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")


def resolve_class_weights(setting: Union[str, Sequence[float], None], y: np.ndarray, classes: int) -> np.ndarray:
    if setting is None:
        return np.ones(classes)
    if isinstance(setting, str):
        if setting != "balanced":
            raise ValueError(f"Unknown class weighting '{setting}'")
        counts = np.bincount(y, minlength=classes).astype(np.float64)
        return len(y) / (classes * np.maximum(counts, 1.0))
    weights = np.asarray(setting, dtype=np.float64)
    if weights.shape != (classes,) or (weights <= 0).any():
        raise ValueError("class_weights must list one positive weight per class")
    return weights


def _full_loss(model: GruModel, X: np.ndarray, y: np.ndarray, weights: np.ndarray, chunk: int = 4096) -> float:
    probs = predict_proba(model, X, chunk)
    picked = np.clip(probs[np.arange(len(y)), y], 1e-300, None)
    return float(-(weights[y] * np.log(picked)).sum() / len(y))


def train(
    X: np.ndarray,
    y: np.ndarray,
    config: TrainConfig = TrainConfig(),
    X_val: Optional[np.ndarray] = None,
    y_val: Optional[np.ndarray] = None,
    feature_names: Optional[Sequence[str]] = None,
    classes: int = 2,
) -> GruModel:
    """
    Mini-batch Adam training with global-norm clipping and early stopping.

    The weights with the best validation loss (training loss when no
    validation set is given) are returned; the per-epoch history is kept in
    model.metadata["history"].
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 3 or len(X) != len(y) or len(X) == 0:
        raise DataError(f"Training windows {X.shape} and labels {y.shape} do not line up")
    if len(np.unique(y)) < 2:
        raise DataError("Training set contains a single class")
    has_val = X_val is not None and y_val is not None and len(y_val) > 0
    if has_val:
        X_val = np.asarray(X_val, dtype=np.float64)
        y_val = np.asarray(y_val, dtype=np.int64)

    rng = np.random.default_rng(config.seed)
    model = GruModel.initialize(
        X.shape[2], X.shape[1], config.hidden, classes, rng, feature_names
    )
    weights = resolve_class_weights(config.class_weights, y, classes)
    optimizer = Adam(config.learning_rate)

    history: List[Dict[str, float]] = []
    best_loss, best_params, best_epoch, stale = np.inf, None, 0, 0
    logger.info(
        "[Train] %d windows (%s), window %d, %d features, class weights %s",
        len(y), np.bincount(y, minlength=classes).tolist(), X.shape[1], X.shape[2], np.round(weights, 4).tolist(),
    )

    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(y))
        batch_losses = []
        for start in range(0, len(order), config.batch_size):
            idx = order[start:start + config.batch_size]
            loss, grads = loss_and_grads(model, X[idx], y[idx], weights)
            clip_gradients(grads, config.clip_norm)
            optimizer.step(model.params, grads)
            batch_losses.append(loss * len(idx))
        train_loss = float(np.sum(batch_losses) / len(y))

        record = {"epoch": epoch, "train_loss": train_loss, "val_loss": np.nan,
                  "val_f1_anomaly": np.nan, "val_f1_normal": np.nan}
        if has_val:
            record["val_loss"] = _full_loss(model, X_val, y_val, weights)
            pred = predict_proba(model, X_val).argmax(axis=1)
            record["val_f1_anomaly"], record["val_f1_normal"] = detection_f1(pred == 1, y_val == 1)
        history.append(record)

        criterion = record["val_loss"] if has_val else train_loss
        logger.info(
            "[Train] epoch %d: train %.5f, val %.5f, val F1 %.4f/%.4f",
            epoch, train_loss, record["val_loss"], record["val_f1_anomaly"], record["val_f1_normal"],
        )
        if criterion < best_loss:
            best_loss, best_epoch, stale = criterion, epoch, 0
            best_params = {k: v.copy() for k, v in model.params.items()}
        else:
            stale += 1
            if stale >= config.patience:
                logger.info("[Train] Early stop at epoch %d (best %d)", epoch, best_epoch)
                break

    if best_params is not None:
        model.params = best_params
    model.metadata = {
        "seed": config.seed,
        "learning_rate": config.learning_rate,
        "batch_size": config.batch_size,
        "epochs_run": len(history),
        "best_epoch": best_epoch,
        "clip_norm": config.clip_norm,
        "class_weights": weights.tolist(),
        "history": [{k: (None if isinstance(v, float) and np.isnan(v) else v) for k, v in r.items()} for r in history],
    }
    return model


def write_training_log(model: GruModel, path: Union[str, Path]) -> None:
    columns = ["epoch", "train_loss", "val_loss", "val_f1_anomaly", "val_f1_normal"]
    frame = pd.DataFrame(model.metadata.get("history", []), columns=columns)
    frame.to_csv(path, index=False, float_format="%.17g")


def save_model(model: GruModel, path: Union[str, Path]) -> None:
    """Self-describing .npz: little-endian float64 tensors plus a JSON header"""
    header = {
        "version": MODEL_VERSION,
        "byteorder": "little",
        "input_dim": model.input_dim,
        "hidden": list(model.hidden_sizes),
        "classes": model.classes,
        "window": model.window,
        "feature_names": list(model.feature_names),
        "schema_hash": model.schema_hash,
        "metadata": model.metadata,
    }
    arrays = {name: np.ascontiguousarray(value, dtype="<f8") for name, value in model.params.items()}
    with open(path, "wb") as f:
        np.savez(f, __header__=np.array(json.dumps(header, sort_keys=True)), **arrays)


def load_model(path: Union[str, Path]) -> GruModel:
    with np.load(path, allow_pickle=False) as archive:
        if "__header__" not in archive.files:
            raise DataError(f"{path}: not a model file (no header)")
        header = json.loads(str(archive["__header__"]))
        if header.get("version") != MODEL_VERSION:
            raise DataError(f"{path}: unsupported model version {header.get('version')!r}")
        params = {name: archive[name].astype(np.float64) for name in archive.files if name != "__header__"}

    model = GruModel(
        params=params,
        window=int(header["window"]),
        feature_names=tuple(header["feature_names"]),
        classes=int(header["classes"]),
        metadata=header.get("metadata", {}),
    )
    if model.schema_hash != header["schema_hash"]:
        raise SchemaMismatchError(f"{path}: schema hash does not match its feature names and window")
    return model


@dataclass
class PredictionBatch:
    """Per-frame detector output; bias codes index BIAS_TYPES"""
    detect: np.ndarray
    bias: np.ndarray
    probs: np.ndarray
    bias_calls: int = 0

    def bias_names(self) -> np.ndarray:
        return np.array([b.value for b in BIAS_TYPES], dtype=object)[self.bias]


NOISE_CODE = BIAS_TYPES.index(BiasType.NOISE)
JUMP_CODE = BIAS_TYPES.index(BiasType.JUMP)


def check_schema(detector: GruModel, bias_clf: Optional[GruModel]) -> None:
    if bias_clf is not None and bias_clf.schema_hash != detector.schema_hash:
        raise SchemaMismatchError("Detector and bias classifier disagree on feature schema or window")


def predict_stream(detector: GruModel, bias_clf: Optional[GruModel], frames: np.ndarray) -> PredictionBatch:
    """
    Label every frame with the window ending at it; frames before the first
    full window are normal. The bias classifier only sees flagged windows.
    """
    check_schema(detector, bias_clf)
    frames = np.asarray(frames, dtype=np.float64)
    m = len(frames)
    w = detector.window
    detect = np.zeros(m, dtype=bool)
    bias = np.zeros(m, dtype=np.int8)
    probs = np.tile([1.0, 0.0], (m, 1))
    if m < w:
        return PredictionBatch(detect, bias, probs)

    X, _ = make_windows(frames, None, w)
    window_probs = predict_proba(detector, X)
    probs[w - 1:] = window_probs
    flagged = window_probs.argmax(axis=1) == 1
    detect[w - 1:] = flagged

    calls = int(flagged.sum())
    bias[w - 1:][flagged] = JUMP_CODE
    if bias_clf is not None and calls:
        classes = predict_proba(bias_clf, X[flagged]).argmax(axis=1)
        bias[np.flatnonzero(flagged) + w - 1] = np.where(classes == 0, NOISE_CODE, JUMP_CODE)
    return PredictionBatch(detect, bias, probs, calls if bias_clf is not None else 0)


@dataclass(frozen=True)
class StepPrediction:
    detect: bool
    bias_type: BiasType
    probs: Tuple[float, float]


class _LayerStepper:
    """One layer's cell with r and z stacked into a single product"""

    def __init__(self, w: GruLayerWeights):
        self.units = w.hidden
        self.W_rz = np.vstack([w.W_r, w.W_z]).T
        self.b_rz = np.concatenate([w.b_r, w.b_z])
        self.W_h = w.W_h.T
        self.b_h = w.b_h

    def step(self, x: np.ndarray, h_prev: np.ndarray) -> np.ndarray:
        u = self.units
        c = np.concatenate([h_prev, x], axis=1)
        rz = sigmoid(c @ self.W_rz + self.b_rz)
        z = rz[:, u:]
        c[:, :u] *= rz[:, :u]
        h_tilde = np.tanh(c @ self.W_h + self.b_h)
        return z * h_prev + (1.0 - z) * h_tilde


class StreamingPredictor:
    """
    Single-writer per-point inference.

    Row k of each layer's state holds the window that started k pushes ago,
    from a zero hidden state. A push shifts the rows, opens a new window in
    row 0 and advances every row by one batched cell step, so once `window`
    frames have arrived the last row is exactly `forward` on the newest
    window.
    """

    def __init__(self, detector: GruModel, bias_clf: Optional[GruModel] = None):
        check_schema(detector, bias_clf)
        self.detector = detector
        self.bias_clf = bias_clf
        self._steppers = [_LayerStepper(layer) for layer in detector.layers()]
        self._head_W = detector.params["head.W"].T
        self._head_b = detector.params["head.b"]
        self._frames: Deque[np.ndarray] = deque(maxlen=detector.window)
        self.reset()

    def reset(self) -> None:
        w = self.detector.window
        self._states = [np.zeros((w, s.units)) for s in self._steppers]
        self._frames.clear()

    def _advance(self, frame: np.ndarray) -> np.ndarray:
        w = self.detector.window
        x = np.broadcast_to(frame, (w, frame.shape[0]))
        for i, stepper in enumerate(self._steppers):
            h_prev = np.zeros_like(self._states[i])
            h_prev[1:] = self._states[i][:-1]
            x = self._states[i] = stepper.step(x, h_prev)
        return softmax(x[-1] @ self._head_W + self._head_b)

    def push(self, frame: np.ndarray) -> StepPrediction:
        frame = np.asarray(frame, dtype=np.float64)
        if frame.shape != (self.detector.input_dim,):
            raise ValueError(f"Expected a frame of {self.detector.input_dim} features, got shape {frame.shape}")
        self._frames.append(frame)
        probs = self._advance(frame)
        if len(self._frames) < self.detector.window:
            return StepPrediction(False, BiasType.NONE, (1.0, 0.0))
        if probs.argmax() != 1:
            return StepPrediction(False, BiasType.NONE, (float(probs[0]), float(probs[1])))
        bias_type = BiasType.JUMP
        if self.bias_clf is not None and forward(self.bias_clf, np.stack(self._frames)).argmax() == 0:
            bias_type = BiasType.NOISE
        return StepPrediction(True, bias_type, (float(probs[0]), float(probs[1])))
