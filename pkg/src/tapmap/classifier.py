"""Tap-sound CNN in numpy: forward pass, backprop, Adam training, evaluation.

Architecture: four same-padded stride-1 convolutions with ReLU (16, 32, 54
and 128 output channels; 3x3, 3x3, 3x3 and 2x2 kernels), global average
pooling, one dense layer, softmax. Activations are kept NHWC so every
convolution is a single im2col matmul.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .gridmap import N_CLASSES, Material

CHANNELS = (16, 32, 54, 128)
KERNELS = (3, 3, 3, 2)
INPUT_SHAPE = (40, 45)
MAGIC = b"TAPCNN\x00\x01"
CHECKPOINT_VERSION = 1
EPOCHS = 12
BATCH = 16
LEARNING_RATE = 2e-3


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int):
        super().__init__(f"loss became non-finite in epoch {epoch}")
        self.epoch = epoch


@dataclass
class CnnModel:
    params: dict[str, np.ndarray]
    channels: tuple[int, ...] = CHANNELS
    kernels: tuple[int, ...] = KERNELS
    input_shape: tuple[int, int] = INPUT_SHAPE
    n_classes: int = N_CLASSES
    feat_mean: np.ndarray | None = None  # per input row (MFCC coefficient)
    feat_std: np.ndarray | None = None

    @classmethod
    def create(cls, seed=0, channels=CHANNELS, kernels=KERNELS, input_shape=INPUT_SHAPE,
               n_classes=N_CLASSES, dtype=np.float32) -> "CnnModel":
        """He-initialised weights, zero biases."""
        if len(channels) != len(kernels):
            raise ValueError("channels and kernels must have the same length")
        rng = np.random.default_rng(seed)
        params = {}
        c_in = 1
        for i, (c_out, k) in enumerate(zip(channels, kernels), start=1):
            fan_in = c_in * k * k
            params[f"conv{i}_w"] = (rng.standard_normal((c_out, c_in, k, k)) * np.sqrt(2.0 / fan_in)).astype(dtype)
            params[f"conv{i}_b"] = np.zeros(c_out, dtype=dtype)
            c_in = c_out
        params["dense_w"] = (rng.standard_normal((n_classes, c_in)) * np.sqrt(1.0 / c_in)).astype(dtype)
        params["dense_b"] = np.zeros(n_classes, dtype=dtype)
        return cls(params, tuple(channels), tuple(kernels), tuple(input_shape), n_classes)

    @property
    def n_layers(self) -> int:
        return len(self.channels)

    @property
    def dtype(self):
        return self.params["dense_w"].dtype

    def n_params(self) -> int:
        return sum(p.size for p in self.params.values())

    def copy(self) -> "CnnModel":
        return CnnModel({k: v.copy() for k, v in self.params.items()}, self.channels, self.kernels,
                        self.input_shape, self.n_classes,
                        None if self.feat_mean is None else self.feat_mean.copy(),
                        None if self.feat_std is None else self.feat_std.copy())

    def astype(self, dtype) -> "CnnModel":
        m = self.copy()
        m.params = {k: v.astype(dtype) for k, v in m.params.items()}
        return m

    def standardize(self, X: np.ndarray) -> np.ndarray:
        if self.feat_mean is None:
            return X
        return (X - self.feat_mean[:, None]) / self.feat_std[:, None]


@dataclass
class Prediction:
    probabilities: np.ndarray
    label: Material

    @property
    def confidence(self) -> float:
        return float(self.probabilities[int(self.label)])


def _pads(k: int) -> tuple[int, int]:
    # even kernels pad one extra cell after, as in the usual "same" convention
    before = (k - 1) // 2
    return before, k - 1 - before


def _conv_forward(x, w, b):
    n, h, wd, c = x.shape
    f, _, kh, kw = w.shape
    pt, pb = _pads(kh)
    pl, pr = _pads(kw)
    xp = np.pad(x, ((0, 0), (pt, pb), (pl, pr), (0, 0)))
    # column layout (kh, kw, c) keeps the channel axis contiguous
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2)).transpose(0, 1, 2, 4, 5, 3)
    cols = win.reshape(n * h * wd, kh * kw * c)
    out = cols @ _flat(w).T + b
    return out.reshape(n, h, wd, f), cols


def _flat(w):
    f = w.shape[0]
    return w.transpose(0, 2, 3, 1).reshape(f, -1)


def _conv_backward(dout, cols, w, x_shape, need_dx=True):
    n, h, wd, c = x_shape
    f, _, kh, kw = w.shape
    d2 = dout.reshape(-1, f)
    dw = (d2.T @ cols).reshape(f, kh, kw, c).transpose(0, 3, 1, 2)
    db = d2.sum(axis=0)
    if not need_dx:
        return None, dw, db
    dcols = (d2 @ _flat(w)).reshape(n, h, wd, kh, kw, c)
    dxp = np.zeros((n, h + kh - 1, wd + kw - 1, c), dtype=dout.dtype)
    for i in range(kh):
        for j in range(kw):
            dxp[:, i:i + h, j:j + wd, :] += dcols[:, :, :, i, j, :]
    pt, _ = _pads(kh)
    pl, _ = _pads(kw)
    return dxp[:, pt:pt + h, pl:pl + wd, :], dw, db


def _softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _check_input(model: CnnModel, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X)
    if X.ndim == 2:
        X = X[None]
    if X.shape[1:] != tuple(model.input_shape):
        raise ValueError(f"expected input {model.input_shape}, got {X.shape[1:]}")
    return X


def forward_batch(model: CnnModel, X: np.ndarray, keep_cache: bool = False):
    """Logits for a batch ``(n, H, W)``; optionally the backprop cache."""
    X = _check_input(model, X)
    a = model.standardize(X).astype(model.dtype)[..., None]
    cache = []
    for i in range(1, model.n_layers + 1):
        z, cols = _conv_forward(a, model.params[f"conv{i}_w"], model.params[f"conv{i}_b"])
        if keep_cache:
            cache.append((cols, a.shape, z > 0))
        a = np.maximum(z, 0)
    pooled = a.mean(axis=(1, 2))
    logits = pooled @ model.params["dense_w"].T + model.params["dense_b"]
    if keep_cache:
        cache.append((pooled, a.shape))
    return logits, cache


def forward(model: CnnModel, x: np.ndarray) -> Prediction:
    if np.asarray(x).shape != tuple(model.input_shape):
        raise ValueError(f"expected input {model.input_shape}, got {np.asarray(x).shape}")
    logits, _ = forward_batch(model, x)
    p = _softmax(logits[0].astype(np.float64))
    return Prediction(p, Material(int(np.argmax(p))))


def predict_proba(model: CnnModel, X: np.ndarray, batch: int = 64) -> np.ndarray:
    X = _check_input(model, X)
    out = [_softmax(forward_batch(model, X[i:i + batch])[0].astype(np.float64))
           for i in range(0, len(X), batch)]
    return np.concatenate(out) if out else np.zeros((0, model.n_classes))


def loss_and_grads(model: CnnModel, X: np.ndarray, y: np.ndarray, return_probs: bool = False):
    """Mean cross-entropy over the batch and its gradient for every parameter."""
    y = np.asarray(y, dtype=int).ravel()
    logits, cache = forward_batch(model, X, keep_cache=True)
    n = len(y)
    p = _softmax(logits.astype(np.float64))
    loss = float(-np.mean(np.log(np.maximum(p[np.arange(n), y], 1e-300))))
    dlogits = p.copy()
    dlogits[np.arange(n), y] -= 1.0
    dlogits = (dlogits / n).astype(model.dtype)

    grads = {}
    pooled, a_shape = cache[-1]
    grads["dense_w"] = dlogits.T @ pooled
    grads["dense_b"] = dlogits.sum(axis=0)
    dpooled = dlogits @ model.params["dense_w"]
    spatial = a_shape[1] * a_shape[2]
    da = np.broadcast_to((dpooled / spatial)[:, None, None, :], a_shape)
    for i in range(model.n_layers, 0, -1):
        cols, x_shape, active = cache[i - 1]
        dz = da * active
        da, dw, db = _conv_backward(dz, cols, model.params[f"conv{i}_w"], x_shape, need_dx=i > 1)
        grads[f"conv{i}_w"] = dw
        grads[f"conv{i}_b"] = db
    if return_probs:
        return loss, grads, p
    return loss, grads


def backward(model: CnnModel, x: np.ndarray, label) -> dict[str, np.ndarray]:
    """Cross-entropy gradients for a single example."""
    if np.asarray(x).shape != tuple(model.input_shape):
        raise ValueError(f"expected input {model.input_shape}, got {np.asarray(x).shape}")
    _, grads = loss_and_grads(model, np.asarray(x)[None], np.array([int(label)]))
    return grads


@dataclass
class Dataset:
    X: np.ndarray  # (n, 40, 45)
    y: np.ndarray  # (n,) class indices
    train: np.ndarray  # (n,) bool, False means test

    def __len__(self) -> int:
        return len(self.y)

    @property
    def train_idx(self) -> np.ndarray:
        return np.flatnonzero(self.train)

    @property
    def test_idx(self) -> np.ndarray:
        return np.flatnonzero(~self.train)

    def save(self, path) -> None:
        np.savez_compressed(path, X=self.X, y=self.y, train=self.train)

    @classmethod
    def load(cls, path) -> "Dataset":
        with np.load(path) as z:
            return cls(z["X"], z["y"], z["train"])


def stratified_split(y: np.ndarray, train_fraction: float = 0.7, seed=0) -> np.ndarray:
    """Boolean train mask holding ``train_fraction`` of every class."""
    rng = np.random.default_rng(seed)
    y = np.asarray(y)
    mask = np.zeros(len(y), dtype=bool)
    for cls in np.unique(y):
        idx = np.flatnonzero(y == cls)
        idx = idx[rng.permutation(len(idx))]
        mask[idx[:int(round(train_fraction * len(idx)))]] = True
    return mask


def fit_standardization(model: CnnModel, X: np.ndarray) -> None:
    """Per-coefficient mean and std over the given (training) features."""
    model.feat_mean = X.mean(axis=(0, 2)).astype(np.float64)
    model.feat_std = np.maximum(X.std(axis=(0, 2)), 1e-8).astype(np.float64)


@dataclass
class History:
    train_loss: list[float] = field(default_factory=list)
    train_acc: list[float] = field(default_factory=list)
    test_loss: list[float] = field(default_factory=list)
    test_acc: list[float] = field(default_factory=list)


def _loss_acc(model: CnnModel, X, y, batch: int = 64) -> tuple[float, float]:
    if len(y) == 0:
        return float("nan"), float("nan")
    p = predict_proba(model, X, batch)
    loss = float(-np.mean(np.log(np.maximum(p[np.arange(len(y)), y], 1e-300))))
    return loss, float(np.mean(p.argmax(axis=1) == y))


def train(model: CnnModel, data: Dataset, epochs: int = EPOCHS, batch: int = BATCH,
          lr: float = LEARNING_RATE, seed=0, beta1: float = 0.9, beta2: float = 0.999,
          eps: float = 1e-8, standardize: bool = True, cosine: bool = True, log=None) -> tuple[CnnModel, History]:
    """Mini-batch Adam on the training split. Returns a new model and the history.

    Inputs are standardised per coefficient with training-split statistics
    (stored on the model) unless ``standardize`` is False. With ``cosine`` the
    step size follows a half cosine from ``lr`` down to zero over the run.
    Train accuracy is the running accuracy seen during each epoch.
    """
    tr, te = data.train_idx, data.test_idx
    if len(tr) == 0:
        raise ValueError("training split is empty")
    model = model.copy()
    if standardize:
        fit_standardization(model, data.X[tr])
    rng = np.random.default_rng(seed)
    m = {k: np.zeros_like(v) for k, v in model.params.items()}
    v = {k: np.zeros_like(v) for k, v in model.params.items()}
    step = 0
    hist = History()
    for epoch in range(epochs):
        order = tr[rng.permutation(len(tr))]
        total, seen, hits = 0.0, 0, 0
        n_batches = -(-len(order) // batch)
        for b, start in enumerate(range(0, len(order), batch)):
            idx = order[start:start + batch]
            loss, grads, p = loss_and_grads(model, data.X[idx], data.y[idx], return_probs=True)
            if not np.isfinite(loss):
                raise TrainingDiverged(epoch)
            total += loss * len(idx)
            seen += len(idx)
            hits += int(np.sum(p.argmax(axis=1) == data.y[idx]))
            if lr == 0:
                continue
            rate = lr
            if cosine:
                rate = 0.5 * lr * (1 + np.cos(np.pi * (epoch * n_batches + b) / (epochs * n_batches)))
            step += 1
            c1 = 1 - beta1 ** step
            c2 = 1 - beta2 ** step
            for k, g in grads.items():
                m[k] = beta1 * m[k] + (1 - beta1) * g
                v[k] = beta2 * v[k] + (1 - beta2) * g * g
                model.params[k] -= (rate * (m[k] / c1) / (np.sqrt(v[k] / c2) + eps)).astype(model.dtype)
        tr_acc = hits / seen
        te_loss, te_acc = _loss_acc(model, data.X[te], data.y[te])
        hist.train_loss.append(total / seen)
        hist.train_acc.append(tr_acc)
        hist.test_loss.append(te_loss)
        hist.test_acc.append(te_acc)
        if log is not None:
            log(f"epoch {epoch + 1}/{epochs} loss {total / seen:.4f} "
                f"train {tr_acc:.3f} test {te_acc:.3f}")
    return model, hist


def confusion_matrix(y_true, y_pred, n_classes: int = N_CLASSES) -> np.ndarray:
    """Row-normalised confusion matrix; rows of absent classes stay zero."""
    cm = np.zeros((n_classes, n_classes))
    np.add.at(cm, (np.asarray(y_true, int), np.asarray(y_pred, int)), 1)
    rows = cm.sum(axis=1, keepdims=True)
    return np.divide(cm, rows, out=np.zeros_like(cm), where=rows > 0)


def mean_class_accuracy(cm: np.ndarray) -> float:
    present = cm.sum(axis=1) > 0
    return float(np.mean(np.diag(cm)[present])) if present.any() else float("nan")


def evaluate(model: CnnModel, data: Dataset) -> tuple[np.ndarray, float]:
    """Confusion matrix and mean per-class accuracy on the test split."""
    te = data.test_idx
    if len(te) == 0:
        raise ValueError("test split is empty")
    pred = predict_proba(model, data.X[te]).argmax(axis=1)
    cm = confusion_matrix(data.y[te], pred, model.n_classes)
    return cm, mean_class_accuracy(cm)


def _tensor_order(model: CnnModel) -> list[str]:
    names = []
    for i in range(1, model.n_layers + 1):
        names += [f"conv{i}_w", f"conv{i}_b"]
    return names + ["dense_w", "dense_b"]


def save_checkpoint(model: CnnModel, path) -> None:
    """Binary checkpoint, all little-endian.

    magic(8) | version u32 | n_classes u32 | H u32 | W u32 | n_layers u32 |
    per layer: out_channels u32, kernel u32 | has_norm u32 |
    float32 tensors in declaration order (conv1_w, conv1_b, ..., dense_w,
    dense_b[, feat_mean, feat_std]).
    """
    h, w = model.input_shape
    header = [MAGIC, struct.pack("<5I", CHECKPOINT_VERSION, model.n_classes, h, w, model.n_layers)]
    for c, k in zip(model.channels, model.kernels):
        header.append(struct.pack("<2I", c, k))
    has_norm = model.feat_mean is not None
    header.append(struct.pack("<I", int(has_norm)))
    tensors = [model.params[n] for n in _tensor_order(model)]
    if has_norm:
        tensors += [model.feat_mean, model.feat_std]
    with open(Path(path), "wb") as fh:
        fh.write(b"".join(header))
        for t in tensors:
            fh.write(np.ascontiguousarray(t, dtype="<f4").tobytes())


def load_checkpoint(path) -> CnnModel:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise ValueError(f"{path}: not a tap CNN checkpoint")
    version, n_classes, h, w, n_layers = struct.unpack_from("<5I", raw, 8)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    off = 28
    channels, kernels = [], []
    for _ in range(n_layers):
        c, k = struct.unpack_from("<2I", raw, off)
        channels.append(c)
        kernels.append(k)
        off += 8
    (has_norm,) = struct.unpack_from("<I", raw, off)
    off += 4
    model = CnnModel.create(0, tuple(channels), tuple(kernels), (h, w), n_classes)

    def take(shape):
        nonlocal off
        count = int(np.prod(shape))
        arr = np.frombuffer(raw, dtype="<f4", count=count, offset=off).reshape(shape)
        off += 4 * count
        return arr.astype(np.float32)

    for name in _tensor_order(model):
        model.params[name] = take(model.params[name].shape)
    if has_norm:
        model.feat_mean = take((h,)).astype(np.float64)
        model.feat_std = take((h,)).astype(np.float64)
    if off != len(raw):
        raise ValueError(f"{path}: trailing or missing bytes")
    return model
