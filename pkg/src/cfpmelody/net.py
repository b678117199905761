"""A small patch classifier written directly in numpy.

Architecture (input ``1 x 25 x 25``)::

    conv 5x5, 8 filters, same padding  -> relu
    conv 3x3, 16 filters, same padding -> relu
    flatten (16 * 25 * 25 = 10000)
    dense 128 -> relu -> dense 64 -> relu -> dense 2 -> softmax

Class 1 is "vocal melody at the patch centre". Everything runs in float64
so that the backward pass can be checked against finite differences; the
forward pass can optionally run in float32 for inference.
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from cfpmelody.errors import DatasetError, ModelFormatError, ModelShapeError, ModelVersionError, ShapeError
from cfpmelody.patches import PATCH_SIZE, PatchSet

logger = logging.getLogger(__name__)

LAYER_SHAPES: Dict[str, Tuple[int, ...]] = {
    "conv1_w": (8, 1, 5, 5),
    "conv1_b": (8,),
    "conv2_w": (16, 8, 3, 3),
    "conv2_b": (16,),
    "dense1_w": (128, 16 * PATCH_SIZE * PATCH_SIZE),
    "dense1_b": (128,),
    "dense2_w": (64, 128),
    "dense2_b": (64,),
    "dense3_w": (2, 64),
    "dense3_b": (2,),
}

MAGIC = b"CFPCNN\r\n"
FORMAT_VERSION = 1
PROB_FLOOR = 1e-12
INFERENCE_CHUNK = 512


@dataclass
class CnnModel:
    params: Dict[str, np.ndarray]
    standardize: bool = True

    @classmethod
    def zeros(cls, standardize: bool = True) -> "CnnModel":
        return cls({k: np.zeros(s) for k, s in LAYER_SHAPES.items()}, standardize)

    @classmethod
    def init(cls, seed: int = 0, standardize: bool = True) -> "CnnModel":
        """He-uniform weights, zero biases."""
        rng = np.random.default_rng(seed)
        params = {}
        for name, shape in LAYER_SHAPES.items():
            if name.endswith("_b"):
                params[name] = np.zeros(shape)
            else:
                fan_in = int(np.prod(shape[1:]))
                limit = np.sqrt(6.0 / fan_in)
                params[name] = rng.uniform(-limit, limit, size=shape)
        return cls(params, standardize)

    def copy(self) -> "CnnModel":
        return CnnModel({k: v.copy() for k, v in self.params.items()}, self.standardize)

    def validate(self) -> None:
        for name, shape in LAYER_SHAPES.items():
            arr = self.params.get(name)
            if arr is None or arr.shape != shape:
                got = None if arr is None else arr.shape
                raise ModelShapeError(f"layer {name}: expected shape {shape}, got {got}")
            if not np.all(np.isfinite(arr)):
                raise ModelShapeError(f"layer {name}: non-finite weights")


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: Dict[str, np.ndarray], **hyper) -> "AdamState":
        return cls(m={k: np.zeros_like(p) for k, p in params.items()},
                   v={k: np.zeros_like(p) for k, p in params.items()}, **hyper)


@dataclass
class TrainConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 32
    epochs: int = 20
    rng_seed: int = 0
    validation_fraction: float = 0.1
    standardize: bool = True

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError("lr must be non-negative")
        if not 0 <= self.validation_fraction < 1:
            raise ValueError("validation_fraction must lie in [0, 1)")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")


# --------------------------------------------------------------------------- #
# layers
# --------------------------------------------------------------------------- #

def _im2col(x: np.ndarray, k: int) -> np.ndarray:
    """``(B, C, H, W)`` -> ``(B*H*W, C*k*k)`` rows of zero-padded k x k windows."""
    b, c, h, w = x.shape
    p = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(b * h * w, c * k * k)


def conv2d_same(x: np.ndarray, w: np.ndarray, bias: np.ndarray, cols=None) -> np.ndarray:
    """Cross-correlation with zero 'same' padding. ``w`` is ``(out, in, k, k)``."""
    b, _, h, wd = x.shape
    o, _, k, _ = w.shape
    if cols is None:
        cols = _im2col(x, k)
    out = cols @ w.reshape(o, -1).T + bias
    return out.reshape(b, h, wd, o).transpose(0, 3, 1, 2)


def _conv_backward(dout, cols, w, x_shape, need_dx=True):
    b, c, h, wd = x_shape
    o, _, k, _ = w.shape
    dflat = dout.transpose(0, 2, 3, 1).reshape(-1, o)
    dw = (dflat.T @ cols).reshape(w.shape)
    db = dflat.sum(axis=0)
    if not need_dx:
        return None, dw, db
    dcols = (dflat @ w.reshape(o, -1)).reshape(b, h, wd, c, k, k)
    p = k // 2
    dxp = np.zeros((b, c, h + 2 * p, wd + 2 * p))
    for i in range(k):
        for j in range(k):
            dxp[:, :, i:i + h, j:j + wd] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    return dxp[:, :, p:p + h, p:p + wd], dw, db


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def standardize_patches(x: np.ndarray) -> np.ndarray:
    """Per-patch zero mean, unit variance; constant patches map to zeros."""
    mean = x.mean(axis=(1, 2), keepdims=True)
    std = x.std(axis=(1, 2), keepdims=True)
    centered = x - mean
    return np.divide(centered, std, out=np.zeros_like(centered), where=std > 0)


def _prepare(model: CnnModel, batch) -> np.ndarray:
    x = batch.values if isinstance(batch, PatchSet) else np.asarray(batch, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    if x.ndim != 3 or x.shape[1:] != (PATCH_SIZE, PATCH_SIZE):
        raise ShapeError(f"expected patches of shape (n, {PATCH_SIZE}, {PATCH_SIZE}), got {x.shape}")
    if model.standardize:
        x = standardize_patches(x)
    return x[:, None, :, :]


def _forward(params, x, keep=False, masks=None):
    """Logits for prepared input ``x``.

    ``masks`` (four boolean arrays) replaces every relu with multiplication
    by a fixed activation pattern, which evaluates the linear piece the
    network is on without crossing kinks.
    """
    def relu(z, i):
        return np.maximum(z, 0) if masks is None else z * masks[i]

    cols1 = _im2col(x, 5)
    a1 = relu(conv2d_same(x, params["conv1_w"], params["conv1_b"], cols1), 0)
    cols2 = _im2col(a1, 3)
    a2 = relu(conv2d_same(a1, params["conv2_w"], params["conv2_b"], cols2), 1)
    flat = a2.reshape(a2.shape[0], -1)
    h1 = relu(flat @ params["dense1_w"].T + params["dense1_b"], 2)
    h2 = relu(h1 @ params["dense2_w"].T + params["dense2_b"], 3)
    logits = h2 @ params["dense3_w"].T + params["dense3_b"]
    cache = {}
    if keep:
        cache = dict(x=x, cols1=cols1, a1=a1, cols2=cols2, a2=a2, flat=flat, h1=h1, h2=h2)
    return logits, cache


def activation_masks(model: CnnModel, batch):
    """Boolean relu activation patterns of the four hidden layers."""
    _, c = _forward(model.params, _prepare(model, batch), keep=True)
    return [c[k] > 0 for k in ("a1", "a2", "h1", "h2")]


def cross_entropy(model: CnnModel, batch, labels, masks=None) -> float:
    """Mean cross-entropy only (no gradients); see :func:`_forward` for ``masks``."""
    labels = np.asarray(labels, dtype=np.int64)
    logits, _ = _forward(model.params, _prepare(model, batch), masks=masks)
    probs = softmax(logits)
    n = labels.shape[0]
    return float(-np.mean(np.log(np.maximum(probs[np.arange(n), labels], PROB_FLOOR))))


def forward(model: CnnModel, batch, dtype=np.float64) -> np.ndarray:
    """Class probabilities ``(n, 2)`` for a stack of 25x25 patches.

    ``dtype=np.float32`` runs a faster single-precision pass.
    """
    x = _prepare(model, batch).astype(dtype, copy=False)
    params = model.params if dtype == np.float64 else {
        k: v.astype(dtype) for k, v in model.params.items()}
    out = np.empty((x.shape[0], 2), dtype=np.float64)
    for start in range(0, x.shape[0], INFERENCE_CHUNK):
        logits, _ = _forward(params, x[start:start + INFERENCE_CHUNK])
        out[start:start + INFERENCE_CHUNK] = softmax(logits.astype(np.float64))
    return out


def vocal_probability(model: CnnModel, batch, dtype=np.float64) -> np.ndarray:
    return forward(model, batch, dtype)[:, 1]


def loss_and_grads(model: CnnModel, batch, labels) -> Tuple[float, Dict[str, np.ndarray]]:
    """Mean cross-entropy over the batch and its gradient for every parameter."""
    loss, grads, _ = _loss_grads_probs(model, batch, labels)
    return loss, grads


def _loss_grads_probs(model, batch, labels):
    x = _prepare(model, batch)
    labels = np.asarray(labels, dtype=np.int64)
    n = x.shape[0]
    if n == 0 or labels.shape != (n,):
        raise ShapeError("need one label per patch and a non-empty batch")
    p = model.params
    logits, c = _forward(p, x, keep=True)
    probs = softmax(logits)
    loss = float(-np.mean(np.log(np.maximum(probs[np.arange(n), labels], PROB_FLOOR))))

    g = {}
    dlogits = probs.copy()
    dlogits[np.arange(n), labels] -= 1.0
    dlogits /= n
    g["dense3_w"] = dlogits.T @ c["h2"]
    g["dense3_b"] = dlogits.sum(axis=0)
    dh2 = (dlogits @ p["dense3_w"]) * (c["h2"] > 0)
    g["dense2_w"] = dh2.T @ c["h1"]
    g["dense2_b"] = dh2.sum(axis=0)
    dh1 = (dh2 @ p["dense2_w"]) * (c["h1"] > 0)
    g["dense1_w"] = dh1.T @ c["flat"]
    g["dense1_b"] = dh1.sum(axis=0)
    da2 = (dh1 @ p["dense1_w"]).reshape(c["a2"].shape) * (c["a2"] > 0)
    da1, g["conv2_w"], g["conv2_b"] = _conv_backward(da2, c["cols2"], p["conv2_w"], c["a1"].shape)
    da1 *= c["a1"] > 0
    _, g["conv1_w"], g["conv1_b"] = _conv_backward(
        da1, c["cols1"], p["conv1_w"], c["x"].shape, need_dx=False)
    return loss, g, probs


def adam_step(model: CnnModel, grads: Dict[str, np.ndarray], state: AdamState):
    """One bias-corrected Adam update, applied in place. Returns ``(model, state)``."""
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, grad in grads.items():
        m = state.m.setdefault(name, np.zeros_like(grad))
        v = state.v.setdefault(name, np.zeros_like(grad))
        m *= b1
        m += (1.0 - b1) * grad
        v *= b2
        v += (1.0 - b2) * grad * grad
        model.params[name] -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return model, state


def accuracy(model: CnnModel, data: PatchSet) -> float:
    if len(data) == 0:
        return float("nan")
    pred = vocal_probability(model, data) > 0.5
    return float(np.mean(pred == (data.labels == 1)))


# --------------------------------------------------------------------------- #
# training
# --------------------------------------------------------------------------- #

def split_dataset(data: PatchSet, fraction: float, seed: int) -> Tuple[PatchSet, PatchSet]:
    """Seeded hold-out split: ``(train, validation)``."""
    order = np.random.default_rng([seed, 1]).permutation(len(data))
    n_val = int(round(fraction * len(data)))
    return data[np.sort(order[n_val:])], data[np.sort(order[:n_val])]


def train(dataset: PatchSet, config: TrainConfig = TrainConfig(),
          log_path=None) -> Tuple[CnnModel, List[dict]]:
    """Mini-batch Adam on cross-entropy; returns the best-validation model.

    Deterministic for a given ``config.rng_seed``. One JSON line per epoch is
    appended to ``log_path`` when given.
    """
    if dataset.labels is None or len(dataset) == 0:
        raise DatasetError("training set is empty or unlabelled")
    classes = np.unique(dataset.labels)
    if classes.size < 2:
        raise DatasetError(f"training set contains a single class ({classes.tolist()})")

    train_set, val_set = split_dataset(dataset, config.validation_fraction, config.rng_seed)
    model = CnnModel.init(config.rng_seed, config.standardize)
    state = AdamState.for_params(model.params, lr=config.lr, beta1=config.beta1,
                                 beta2=config.beta2, eps=config.eps)
    rng = np.random.default_rng([config.rng_seed, 2])

    best, best_acc = model.copy(), -1.0
    log: List[dict] = []
    fh = open(log_path, "w") if log_path is not None else None
    try:
        for epoch in range(1, config.epochs + 1):
            order = rng.permutation(len(train_set))
            total_loss = 0.0
            correct = 0
            for start in range(0, len(order), config.batch_size):
                batch = train_set[order[start:start + config.batch_size]]
                loss, grads, probs = _loss_grads_probs(model, batch.values, batch.labels)
                total_loss += loss * len(batch)
                correct += int(np.sum((probs[:, 1] > 0.5) == (batch.labels == 1)))
                adam_step(model, grads, state)
            # running accuracy over the epoch, measured before each update
            train_acc = correct / max(len(train_set), 1)
            val_acc = accuracy(model, val_set) if len(val_set) else train_acc
            entry = {
                "epoch": epoch,
                "train_loss": total_loss / max(len(train_set), 1),
                "train_acc": train_acc,
                "val_acc": val_acc,
            }
            log.append(entry)
            logger.info("epoch %d loss %.4f train_acc %.3f val_acc %.3f",
                        epoch, entry["train_loss"], train_acc, val_acc)
            if fh is not None:
                fh.write(json.dumps(entry) + "\n")
            if val_acc > best_acc:
                best, best_acc = model.copy(), val_acc
    finally:
        if fh is not None:
            fh.close()
    return (best if log else model), log


# --------------------------------------------------------------------------- #
# serialisation
# --------------------------------------------------------------------------- #

def save_model(model: CnnModel, path) -> None:
    """Write the versioned binary container (see ``docs/formats.md``)."""
    model.validate()
    parts = [MAGIC, struct.pack("<HHH", FORMAT_VERSION, int(model.standardize), len(LAYER_SHAPES))]
    for name, shape in LAYER_SHAPES.items():
        raw = name.encode("ascii")
        parts.append(struct.pack("<B", len(raw)) + raw)
        parts.append(struct.pack("<B", len(shape)) + struct.pack(f"<{len(shape)}I", *shape))
        parts.append(np.ascontiguousarray(model.params[name], dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(parts))


class _Reader:
    def __init__(self, data: bytes, path):
        self.data, self.pos, self.path = data, 0, path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise ModelFormatError(f"{self.path}: truncated model file")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_model(path) -> CnnModel:
    """Read a model written by :func:`save_model`, validating every layer shape."""
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise ModelFormatError(f"cannot read model {path}: {exc.strerror or exc}") from exc
    r = _Reader(data, path)
    if r.take(len(MAGIC)) != MAGIC:
        raise ModelFormatError(f"{path}: not a model file (bad magic)")
    version, flags, count = r.unpack("<HHH")
    if version != FORMAT_VERSION:
        raise ModelVersionError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    params = {}
    for _ in range(count):
        (nlen,) = r.unpack("<B")
        try:
            name = r.take(nlen).decode("ascii")
        except UnicodeDecodeError:
            raise ModelFormatError(f"{path}: corrupt layer name") from None
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}I")
        expected = LAYER_SHAPES.get(name)
        if expected is None:
            raise ModelShapeError(f"{path}: unknown layer {name}")
        if tuple(shape) != expected:
            raise ModelShapeError(f"{path}: layer {name} has shape {tuple(shape)}, expected {expected}")
        size = int(np.prod(shape))
        params[name] = np.frombuffer(r.take(8 * size), dtype="<f8").reshape(shape).astype(np.float64)
    if r.pos != len(data):
        raise ModelFormatError(f"{path}: {len(data) - r.pos} trailing bytes")
    model = CnnModel(params, bool(flags & 1))
    model.validate()
    return model
