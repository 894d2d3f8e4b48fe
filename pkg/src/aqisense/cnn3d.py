"""Toy-scale 3D convolutional classifier from haze feature stacks to AQI scale classes.

The network treats the six feature maps as a third spatial ("prior") axis:
input tensors are (height, width, 6, 1).  Convolutions are valid (no padding),
stride 1; pooling windows do not overlap and drop any remainder.  Everything is
double precision and written directly in numpy so the backward pass can be
checked against finite differences.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import FormatError, InputError, StateError
from .features import FeatureConfig, FeatureStack, extract_stack
from .imaging import HazeImage
from .scale import AqiScale, ClassPartition

MODEL_MAGIC = b"AQCN"
MODEL_VERSION = 1


# ---------------------------------------------------------------------------
# layers
# ---------------------------------------------------------------------------


class Conv3D:
    """Valid 3D cross-correlation over (h, w, depth), stride 1."""

    def __init__(self, kernel, cin, cout, rng):
        kh, kw, kd = kernel
        self.kernel = kernel
        fan_in = kh * kw * kd * cin
        self.weights = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(kh, kw, kd, cin, cout))
        self.bias = np.zeros(cout)
        self.grad_weights = np.zeros_like(self.weights)
        self.grad_bias = np.zeros_like(self.bias)
        self._windows = None

    def out_shape(self, shape):
        h, w, d, c = shape
        kh, kw, kd = self.kernel
        oh, ow, od = h - kh + 1, w - kw + 1, d - kd + 1
        if oh < 1 or ow < 1 or od < 1:
            raise InputError(f"conv kernel {self.kernel} does not fit input {shape}")
        return (oh, ow, od, self.weights.shape[4])

    def forward(self, x, train=False):
        win = sliding_window_view(x, self.kernel, axis=(1, 2, 3))
        if train:
            self._windows = win
        return np.einsum("bxyzcijk,ijkco->bxyzo", win, self.weights) + self.bias

    def backward(self, grad_out):
        kh, kw, kd = self.kernel
        self.grad_weights = np.einsum("bxyzcijk,bxyzo->ijkco", self._windows, grad_out)
        self.grad_bias = grad_out.sum(axis=(0, 1, 2, 3))
        pad = np.pad(
            grad_out,
            ((0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1), (kd - 1, kd - 1), (0, 0)),
        )
        win = sliding_window_view(pad, self.kernel, axis=(1, 2, 3))
        flipped = self.weights[::-1, ::-1, ::-1]
        return np.einsum("bxyzoijk,ijkco->bxyzc", win, flipped)

    def params(self):
        return [(self.weights, self.grad_weights), (self.bias, self.grad_bias)]


class ReLU:
    def __init__(self):
        self._mask = None

    def out_shape(self, shape):
        return shape

    def forward(self, x, train=False):
        if train:
            self._mask = x > 0.0
        return np.maximum(x, 0.0)

    def backward(self, grad_out):
        return grad_out * self._mask

    def params(self):
        return []


class MaxPool3D:
    """Non-overlapping max pooling; gradient routes to the first maximum per block."""

    def __init__(self, pool):
        self.pool = pool
        self._cache = None

    def out_shape(self, shape):
        h, w, d, c = shape
        ph, pw, pd = self.pool
        oh, ow, od = h // ph, w // pw, d // pd
        if oh < 1 or ow < 1 or od < 1:
            raise InputError(f"pool {self.pool} does not fit input {shape}")
        return (oh, ow, od, c)

    def _blocks(self, x):
        b = x.shape[0]
        ph, pw, pd = self.pool
        oh, ow, od, c = self.out_shape(x.shape[1:])
        crop = x[:, : oh * ph, : ow * pw, : od * pd, :]
        blocks = crop.reshape(b, oh, ph, ow, pw, od, pd, -1)
        blocks = blocks.transpose(0, 1, 3, 5, 7, 2, 4, 6)
        return blocks.reshape(b, oh, ow, od, crop.shape[4], ph * pw * pd)

    def forward(self, x, train=False):
        blocks = self._blocks(x)
        idx = blocks.argmax(axis=-1)
        if train:
            self._cache = (x.shape, idx)
        return np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]

    def backward(self, grad_out):
        in_shape, idx = self._cache
        b = in_shape[0]
        ph, pw, pd = self.pool
        oh, ow, od = idx.shape[1], idx.shape[2], idx.shape[3]
        c = in_shape[4]
        flat = np.zeros((b, oh, ow, od, c, ph * pw * pd))
        np.put_along_axis(flat, idx[..., None], grad_out[..., None], axis=-1)
        blocks = flat.reshape(b, oh, ow, od, c, ph, pw, pd)
        blocks = blocks.transpose(0, 1, 5, 2, 6, 3, 7, 4)
        grad_in = np.zeros(in_shape)
        grad_in[:, : oh * ph, : ow * pw, : od * pd, :] = blocks.reshape(
            b, oh * ph, ow * pw, od * pd, c
        )
        return grad_in

    def params(self):
        return []


class Dense:
    """Flatten then affine map to the class logits."""

    def __init__(self, in_shape, n_out, rng):
        self.in_shape = in_shape
        n_in = int(np.prod(in_shape))
        self.weights = rng.normal(0.0, np.sqrt(2.0 / n_in), size=(n_in, n_out))
        self.bias = np.zeros(n_out)
        self.grad_weights = np.zeros_like(self.weights)
        self.grad_bias = np.zeros_like(self.bias)
        self._x = None

    def out_shape(self, shape):
        return (self.weights.shape[1],)

    def forward(self, x, train=False):
        flat = x.reshape(x.shape[0], -1)
        if train:
            self._x = flat
        return flat @ self.weights + self.bias

    def backward(self, grad_out):
        self.grad_weights = self._x.T @ grad_out
        self.grad_bias = grad_out.sum(axis=0)
        return (grad_out @ self.weights.T).reshape((-1,) + self.in_shape)

    def params(self):
        return [(self.weights, self.grad_weights), (self.bias, self.grad_bias)]


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(probs: np.ndarray, targets: np.ndarray) -> float:
    picked = probs[np.arange(len(targets)), targets]
    return float(-np.log(np.maximum(picked, 1e-300)).mean())


# ---------------------------------------------------------------------------
# model
# ---------------------------------------------------------------------------


class Cnn3dModel:
    """Hardwired feature stack -> conv/pool tower -> dense AQI class logits."""

    def __init__(
        self,
        input_shape=(128, 128, 6),
        conv_filters=(32, 16, 16),
        kernel_depths=(1, 3, 4),
        kernel_size=3,
        pool=(2, 2, 1),
        classes: ClassPartition | None = None,
        activation: str = "relu",
        seed: int = 0,
        feature_config: FeatureConfig | None = None,
    ):
        if len(conv_filters) != len(kernel_depths):
            raise InputError("conv_filters and kernel_depths must have equal length")
        if activation not in ("relu", "none"):
            raise InputError(f"unknown activation {activation!r}")
        self.input_shape = tuple(int(v) for v in input_shape)
        self.conv_filters = tuple(int(v) for v in conv_filters)
        self.kernel_depths = tuple(int(v) for v in kernel_depths)
        self.kernel_size = int(kernel_size)
        self.pool = tuple(int(v) for v in pool)
        self.classes = classes or ClassPartition.uniform(10)
        self.activation = activation
        self.seed = int(seed)
        self.feature_config = feature_config or FeatureConfig.for_size(self.input_shape[0])
        self.input_mean = None

        rng = np.random.default_rng(seed)
        self.layers = []
        shape = self.input_shape + (1,)
        cin = 1
        for i, (cout, kd) in enumerate(zip(self.conv_filters, self.kernel_depths)):
            conv = Conv3D((self.kernel_size, self.kernel_size, kd), cin, cout, rng)
            shape = conv.out_shape(shape)
            self.layers.append(conv)
            if activation == "relu":
                self.layers.append(ReLU())
            if i < len(self.conv_filters) - 1:
                pool_layer = MaxPool3D(self.pool)
                shape = pool_layer.out_shape(shape)
                self.layers.append(pool_layer)
            cin = cout
        self.layers.append(Dense(shape, self.classes.num_classes, rng))

    @property
    def trained(self) -> bool:
        return self.input_mean is not None

    def _check_input(self, x):
        if x.shape[1:] != self.input_shape + (1,):
            raise InputError(
                f"input shape {x.shape[1:]} does not match model {self.input_shape + (1,)}"
            )

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        """Class probabilities for a batch of (h, w, d, 1) tensors."""
        self._check_input(x)
        out = x
        for layer in self.layers:
            out = layer.forward(out, train=train)
        return softmax(out)

    def backward(self, grad_logits: np.ndarray) -> np.ndarray:
        grad = grad_logits
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad

    def params(self):
        out = []
        for layer in self.layers:
            out.extend(layer.params())
        return out


def preprocess(stacks, mean: np.ndarray | None = None):
    """Stack feature tensors and subtract the per-position, per-layer batch mean.

    The mean is taken over the batch axis only, so feature layers are never
    mixed.  Returns (batch, mean); pass a stored mean to reuse it at inference.
    """
    if len(stacks) == 0:
        raise InputError("empty batch")
    x = np.stack([s.layers for s in stacks])[..., None]
    if mean is None:
        mean = x.mean(axis=0)
    return x - mean, mean


@dataclass
class TrainConfig:
    epochs: int = 200
    batch_size: int = 8
    learning_rate: float = 0.01
    momentum: float = 0.9
    seed: int = 0
    shuffle: bool = True
    target_accuracy: float | None = None


@dataclass
class TrainResult:
    loss_history: list = field(default_factory=list)
    train_accuracy: float = 0.0
    epochs_run: int = 0


def train(model: Cnn3dModel, stacks, labels, config: TrainConfig | None = None) -> TrainResult:
    """Mini-batch SGD with momentum on the cross-entropy; deterministic per seed."""
    cfg = config or TrainConfig()
    if len(stacks) == 0:
        raise InputError("empty training set")
    targets = np.array([model.classes.class_of(v) for v in labels])
    x, mean = preprocess(stacks)
    model.input_mean = mean

    rng = np.random.default_rng(cfg.seed)
    velocity = [np.zeros_like(p) for p, _ in model.params()]
    result = TrainResult()
    n = len(stacks)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n) if cfg.shuffle else np.arange(n)
        losses = []
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            xb, yb = x[idx], targets[idx]
            probs = model.forward(xb, train=True)
            losses.append(cross_entropy(probs, yb))
            grad = probs.copy()
            grad[np.arange(len(yb)), yb] -= 1.0
            grad /= len(yb)
            model.backward(grad)
            for v, (p, g) in zip(velocity, model.params()):
                v *= cfg.momentum
                v -= cfg.learning_rate * g
                p += v
        result.loss_history.append(float(np.mean(losses)))
        result.epochs_run = epoch + 1
        if cfg.target_accuracy is not None:
            acc = accuracy(model, x, targets)
            if acc >= cfg.target_accuracy:
                result.train_accuracy = acc
                return result
    result.train_accuracy = accuracy(model, x, targets)
    return result


def accuracy(model: Cnn3dModel, x: np.ndarray, targets: np.ndarray) -> float:
    hits = 0
    for start in range(0, len(x), 32):
        probs = model.forward(x[start : start + 32])
        hits += int((probs.argmax(axis=1) == targets[start : start + 32]).sum())
    return hits / len(x)


def classify_stack(model: Cnn3dModel, stack: FeatureStack) -> int:
    """Class index for one feature stack; argmax ties resolve to the lowest index."""
    if not model.trained:
        raise StateError("model has no stored preprocessing mean; train or load it first")
    x = stack.layers[None, ..., None] - model.input_mean
    probs = model.forward(x)
    return int(probs[0].argmax())


def infer_scale(model: Cnn3dModel, img: HazeImage) -> AqiScale:
    """Extract features, classify, and return the predicted class's AQI interval."""
    stack = extract_stack(img, model.feature_config)
    return model.classes.interval(classify_stack(model, stack))


# ---------------------------------------------------------------------------
# model file: magic + version + json descriptor + float64 little-endian arrays
# ---------------------------------------------------------------------------


def save_model(model: Cnn3dModel, path) -> None:
    descriptor = {
        "input_shape": list(model.input_shape),
        "conv_filters": list(model.conv_filters),
        "kernel_depths": list(model.kernel_depths),
        "kernel_size": model.kernel_size,
        "pool": list(model.pool),
        "class_bounds": list(model.classes.bounds),
        "activation": model.activation,
        "seed": model.seed,
        "feature_size": model.feature_config.size,
        "has_mean": model.input_mean is not None,
    }
    blob = json.dumps(descriptor, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<II", MODEL_VERSION, len(blob)))
        fh.write(blob)
        for p, _ in model.params():
            fh.write(np.ascontiguousarray(p, dtype="<f8").tobytes())
        if model.input_mean is not None:
            fh.write(np.ascontiguousarray(model.input_mean, dtype="<f8").tobytes())


def load_model(path) -> Cnn3dModel:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MODEL_MAGIC:
            raise FormatError(f"{path}: bad model magic {magic!r}")
        version, header_len = struct.unpack("<II", fh.read(8))
        if version != MODEL_VERSION:
            raise FormatError(f"{path}: unsupported model version {version}")
        descriptor = json.loads(fh.read(header_len).decode("utf-8"))
        model = Cnn3dModel(
            input_shape=tuple(descriptor["input_shape"]),
            conv_filters=tuple(descriptor["conv_filters"]),
            kernel_depths=tuple(descriptor["kernel_depths"]),
            kernel_size=descriptor["kernel_size"],
            pool=tuple(descriptor["pool"]),
            classes=ClassPartition(descriptor["class_bounds"]),
            activation=descriptor["activation"],
            seed=descriptor["seed"],
            feature_config=FeatureConfig.for_size(descriptor["feature_size"]),
        )
        for p, _ in model.params():
            raw = fh.read(p.size * 8)
            if len(raw) != p.size * 8:
                raise FormatError(
                    f"{path}: truncated weights, expected {p.size * 8} bytes, got {len(raw)}"
                )
            p[...] = np.frombuffer(raw, dtype="<f8").reshape(p.shape)
        if descriptor["has_mean"]:
            shape = tuple(descriptor["input_shape"]) + (1,)
            count = int(np.prod(shape)) * 8
            raw = fh.read(count)
            if len(raw) != count:
                raise FormatError(
                    f"{path}: truncated mean, expected {count} bytes, got {len(raw)}"
                )
            model.input_mean = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
    return model
