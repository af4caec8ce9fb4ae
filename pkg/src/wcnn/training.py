"""Optimization and preprocessing: He init, Adam, contrast normalization,
crop/flip augmentation, the epoch loop, and evaluation.

Everything here is deterministic given (seed, data, config): shuffling and
augmentation draw from one seeded generator in a fixed order, and the
wall-clock column of the metrics log stays at zero unless timing is
explicitly enabled, so reruns produce byte-identical logs.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ArgumentError, NumericalError
from .tensor import DTYPE, Graph, Tensor

GCN_MIN_STD = 1e-8


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 32
    epochs: int = 10
    seed: int = 0
    crop_source_size: int = 72
    crop_target_size: int = 64
    flip_enabled: bool = True
    log_timing: bool = False  # real wall-clock breaks byte-identical reruns

    def __post_init__(self):
        if not 0 < self.adam_beta1 < 1 or not 0 < self.adam_beta2 < 1:
            raise ArgumentError("Adam betas must lie strictly between 0 and 1")
        if self.adam_eps <= 0:
            raise ArgumentError("Adam epsilon must be positive")
        if self.learning_rate <= 0:
            raise ArgumentError("learning rate must be positive")
        if self.batch_size < 2:
            raise ArgumentError("batch size must be at least 2 (batchnorm needs it)")
        if self.epochs < 1:
            raise ArgumentError("epochs must be positive")
        if self.crop_target_size > self.crop_source_size:
            raise ArgumentError(
                f"crop target {self.crop_target_size} exceeds source {self.crop_source_size}"
            )


# --- initialization ----------------------------------------------------------


def he_init(net, seed):
    """Initialize a built network in place and return it.

    Conv and FC weights draw from Normal(0, sqrt(2/fan_in)), the scheme
    that keeps ReLU activations at constant scale; biases and batchnorm
    shifts start at 0, batchnorm scales at 1, running stats at (0, 1).
    """
    rng = np.random.default_rng(seed)
    for name, p in net.named_parameters():
        if name.endswith(".w"):
            fan_in = int(np.prod(p.shape[1:]))
            std = np.sqrt(2.0 / fan_in)
            p.data = (rng.standard_normal(p.shape, dtype=DTYPE) * DTYPE(std))
        elif name.endswith(".gamma"):
            p.data = np.ones(p.shape, dtype=DTYPE)
        else:  # .b and .beta
            p.data = np.zeros(p.shape, dtype=DTYPE)
    for name, buf in net.named_buffers():
        if name.endswith(".running_var"):
            buf.data = np.ones(buf.shape, dtype=DTYPE)
        else:
            buf.data = np.zeros(buf.shape, dtype=DTYPE)
    return net


# --- Adam --------------------------------------------------------------------


@dataclass
class OptimizerState:
    """First/second moment accumulators plus the shared step counter."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def for_params(cls, named_params):
        return cls(
            m={name: np.zeros_like(p.data) for name, p in named_params},
            v={name: np.zeros_like(p.data) for name, p in named_params},
        )


def adam_step(state, named_params, config):
    """One bias-corrected Adam update over all parameters, in place.

    Parameters with no gradient buffer are treated as zero-gradient.
    Non-finite gradients abort with the offending parameter's name.
    """
    state.t += 1
    b1, b2 = DTYPE(config.adam_beta1), DTYPE(config.adam_beta2)
    lr, eps = config.learning_rate, config.adam_eps
    correction1 = 1.0 - config.adam_beta1**state.t
    correction2 = 1.0 - config.adam_beta2**state.t
    for name, p in named_params:
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient in parameter {name}")
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * (g * g)
        m_hat = m / DTYPE(correction1)
        v_hat = v / DTYPE(correction2)
        p.data = p.data - DTYPE(lr) * m_hat / (np.sqrt(v_hat) + DTYPE(eps))


# --- preprocessing -----------------------------------------------------------


def gcn(image):
    """Normalize one image to zero mean, unit std over all its values.

    Nearly constant images (std below 1e-8) have no contrast to
    normalize; they come back as all zeros with a warning.
    """
    image = T.as_tensor(image)
    std = float(image.data.std())
    if std < GCN_MIN_STD:
        warnings.warn("degenerate image (constant values); returning zeros", stacklevel=2)
        return Tensor(np.zeros_like(image.data))
    mean = image.data.mean(dtype=np.float64)
    return Tensor((image.data - DTYPE(mean)) / DTYPE(std))


def augment(image, config, rng):
    """Random crop to the target size plus a fair-coin horizontal flip.

    Draw order is fixed (row offset, column offset, flip) so a seeded
    generator reproduces the augmentation stream exactly.
    """
    image = T.as_tensor(image)
    src, tgt = config.crop_source_size, config.crop_target_size
    if image.shape[-2] != src or image.shape[-1] != src:
        raise ArgumentError(
            f"augment expects {src}x{src} input, got {image.shape[-2]}x{image.shape[-1]}"
        )
    oy = int(rng.integers(0, src - tgt + 1))
    ox = int(rng.integers(0, src - tgt + 1))
    out = image.data[..., oy : oy + tgt, ox : ox + tgt]
    if config.flip_enabled and rng.random() < 0.5:
        out = out[..., ::-1]
    return Tensor(np.ascontiguousarray(out))


def center_crop(image, target):
    """Deterministic test-time crop to target x target."""
    h, w = image.shape[-2], image.shape[-1]
    if target > h or target > w:
        raise ArgumentError(f"cannot center-crop {h}x{w} to {target}x{target}")
    oy, ox = (h - target) // 2, (w - target) // 2
    return image[..., oy : oy + target, ox : ox + target]


# --- train / evaluate --------------------------------------------------------


@dataclass(frozen=True)
class EpochMetrics:
    epoch: int
    train_loss: float
    train_acc: float
    test_acc: float
    seconds: float


METRICS_HEADER = "epoch,train_loss,train_acc,test_acc,seconds"


def metrics_csv(metrics):
    """Render the per-epoch log in its on-disk CSV form."""
    lines = [METRICS_HEADER]
    lines += [
        f"{m.epoch},{m.train_loss:.6f},{m.train_acc:.6f},{m.test_acc:.6f},{m.seconds:.3f}"
        for m in metrics
    ]
    return "\n".join(lines) + "\n"


@dataclass
class TrainResult:
    network: object
    metrics: list[EpochMetrics] = field(default_factory=list)
    best_epoch: int = 0
    best_test_acc: float = 0.0


@dataclass(frozen=True)
class EvalResult:
    accuracy: float
    confusion: np.ndarray  # [K, K], rows = true class, cols = predicted
    n_items: int


def _batches(indices, batch_size):
    """Contiguous chunks; a trailing singleton merges into the previous chunk."""
    chunks = [indices[i : i + batch_size] for i in range(0, len(indices), batch_size)]
    if len(chunks) >= 2 and len(chunks[-1]) == 1:
        chunks[-2] = np.concatenate([chunks[-2], chunks.pop()])
    return chunks


def _assemble(dataset, indices, config, rng=None):
    """Decode, crop, normalize, and stack one batch."""
    target = config.crop_target_size
    images = []
    labels = np.empty(len(indices), dtype=np.int64)
    for row, idx in enumerate(indices):
        item = dataset.items[idx]
        if rng is not None:
            img = augment(Tensor(item.image), config, rng)
        else:
            img = Tensor(center_crop(item.image, target))
        images.append(gcn(img).data)
        labels[row] = item.label
    return Tensor(np.stack(images)), labels


def train(net, dataset, split, config):
    """Run the epoch loop and return the best-test-accuracy network.

    Expects an already initialized network (see `he_init`). The network
    is mutated in place; on return it carries the parameters and running
    stats of the best epoch.
    """
    train_idx = np.asarray(split.train_indices, dtype=np.int64)
    test_idx = np.asarray(split.test_indices, dtype=np.int64)
    if len(train_idx) == 0 or len(test_idx) == 0:
        raise ArgumentError("split has an empty train or test side")
    if dataset.image_size != config.crop_source_size:
        raise ArgumentError(
            f"dataset images are {dataset.image_size}px but crop source is "
            f"{config.crop_source_size}px"
        )
    c, h, w = net.spec.input_shape
    if (h, w) != (config.crop_target_size, config.crop_target_size):
        raise ArgumentError(
            f"network expects {h}x{w} input but crop target is {config.crop_target_size}"
        )

    rng = np.random.default_rng(config.seed)
    params = net.named_parameters()
    state = OptimizerState.for_params(params)
    result = TrainResult(network=net, best_epoch=0, best_test_acc=-1.0)
    best_state = None

    for epoch in range(1, config.epochs + 1):
        tic = time.perf_counter()
        net.training = True
        order = train_idx[rng.permutation(len(train_idx))]
        loss_sum = 0.0
        hits = 0
        for batch_no, batch_idx in enumerate(_batches(order, config.batch_size), 1):
            xb, yb = _assemble(dataset, batch_idx, config, rng=rng)
            net.zero_grads()
            with Graph() as graph:
                logits = net.forward(xb)
                loss = T.softmax_cross_entropy(logits, yb)
            if not np.isfinite(loss.data):
                raise NumericalError(
                    f"non-finite loss at epoch {epoch}, batch {batch_no}"
                )
            graph.backward(loss)
            adam_step(state, params, config)
            loss_sum += loss.item() * len(batch_idx)
            hits += int((logits.data.argmax(axis=1) == yb).sum())

        test = evaluate(net, dataset, split, config)
        seconds = time.perf_counter() - tic if config.log_timing else 0.0
        result.metrics.append(
            EpochMetrics(
                epoch=epoch,
                train_loss=loss_sum / len(train_idx),
                train_acc=hits / len(train_idx),
                test_acc=test.accuracy,
                seconds=seconds,
            )
        )
        if test.accuracy > result.best_test_acc:
            result.best_test_acc = test.accuracy
            result.best_epoch = epoch
            best_state = net.state_arrays()

    if best_state is not None:
        net.load_state(best_state)
    net.training = False
    return result


def evaluate(net, dataset, split, config=None, batch_size=64):
    """Accuracy and confusion matrix over a split's test side.

    Deterministic: center crop, no flip, inference-mode statistics.
    """
    test_idx = np.asarray(split.test_indices, dtype=np.int64)
    k = len(dataset.classes)
    confusion = np.zeros((k, k), dtype=np.int64)
    if config is None:
        size = net.spec.input_shape[1]
        config = TrainConfig(
            crop_source_size=dataset.image_size,
            crop_target_size=size,
            flip_enabled=False,
        )
    was_training = net.training
    net.training = False
    for start in range(0, len(test_idx), batch_size):
        chunk = test_idx[start : start + batch_size]
        xb, yb = _assemble(dataset, chunk, config, rng=None)
        preds = net.forward(xb).data.argmax(axis=1)
        np.add.at(confusion, (yb, preds), 1)
    net.training = was_training
    total = confusion.sum()
    accuracy = float(np.trace(confusion) / total) if total else 0.0
    return EvalResult(accuracy=accuracy, confusion=confusion, n_items=int(total))
