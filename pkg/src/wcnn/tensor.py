"""Dense float32 tensors with reverse-mode automatic differentiation.

The numeric core every other module builds on. A Tensor wraps a numpy
array plus an optional gradient buffer; a Graph is an explicit tape that
records executed ops so the backward pass can replay them in reverse
execution order (which is a reverse topological order of the forward
computation).

Tensors are treated as immutable once created. Parameter updates and
gradient accumulation are the only sanctioned writers: the optimizer
writes `.data`, the tape writes `.grad`. Anything else should build new
tensors, which keeps concurrent read sharing safe.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ArgumentError, GraphStateError, ShapeError

DTYPE = np.float32

BATCHNORM_EPS = 1e-5
BATCHNORM_MOMENTUM = 0.9


class Tensor:
    """n-dimensional array of float32 values with an optional gradient."""

    __slots__ = ("data", "grad", "name", "is_param")

    def __init__(self, data, name=None, is_param=False):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad = None
        self.name = name
        self.is_param = is_param

    @classmethod
    def param(cls, data, name):
        return cls(data, name=name, is_param=True)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        tag = " param" if self.is_param else ""
        name = f" {self.name!r}" if self.name else ""
        return f"Tensor(shape={tuple(self.shape)}{tag}{name})"


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


# --- autodiff tape ---------------------------------------------------------

_ACTIVE: list["Graph"] = []


class Graph:
    """Tape of executed ops, replayed in reverse for backpropagation.

    Ops record themselves only into an active *training* graph; an
    inference graph records nothing, so forward passes under it behave
    exactly like graph-free execution. A graph can run backward once;
    a second call without a fresh forward pass is a state error.
    """

    TRAINING = "training"
    INFERENCE = "inference"

    def __init__(self, mode=TRAINING):
        if mode not in (self.TRAINING, self.INFERENCE):
            raise ArgumentError(f"unknown graph mode {mode!r}")
        self.mode = mode
        self._tape = []  # (output tensor, grad_fn) in execution order
        self._spent = False

    def __enter__(self):
        _ACTIVE.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _ACTIVE.pop()
        assert popped is self
        return False

    def backward(self, loss):
        """Populate grads of everything that contributed to `loss`."""
        if self._spent:
            raise GraphStateError(
                "backward already ran on this graph; record a new forward pass first"
            )
        if self.mode != self.TRAINING:
            raise GraphStateError("cannot run backward on an inference graph")
        loss = as_tensor(loss)
        if loss.size != 1:
            raise ArgumentError(f"backward needs a scalar loss, got shape {loss.shape}")
        self._spent = True
        loss.grad = np.ones_like(loss.data)
        for out, grad_fn in reversed(self._tape):
            if out.grad is not None:
                grad_fn(out.grad)


def _recording():
    return bool(_ACTIVE) and _ACTIVE[-1].mode == Graph.TRAINING


def _record(out, grad_fn):
    _ACTIVE[-1]._tape.append((out, grad_fn))


def _accum(t, g):
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def backward(loss, graph):
    """Functional alias for `graph.backward(loss)`."""
    graph.backward(loss)


# --- convolution -----------------------------------------------------------


def _im2col(xp, k_h, k_w, stride):
    """Flatten every (k_h, k_w) window of a padded NCHW batch into rows.

    Returns an array of shape [B*H'*W', C*k_h*k_w]; row-major over
    (batch, out_row, out_col) so a single GEMM against the flattened
    kernel computes the whole convolution.
    """
    win = sliding_window_view(xp, (k_h, k_w), axis=(2, 3))[:, :, ::stride, ::stride]
    b, c, h_out, w_out = win.shape[:4]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(b * h_out * w_out, c * k_h * k_w)
    return np.ascontiguousarray(cols), (h_out, w_out)


def conv2d(x, w, bias, stride=1, pad=0):
    """Cross-correlate x with w under zero padding, sampling every `stride` pixels.

    x is [C,H,W] or [B,C,H,W]; w is [C_out,C_in,kH,kW]; bias is [C_out].
    Output spatial extents are floor((H + 2*pad - kH)/stride) + 1 (same
    for W). Kernels are applied unflipped, as is CNN convention.
    """
    x, w, bias = as_tensor(x), as_tensor(w), as_tensor(bias)
    if not isinstance(stride, (int, np.integer)) or stride <= 0:
        raise ArgumentError(f"stride must be a positive integer, got {stride!r}")
    if not isinstance(pad, (int, np.integer)) or pad < 0:
        raise ArgumentError(f"pad must be a non-negative integer, got {pad!r}")
    if w.ndim != 4:
        raise ShapeError(f"kernel must be 4D [C_out,C_in,kH,kW], got shape {w.shape}")
    if x.ndim not in (3, 4):
        raise ShapeError(f"input must be [C,H,W] or [B,C,H,W], got shape {x.shape}")
    batched = x.ndim == 4
    xd = x.data if batched else x.data[None]
    b, c, h, wdt = xd.shape
    c_out, c_in, k_h, k_w = w.shape
    if c != c_in:
        raise ShapeError(f"input has {c} channels but kernel expects {c_in}")
    if bias.shape != (c_out,):
        raise ShapeError(f"bias must have shape ({c_out},), got {bias.shape}")
    if h + 2 * pad < k_h or wdt + 2 * pad < k_w:
        raise ArgumentError(
            f"kernel {k_h}x{k_w} does not fit input {h}x{wdt} with pad {pad}"
        )

    xp = np.pad(xd, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    cols, (h_out, w_out) = _im2col(xp, k_h, k_w, stride)
    w_mat = w.data.reshape(c_out, -1)
    out = cols @ w_mat.T
    out += bias.data
    out = out.reshape(b, h_out, w_out, c_out).transpose(0, 3, 1, 2)
    y = Tensor(np.ascontiguousarray(out if batched else out[0]))

    if _recording():

        def grad_fn(g):
            g4 = g if batched else g[None]
            g_mat = np.ascontiguousarray(g4.transpose(0, 2, 3, 1)).reshape(-1, c_out)
            # recompute the column matrix rather than keeping it alive
            xp_b = np.pad(xd, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
            cols_b, _ = _im2col(xp_b, k_h, k_w, stride)
            _accum(w, (g_mat.T @ cols_b).reshape(w.shape))
            _accum(bias, g_mat.sum(axis=0))
            g_cols = (g_mat @ w_mat).reshape(b, h_out, w_out, c, k_h, k_w)
            g_xp = np.zeros_like(xp_b)
            for u in range(k_h):
                for v in range(k_w):
                    g_xp[
                        :,
                        :,
                        u : u + (h_out - 1) * stride + 1 : stride,
                        v : v + (w_out - 1) * stride + 1 : stride,
                    ] += g_cols[:, :, :, :, u, v].transpose(0, 3, 1, 2)
            g_x = g_xp[:, :, pad : pad + h, pad : pad + wdt]
            _accum(x, g_x if batched else g_x[0])

        _record(y, grad_fn)
    return y


def downsample(x, p):
    """Keep every p-th element starting at index 0 along each spatial axis.

    Spatial axes are the last two (the last one for 1D tensors). Extents
    must be divisible by p; upstream layers are expected to reject odd
    sizes rather than let truncation happen silently here.
    """
    x = as_tensor(x)
    if not isinstance(p, (int, np.integer)) or p <= 0:
        raise ArgumentError(f"downsampling stride must be a positive integer, got {p!r}")
    n_spatial = min(x.ndim, 2)
    if n_spatial == 0:
        raise ShapeError("cannot downsample a 0-d tensor")
    for ax in range(x.ndim - n_spatial, x.ndim):
        if x.shape[ax] % p != 0:
            raise ArgumentError(
                f"extent {x.shape[ax]} along axis {ax} is not divisible by {p}"
            )
    sl = (Ellipsis,) + (slice(None, None, p),) * n_spatial
    y = Tensor(x.data[sl].copy())

    if _recording():

        def grad_fn(g):
            gx = np.zeros_like(x.data)
            gx[sl] = g
            _accum(x, gx)

        _record(y, grad_fn)
    return y


def avg_pool(x, p):
    """Average over non-overlapping p x p blocks of the last two axes."""
    x = as_tensor(x)
    if not isinstance(p, (int, np.integer)) or p <= 0:
        raise ArgumentError(f"pooling support must be a positive integer, got {p!r}")
    if x.ndim < 2:
        raise ShapeError(f"avg_pool needs at least 2 dimensions, got shape {x.shape}")
    h, w = x.shape[-2], x.shape[-1]
    if h % p or w % p:
        raise ArgumentError(f"spatial extents {h}x{w} are not divisible by {p}")
    lead = x.shape[:-2]
    blocks = x.data.reshape(*lead, h // p, p, w // p, p)
    y = Tensor(blocks.mean(axis=(-3, -1)))

    if _recording():

        def grad_fn(g):
            gb = np.broadcast_to(
                g[..., :, None, :, None] / DTYPE(p * p), (*lead, h // p, p, w // p, p)
            )
            _accum(x, gb.reshape(x.shape))

        _record(y, grad_fn)
    return y


# --- pointwise and dense ops -------------------------------------------------


def relu(x):
    x = as_tensor(x)
    y = Tensor(np.maximum(x.data, 0))
    if _recording():
        mask = x.data > 0

        def grad_fn(g):
            _accum(x, g * mask)

        _record(y, grad_fn)
    return y


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"add needs matching shapes, got {a.shape} and {b.shape}")
    y = Tensor(a.data + b.data)
    if _recording():

        def grad_fn(g):
            _accum(a, g)
            _accum(b, g)

        _record(y, grad_fn)
    return y


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"mul needs matching shapes, got {a.shape} and {b.shape}")
    y = Tensor(a.data * b.data)
    if _recording():

        def grad_fn(g):
            _accum(a, g * b.data)
            _accum(b, g * a.data)

        _record(y, grad_fn)
    return y


def tsum(x):
    """Sum of all elements, as a scalar tensor."""
    x = as_tensor(x)
    y = Tensor(x.data.sum(dtype=DTYPE))
    if _recording():

        def grad_fn(g):
            _accum(x, np.broadcast_to(g, x.shape).astype(DTYPE))

        _record(y, grad_fn)
    return y


def linear(x, w, b):
    """Affine map y = x @ w.T + b; x is [n] or [batch, n], w is [m, n]."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if w.ndim != 2:
        raise ShapeError(f"weight must be 2D [m,n], got shape {w.shape}")
    m, n = w.shape
    if b.shape != (m,):
        raise ShapeError(f"bias must have shape ({m},), got {b.shape}")
    if x.ndim not in (1, 2) or x.shape[-1] != n:
        raise ShapeError(f"input must be [{n}] or [batch,{n}], got shape {x.shape}")
    batched = x.ndim == 2
    xd = x.data if batched else x.data[None]
    out = xd @ w.data.T + b.data
    y = Tensor(out if batched else out[0])

    if _recording():

        def grad_fn(g):
            g2 = g if batched else g[None]
            _accum(w, g2.T @ xd)
            _accum(b, g2.sum(axis=0))
            gx = g2 @ w.data
            _accum(x, gx if batched else gx[0])

        _record(y, grad_fn)
    return y


def batchnorm(
    x,
    gamma,
    beta,
    running_mean,
    running_var,
    training,
    momentum=BATCHNORM_MOMENTUM,
    eps=BATCHNORM_EPS,
):
    """Normalize per channel with batch statistics (training) or running ones.

    x is [B,C,H,W] (channel axis 1) or [B,n] (feature axis 1). Training
    mode needs batch >= 2 since a single sample has degenerate variance;
    it also updates the running averages in place, which is the one
    mutation this op performs.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if x.ndim == 4:
        axes = (0, 2, 3)
        pshape = (1, -1, 1, 1)
    elif x.ndim == 2:
        axes = (0,)
        pshape = (1, -1)
    else:
        raise ShapeError(f"batchnorm input must be 2D or 4D, got shape {x.shape}")
    c = x.shape[1]
    for p, label in ((gamma, "gamma"), (beta, "beta")):
        if p.shape != (c,):
            raise ShapeError(f"{label} must have shape ({c},), got {p.shape}")

    if training:
        if x.shape[0] < 2:
            raise ArgumentError(
                "batchnorm in training mode needs a batch of at least 2 samples"
            )
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        running_mean.data *= DTYPE(momentum)
        running_mean.data += DTYPE(1 - momentum) * mean
        running_var.data *= DTYPE(momentum)
        running_var.data += DTYPE(1 - momentum) * var
    else:
        mean = running_mean.data
        var = running_var.data

    inv_std = 1.0 / np.sqrt(var + DTYPE(eps))
    x_hat = (x.data - mean.reshape(pshape)) * inv_std.reshape(pshape)
    y = Tensor(gamma.data.reshape(pshape) * x_hat + beta.data.reshape(pshape))

    if _recording():
        n_red = x.data.size // c

        def grad_fn(g):
            _accum(gamma, (g * x_hat).sum(axis=axes))
            _accum(beta, g.sum(axis=axes))
            g_hat = g * gamma.data.reshape(pshape)
            if training:
                # gradient through the batch statistics themselves
                s1 = g_hat.sum(axis=axes, keepdims=True)
                s2 = (g_hat * x_hat).sum(axis=axes, keepdims=True)
                gx = (g_hat - s1 / n_red - x_hat * s2 / n_red) * inv_std.reshape(pshape)
            else:
                gx = g_hat * inv_std.reshape(pshape)
            _accum(x, gx.astype(DTYPE))

        _record(y, grad_fn)
    return y


def concat(parts, axis=1):
    """Concatenate tensors along an axis (channel axis by default)."""
    parts = [as_tensor(p) for p in parts]
    if not parts:
        raise ArgumentError("concat needs at least one tensor")
    y = Tensor(np.concatenate([p.data for p in parts], axis=axis))

    if _recording():
        sizes = [p.shape[axis] for p in parts]

        def grad_fn(g):
            offset = 0
            for p, s in zip(parts, sizes):
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(offset, offset + s)
                _accum(p, g[tuple(sl)])
                offset += s

        _record(y, grad_fn)
    return y


def spatial_mean(x):
    """Mean over the spatial axes of [B,C,H,W] (or [C,H,W]), keeping channels."""
    x = as_tensor(x)
    if x.ndim not in (3, 4):
        raise ShapeError(f"spatial_mean input must be 3D or 4D, got shape {x.shape}")
    h, w = x.shape[-2], x.shape[-1]
    y = Tensor(x.data.mean(axis=(-2, -1)))

    if _recording():

        def grad_fn(g):
            gx = np.broadcast_to(
                (g / DTYPE(h * w))[..., None, None], x.shape
            ).astype(DTYPE)
            _accum(x, gx)

        _record(y, grad_fn)
    return y


def softmax_cross_entropy(logits, labels):
    """Mean over the batch of -log softmax(logits)[label].

    logits is [batch, K]; labels an integer array of shape [batch] with
    values in [0, K).
    """
    logits = as_tensor(logits)
    if logits.ndim != 2:
        raise ShapeError(f"logits must be [batch, K], got shape {logits.shape}")
    b, k = logits.shape
    labels = np.asarray(labels)
    if labels.shape != (b,):
        raise ShapeError(f"labels must have shape ({b},), got {labels.shape}")
    if not np.issubdtype(labels.dtype, np.integer):
        raise ArgumentError("labels must be integers")
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= k:
        raise ArgumentError(f"labels must lie in [0, {k})")

    z = logits.data - logits.data.max(axis=1, keepdims=True)
    log_probs = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    loss = Tensor(-log_probs[np.arange(b), labels].mean(dtype=DTYPE))

    if _recording():
        probs = np.exp(log_probs)

        def grad_fn(g):
            gl = probs.copy()
            gl[np.arange(b), labels] -= 1.0
            _accum(logits, gl * (g / DTYPE(b)))

        _record(loss, grad_fn)
    return loss
