"""The wavelet CNN: a conv trunk with fixed multiresolution side inputs.

Geometry: every convolution is 3x3. Stride-1 convs use 1x1 padding so
spatial size is preserved; stride-2 convs (also padded) halve it. After
reduction stage s the trunk runs at input_size / 2^s, which is exactly
the size of the level-s wavelet subbands of the input, so those subbands
can be projected through one conv block and concatenated channel-wise
with the trunk (trunk channels first). The trunk ends in a global
average over each feature map ("energy" values, one per channel)
followed by three fully connected layers.

The wavelet side path is computed with fixed filters and owns no
trainable parameters; `count_params` reports it as 0.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, replace

import numpy as np

from . import tensor as T
from .errors import (
    ArgumentError,
    BuildError,
    IntegrityError,
    ShapeError,
    SpecMismatchError,
)
from .tensor import DTYPE, Tensor
from .wavelet import WaveletFilterPair, _dwt2d_data, haar

MAX_LEVELS = 5

SUBBAND_MODES = ("all", "detail-only")

CHECKPOINT_MAGIC = b"WCNN"
CHECKPOINT_VERSION = 1


def _default_stage_channels(base, levels):
    # widen twice, then hold: keeps the deepest stages cheap enough for CPU
    schedule = [base, 2 * base, 2 * base, 4 * base, 4 * base]
    return tuple(schedule[:levels])


@dataclass(frozen=True)
class NetworkSpec:
    """Declarative description of one wavelet CNN instance."""

    input_shape: tuple[int, int, int]  # (C, H, W)
    num_classes: int
    levels: int = 3
    base_channels: int = 32
    subband_mode: str = "all"
    stage_channels: tuple[int, ...] | None = None
    fc_hidden: int | None = None

    def __post_init__(self):
        c, h, w = self.input_shape
        if c < 1 or h < 1 or w < 1:
            raise ArgumentError(f"bad input shape {self.input_shape}")
        if not 1 <= self.levels <= MAX_LEVELS:
            raise ArgumentError(
                f"levels must lie in [1, {MAX_LEVELS}], got {self.levels}"
            )
        if self.num_classes < 2:
            raise ArgumentError(f"need at least 2 classes, got {self.num_classes}")
        if self.base_channels < 1:
            raise ArgumentError(f"base_channels must be positive, got {self.base_channels}")
        if self.subband_mode not in SUBBAND_MODES:
            raise ArgumentError(
                f"subband_mode must be one of {SUBBAND_MODES}, got {self.subband_mode!r}"
            )
        divisor = 2**self.levels
        if h % divisor or w % divisor:
            raise ArgumentError(
                f"input {h}x{w} is not divisible by 2^levels = {divisor}; "
                "odd extents entering a halving stage are rejected at build time"
            )
        if self.stage_channels is None:
            object.__setattr__(
                self,
                "stage_channels",
                _default_stage_channels(self.base_channels, self.levels),
            )
        else:
            object.__setattr__(self, "stage_channels", tuple(self.stage_channels))
        if len(self.stage_channels) != self.levels:
            raise ArgumentError(
                f"stage_channels needs {self.levels} entries, got {len(self.stage_channels)}"
            )
        if any(s < 1 for s in self.stage_channels):
            raise ArgumentError(f"stage channels must be positive: {self.stage_channels}")
        if self.fc_hidden is None:
            object.__setattr__(self, "fc_hidden", 4 * self.base_channels)
        if self.fc_hidden < 1:
            raise ArgumentError(f"fc_hidden must be positive, got {self.fc_hidden}")

    @property
    def subbands_per_level(self):
        return 4 if self.subband_mode == "all" else 3


# --- layers ------------------------------------------------------------------


class Conv2d:
    """3x3 convolution with bias."""

    def __init__(self, name, c_in, c_out, stride=1):
        self.name = name
        self.stride = stride
        self.w = Tensor.param(np.zeros((c_out, c_in, 3, 3), dtype=DTYPE), f"{name}.w")
        self.b = Tensor.param(np.zeros(c_out, dtype=DTYPE), f"{name}.b")

    def __call__(self, x):
        return T.conv2d(x, self.w, self.b, stride=self.stride, pad=1)

    def parameters(self):
        return [self.w, self.b]


class BatchNorm:
    """Per-channel batch normalization with running statistics."""

    def __init__(self, name, channels):
        self.name = name
        self.gamma = Tensor.param(np.ones(channels, dtype=DTYPE), f"{name}.gamma")
        self.beta = Tensor.param(np.zeros(channels, dtype=DTYPE), f"{name}.beta")
        self.running_mean = Tensor(np.zeros(channels, dtype=DTYPE), f"{name}.running_mean")
        self.running_var = Tensor(np.ones(channels, dtype=DTYPE), f"{name}.running_var")

    def __call__(self, x, training):
        return T.batchnorm(
            x, self.gamma, self.beta, self.running_mean, self.running_var, training
        )

    def parameters(self):
        return [self.gamma, self.beta]

    def buffers(self):
        return [self.running_mean, self.running_var]


class Linear:
    def __init__(self, name, n_in, n_out):
        self.name = name
        self.n_in = n_in
        self.w = Tensor.param(np.zeros((n_out, n_in), dtype=DTYPE), f"{name}.w")
        self.b = Tensor.param(np.zeros(n_out, dtype=DTYPE), f"{name}.b")

    def __call__(self, x):
        return T.linear(x, self.w, self.b)

    def parameters(self):
        return [self.w, self.b]


class ConvBlock:
    """conv -> batchnorm -> relu."""

    def __init__(self, name, c_in, c_out, stride=1):
        self.name = name
        self.conv = Conv2d(f"{name}.conv", c_in, c_out, stride=stride)
        self.bn = BatchNorm(f"{name}.bn", c_out)

    def __call__(self, x, training):
        return T.relu(self.bn(self.conv(x), training))


class WaveletLayer:
    """Fixed single-level 2D wavelet split feeding one trunk junction.

    Owns no trainable parameters; `subbands` stacks the level's bands
    along the channel axis (all four, or the three detail bands).
    """

    def __init__(self, name, level, pair, mode):
        self.name = name
        self.level = level
        self.pair = pair
        self.mode = mode

    def split(self, data):
        """One analysis level of [..., C, H, W] data -> (injection, next_ll)."""
        ll, lh, hl, hh = _dwt2d_data(data, self.pair)
        bands = (ll, lh, hl, hh) if self.mode == "all" else (lh, hl, hh)
        return np.concatenate(bands, axis=-3), ll


@dataclass
class Stage:
    wavelet: WaveletLayer
    reduce: ConvBlock
    project: ConvBlock
    fuse: ConvBlock


class Network:
    """An instantiated wavelet CNN; build with `build(spec)`."""

    def __init__(self, spec, pair):
        self.spec = spec
        self.pair = pair
        self.training = False

        c_in, h, w = spec.input_shape
        inject_c = spec.subbands_per_level * c_in
        base = spec.base_channels

        self.stem = ConvBlock("stem", c_in, base)
        self.stages = []
        prev = base
        size = h
        for s, c_s in enumerate(spec.stage_channels, start=1):
            if size % 2:
                raise BuildError(
                    f"stage {s}: trunk size {size} is odd and cannot be halved"
                )
            size //= 2
            expected = h // 2**s
            if size != expected:
                raise BuildError(
                    f"stage {s}: trunk size {size} disagrees with subband size {expected}"
                )
            self.stages.append(
                Stage(
                    wavelet=WaveletLayer(f"stage{s}.wavelet", s, pair, spec.subband_mode),
                    reduce=ConvBlock(f"stage{s}.reduce", prev, c_s, stride=2),
                    project=ConvBlock(f"stage{s}.project", inject_c, base),
                    fuse=ConvBlock(f"stage{s}.fuse", c_s + base, c_s),
                )
            )
            prev = c_s

        self.fc1 = Linear("fc1", prev, spec.fc_hidden)
        self.bn_fc1 = BatchNorm("fc1.bn", spec.fc_hidden)
        self.fc2 = Linear("fc2", spec.fc_hidden, spec.fc_hidden)
        self.bn_fc2 = BatchNorm("fc2.bn", spec.fc_hidden)
        self.fc3 = Linear("fc3", spec.fc_hidden, spec.num_classes)

    # --- structure walks ---

    def _param_layers(self):
        layers = [self.stem.conv, self.stem.bn]
        for st in self.stages:
            layers += [
                st.reduce.conv,
                st.reduce.bn,
                st.project.conv,
                st.project.bn,
                st.fuse.conv,
                st.fuse.bn,
            ]
        layers += [self.fc1, self.bn_fc1, self.fc2, self.bn_fc2, self.fc3]
        return layers

    def named_parameters(self):
        """All trainable tensors, each exactly once, in a fixed order."""
        out = []
        for layer in self._param_layers():
            out.extend((p.name, p) for p in layer.parameters())
        return out

    def named_buffers(self):
        out = []
        for layer in self._param_layers():
            if isinstance(layer, BatchNorm):
                out.extend((b.name, b) for b in layer.buffers())
        return out

    def state_arrays(self):
        """Copies of every parameter and buffer, keyed by name."""
        return {
            name: t.data.copy()
            for name, t in [*self.named_parameters(), *self.named_buffers()]
        }

    def load_state(self, state):
        tensors = dict(self.named_parameters()) | dict(self.named_buffers())
        if set(state) != set(tensors):
            missing = sorted(set(tensors) - set(state))
            extra = sorted(set(state) - set(tensors))
            raise IntegrityError(f"state mismatch: missing {missing}, unexpected {extra}")
        for name, arr in state.items():
            t = tensors[name]
            if arr.shape != t.data.shape:
                raise IntegrityError(
                    f"tensor {name} has shape {arr.shape}, expected {t.data.shape}"
                )
            t.data = arr.astype(DTYPE).copy()

    def zero_grads(self):
        for _, p in self.named_parameters():
            p.zero_grad()

    # --- forward ---

    def forward(self, x):
        """Logits [batch, num_classes] for a batch [batch, C, H, W]."""
        x = T.as_tensor(x)
        if x.ndim != 4 or tuple(x.shape[1:]) != tuple(self.spec.input_shape):
            raise ShapeError(
                f"input must be [batch, {', '.join(map(str, self.spec.input_shape))}], "
                f"got shape {tuple(x.shape)}"
            )
        t = self.stem(x, self.training)
        current = x.data
        for stage in self.stages:
            inject, current = stage.wavelet.split(current)
            t = stage.reduce(t, self.training)
            z = stage.project(Tensor(inject), self.training)
            t = T.concat([t, z], axis=1)
            t = stage.fuse(t, self.training)
        e = T.spatial_mean(t)
        hdn = T.relu(self.bn_fc1(self.fc1(e), self.training))
        hdn = T.relu(self.bn_fc2(self.fc2(hdn), self.training))
        return self.fc3(hdn)


def build(spec, pair=None):
    """Instantiate the network for a spec (weights zero; see he_init)."""
    return Network(spec, pair if pair is not None else haar())


def energy_layer(x):
    """Average each feature map to a single value: [B,C,H,W] -> [B,C]."""
    return T.spatial_mean(x)


# --- parameter accounting ----------------------------------------------------


@dataclass(frozen=True)
class ParamsTable:
    rows: tuple[tuple[str, str, int], ...]  # (layer name, kind, trainable count)
    total: int

    def __str__(self):
        width = max(len(name) for name, _, _ in self.rows)
        lines = [f"{name:<{width}}  {kind:<8}  {count:>10}" for name, kind, count in self.rows]
        lines.append(f"{'total':<{width}}  {'':<8}  {self.total:>10}")
        return "\n".join(lines)


def count_params(net):
    """Exact trainable-parameter counts per layer plus the total.

    Wavelet layers appear with a count of 0: their filters are fixed, not
    registered, and never touched by the optimizer.
    """
    rows = []

    def conv_rows(block):
        rows.append((block.conv.name, "conv", sum(p.size for p in block.conv.parameters())))
        rows.append((block.bn.name, "bnorm", sum(p.size for p in block.bn.parameters())))

    conv_rows(net.stem)
    for stage in net.stages:
        rows.append((stage.wavelet.name, "wavelet", 0))
        conv_rows(stage.reduce)
        conv_rows(stage.project)
        conv_rows(stage.fuse)
    rows.append(("energy", "energy", 0))
    for fc, bn in ((net.fc1, net.bn_fc1), (net.fc2, net.bn_fc2)):
        rows.append((fc.name, "linear", sum(p.size for p in fc.parameters())))
        rows.append((bn.name, "bnorm", sum(p.size for p in bn.parameters())))
    rows.append((net.fc3.name, "linear", sum(p.size for p in net.fc3.parameters())))

    total = sum(count for _, _, count in rows)
    registered = sum(p.size for _, p in net.named_parameters())
    assert total == registered, "layer table out of sync with registered parameters"
    return ParamsTable(rows=tuple(rows), total=total)


# --- checkpoint format -------------------------------------------------------
#
# Little-endian throughout:
#   magic "WCNN" | u32 version |
#   spec block: u32 C,H,W,levels,base,classes,fc_hidden | u8 subband_mode |
#     u8 n_stages, u32 x n stage channels |
#     u8 pair-name length + bytes | u8 filter length, f32 low taps, f32 high taps |
#   u32 tensor count | per tensor: u16 name length + name, u8 ndim,
#     u32 x ndim extents, f32 payload |
#   u32 CRC32 over everything after the 8-byte header.


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.off = 0

    def take(self, n):
        if self.off + n > len(self.buf):
            raise IntegrityError(
                f"checkpoint truncated: needed {n} bytes at offset {self.off}, "
                f"file has {len(self.buf)}"
            )
        out = self.buf[self.off : self.off + n]
        self.off += n
        return out

    def unpack(self, fmt):
        return struct.unpack("<" + fmt, self.take(struct.calcsize("<" + fmt)))


def _spec_block(spec, pair):
    c, h, w = spec.input_shape
    out = [
        struct.pack(
            "<7I",
            c,
            h,
            w,
            spec.levels,
            spec.base_channels,
            spec.num_classes,
            spec.fc_hidden,
        ),
        struct.pack("<B", SUBBAND_MODES.index(spec.subband_mode)),
        struct.pack("<B", len(spec.stage_channels)),
        struct.pack(f"<{len(spec.stage_channels)}I", *spec.stage_channels),
    ]
    name = pair.name.encode()
    out.append(struct.pack("<B", len(name)) + name)
    out.append(struct.pack("<B", len(pair)))
    out.append(pair.k_l.astype("<f4").tobytes())
    out.append(pair.k_h.astype("<f4").tobytes())
    return b"".join(out)


def _read_spec_block(r):
    c, h, w, levels, base, classes, fc_hidden = r.unpack("7I")
    (mode_idx,) = r.unpack("B")
    if mode_idx >= len(SUBBAND_MODES):
        raise IntegrityError(f"unknown subband mode tag {mode_idx}")
    (n_stages,) = r.unpack("B")
    stage_channels = r.unpack(f"{n_stages}I")
    (name_len,) = r.unpack("B")
    pair_name = r.take(name_len).decode()
    (filt_len,) = r.unpack("B")
    k_l = np.frombuffer(r.take(4 * filt_len), dtype="<f4")
    k_h = np.frombuffer(r.take(4 * filt_len), dtype="<f4")
    try:
        spec = NetworkSpec(
            input_shape=(c, h, w),
            num_classes=classes,
            levels=levels,
            base_channels=base,
            subband_mode=SUBBAND_MODES[mode_idx],
            stage_channels=stage_channels,
            fc_hidden=fc_hidden,
        )
    except ArgumentError as exc:
        raise IntegrityError(f"checkpoint carries an unusable spec: {exc}") from exc
    return spec, WaveletFilterPair(k_l=k_l, k_h=k_h, name=pair_name)


def save(net, path):
    """Write the network (spec, filters, parameters, running stats) to disk."""
    body = [_spec_block(net.spec, net.pair)]
    entries = [*net.named_parameters(), *net.named_buffers()]
    body.append(struct.pack("<I", len(entries)))
    for name, t in entries:
        raw = name.encode()
        body.append(struct.pack("<H", len(raw)) + raw)
        body.append(struct.pack("<B", t.ndim))
        body.append(struct.pack(f"<{t.ndim}I", *t.shape))
        body.append(np.ascontiguousarray(t.data, dtype="<f4").tobytes())
    payload = b"".join(body)
    blob = (
        CHECKPOINT_MAGIC
        + struct.pack("<I", CHECKPOINT_VERSION)
        + payload
        + struct.pack("<I", zlib.crc32(payload))
    )
    with open(path, "wb") as fh:
        fh.write(blob)


def load(path, expected_spec=None):
    """Read a checkpoint back into a fresh Network.

    Verifies magic, version, and the trailing CRC before trusting any
    content. If `expected_spec` is given, the stored spec must match it
    exactly.
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 12:
        raise IntegrityError(f"file too short to be a checkpoint ({len(blob)} bytes)")
    if blob[:4] != CHECKPOINT_MAGIC:
        raise IntegrityError(f"bad magic {blob[:4]!r}")
    (version,) = struct.unpack("<I", blob[4:8])
    if version != CHECKPOINT_VERSION:
        raise IntegrityError(f"unsupported checkpoint version {version}")
    payload, (crc_stored,) = blob[8:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(payload) != crc_stored:
        raise IntegrityError("checksum mismatch: checkpoint is corrupt or truncated")

    r = _Reader(payload)
    spec, pair = _read_spec_block(r)
    if expected_spec is not None and spec != expected_spec:
        diffs = [
            f"{name}: {getattr(spec, name)} != {getattr(expected_spec, name)}"
            for name in (
                "input_shape",
                "num_classes",
                "levels",
                "base_channels",
                "subband_mode",
                "stage_channels",
                "fc_hidden",
            )
            if getattr(spec, name) != getattr(expected_spec, name)
        ]
        raise SpecMismatchError("checkpoint spec differs: " + "; ".join(diffs))

    (n_tensors,) = r.unpack("I")
    state = {}
    for _ in range(n_tensors):
        (name_len,) = r.unpack("H")
        name = r.take(name_len).decode()
        (ndim,) = r.unpack("B")
        shape = r.unpack(f"{ndim}I")
        count = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(r.take(4 * count), dtype="<f4").reshape(shape)
        state[name] = arr.astype(DTYPE)
    if r.off != len(payload):
        raise IntegrityError(f"{len(payload) - r.off} trailing bytes after tensor records")

    net = Network(spec, pair)
    net.load_state(state)
    return net


def spec_with(spec, **kwargs):
    """A copy of the spec with fields replaced; derived fields re-derive."""
    if "levels" in kwargs or "base_channels" in kwargs:
        kwargs.setdefault("stage_channels", None)
    if "base_channels" in kwargs:
        kwargs.setdefault("fc_hidden", None)
    return replace(spec, **kwargs)
