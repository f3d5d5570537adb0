"""Convolutional encoder, Adam optimizer and the checkpoint format.

The network is declared by a compact descriptor string, e.g.::

    in=3x40;conv3:16;relu;pool2;conv3:32;relu;pool2;gap;dense:256;relu;dense:64

``in=CxF`` fixes the channel count and the coefficient axis; the time axis is
free because of the global average pool. The last dense layer is the hash
layer and has no activation.
"""

import json
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from ._binio import FormatError, Reader, Writer, checksum64
from .codec import center, check_bits

CHECKPOINT_MAGIC = b"ANET"
CHECKPOINT_VERSION = 1
MIN_FRAMES = 8


class ShapeMismatchError(ValueError):
    """Input or parameters do not fit the architecture descriptor."""


def default_descriptor(hash_bits: int, n_channels: int = 3, n_coeffs: int = 40) -> str:
    return (
        f"in={n_channels}x{n_coeffs};conv3:16;relu;pool2;conv3:32;relu;pool2;gap;"
        f"dense:256;relu;dense:{hash_bits}"
    )


def parse_descriptor(desc: str):
    """Return ``(in_channels, n_coeffs, layers)`` with layers as ``(kind, arg)``."""
    tokens = [t.strip() for t in desc.split(";") if t.strip()]
    if not tokens or not tokens[0].startswith("in="):
        raise ValueError(f"descriptor must start with in=CxF: {desc!r}")
    c, f = tokens[0][3:].split("x")
    layers = []
    for tok in tokens[1:]:
        kind, _, arg = tok.partition(":")
        if kind.startswith("conv"):
            layers.append(("conv", (int(kind[4:]), int(arg))))
        elif kind in ("relu", "pool2", "gap"):
            layers.append((kind, None))
        elif kind == "dense":
            layers.append(("dense", int(arg)))
        else:
            raise ValueError(f"unknown layer {tok!r}")
    if not layers or layers[-1][0] != "dense":
        raise ValueError("descriptor must end in the dense hash layer")
    return int(c), int(f), layers


def _param_shapes(desc: str):
    c, _, layers = parse_descriptor(desc)
    shapes = []
    channels, features = c, None
    for kind, arg in layers:
        if kind == "conv":
            k, o = arg
            shapes += [(o, channels, k, k), (o,)]
            channels = o
        elif kind == "gap":
            features = channels
        elif kind == "dense":
            if features is None:
                raise ValueError("dense layer before global pooling")
            shapes += [(features, arg), (arg,)]
            features = arg
    return shapes


@dataclass
class EncoderParams:
    descriptor: str
    hash_bits: int
    tensors: list
    norm_mean: np.ndarray = field(default_factory=lambda: np.zeros(3, dtype=np.float32))
    norm_std: np.ndarray = field(default_factory=lambda: np.ones(3, dtype=np.float32))
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        check_bits(self.hash_bits)
        shapes = _param_shapes(self.descriptor)
        if shapes[-1] != (self.hash_bits,):
            raise ShapeMismatchError("hash layer width differs from hash_bits")
        if [t.shape for t in self.tensors] != shapes:
            raise ShapeMismatchError("parameter shapes do not match the descriptor")

    @property
    def arrays(self):
        return [t.data for t in self.tensors]

    def copy(self) -> "EncoderParams":
        return EncoderParams(
            self.descriptor,
            self.hash_bits,
            [ad.Tensor(t.data.copy(), requires_grad=True) for t in self.tensors],
            self.norm_mean.copy(),
            self.norm_std.copy(),
            dict(self.config),
        )

    def zero_grad(self):
        for t in self.tensors:
            t.grad = None

    def grads(self):
        return [t.grad if t.grad is not None else np.zeros_like(t.data) for t in self.tensors]


def init_params(hash_bits: int, seed: int = 0, descriptor: str | None = None, dtype=np.float32) -> EncoderParams:
    """Fan-in scaled uniform weights, zero biases."""
    check_bits(hash_bits)
    desc = descriptor or default_descriptor(hash_bits)
    rng = np.random.default_rng(seed)
    tensors = []
    for shape in _param_shapes(desc):
        if len(shape) == 1:
            data = np.zeros(shape, dtype=dtype)
        else:
            fan_in = int(np.prod(shape[1:])) if len(shape) == 4 else shape[0]
            bound = np.sqrt(6.0 / fan_in)
            data = rng.uniform(-bound, bound, size=shape).astype(dtype)
        tensors.append(ad.Tensor(data, requires_grad=True))
    c = parse_descriptor(desc)[0]
    return EncoderParams(desc, hash_bits, tensors, np.zeros(c, np.float32), np.ones(c, np.float32))


def forward(params: EncoderParams, x) -> ad.Tensor:
    """Batched forward pass: ``x: (N, C, T, F)`` (or a single ``(C, T, F)``) -> ``(N, K)``."""
    c, f, layers = parse_descriptor(params.descriptor)
    x = np.asarray(x)
    if x.ndim == 3:
        x = x[None]
    if x.ndim != 4 or x.shape[1] != c or x.shape[3] != f:
        raise ShapeMismatchError(f"input shape {x.shape} does not fit descriptor in={c}x{f}")
    if x.shape[2] < MIN_FRAMES:
        raise ShapeMismatchError(f"need at least {MIN_FRAMES} frames, got {x.shape[2]}")
    dtype = params.tensors[0].data.dtype
    mean = params.norm_mean.astype(dtype)[None, :, None, None]
    std = params.norm_std.astype(dtype)[None, :, None, None]
    h = ad.Tensor(((x.astype(dtype) - mean) / std).astype(dtype))
    it = iter(params.tensors)
    for kind, _ in layers:
        if kind == "conv":
            h = ad.conv2d(h, next(it), next(it))
        elif kind == "relu":
            h = ad.relu(h)
        elif kind == "pool2":
            h = ad.maxpool2x2(h)
        elif kind == "gap":
            h = ad.global_avg_pool(h)
        elif kind == "dense":
            h = ad.dense(h, next(it), next(it))
    return h


@dataclass(frozen=True)
class HashActivation:
    v_h: np.ndarray
    centered: np.ndarray

    @classmethod
    def from_vector(cls, v) -> "HashActivation":
        v = np.asarray(v, dtype=np.float64)
        return cls(v, center(v))


def encoder_forward(params: EncoderParams, x) -> HashActivation:
    out = forward(params, x)
    if out.shape[0] != 1:
        raise ValueError("encoder_forward takes one feature tensor; use forward() for batches")
    return HashActivation.from_vector(out.data[0])


def encode_batch(params: EncoderParams, xs, batch_size: int = 64) -> np.ndarray:
    """Hash-layer activations for a stack of inputs, without recording gradients."""
    frozen = [ad.Tensor(t.data) for t in params.tensors]
    view = replace(params, tensors=frozen)
    out = []
    for start in range(0, len(xs), batch_size):
        out.append(forward(view, np.stack(xs[start:start + batch_size])).data)
    if not out:
        return np.zeros((0, params.hash_bits), dtype=np.float64)
    return np.concatenate(out).astype(np.float64)


# --------------------------------------------------------------------------
# optimizer

@dataclass
class AdamState:
    m: list
    v: list
    step: int = 0

    @classmethod
    def zeros_like(cls, arrays) -> "AdamState":
        return cls([np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays], 0)


def adam_step(params, grads, state: AdamState, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
    """In-place bias-corrected Adam update of the arrays in ``params``."""
    if len(params) != len(grads) or any(p.shape != g.shape for p, g in zip(params, grads)):
        raise ShapeMismatchError("parameter and gradient shapes differ")
    state.step += 1
    t = state.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p -= (lr * (m / c1) / (np.sqrt(v / c2) + eps)).astype(p.dtype)
    return params, state


# --------------------------------------------------------------------------
# checkpoint

def save_checkpoint(params: EncoderParams, path) -> None:
    w = Writer()
    w.raw(CHECKPOINT_MAGIC)
    w.u32(CHECKPOINT_VERSION)
    w.u32(params.hash_bits)
    w.str32(params.descriptor)
    w.u64(checksum64(params.descriptor.encode("utf-8")))
    w.u32(len(params.norm_mean))
    w.array(params.norm_mean, "<f4")
    w.array(params.norm_std, "<f4")
    w.str32(json.dumps(params.config, sort_keys=True))
    w.u32(len(params.tensors))
    for t in params.tensors:
        w.u32(t.data.ndim)
        for d in t.data.shape:
            w.u32(d)
        w.array(t.data, "<f4")
    with open(path, "wb") as fh:
        fh.write(w.getvalue())


def load_checkpoint(path) -> EncoderParams:
    with open(path, "rb") as fh:
        r = Reader(fh.read(), "checkpoint")
    r.expect_magic(CHECKPOINT_MAGIC)
    r.expect_version(CHECKPOINT_VERSION)
    bits = r.u32()
    desc = r.str32()
    if r.u64() != checksum64(desc.encode("utf-8")):
        raise FormatError("checkpoint descriptor hash mismatch")
    n_ch = r.u32()
    mean = r.array(n_ch, "<f4").astype(np.float32)
    std = r.array(n_ch, "<f4").astype(np.float32)
    try:
        config = json.loads(r.str32())
    except json.JSONDecodeError as e:
        raise FormatError("checkpoint config is not valid JSON") from e
    tensors = []
    for _ in range(r.u32()):
        shape = tuple(r.u32() for _ in range(r.u32()))
        data = r.array(int(np.prod(shape)), "<f4").astype(np.float32).reshape(shape)
        tensors.append(ad.Tensor(data, requires_grad=True))
    if not r.at_end():
        raise FormatError("trailing bytes after checkpoint tensors")
    try:
        return EncoderParams(desc, bits, tensors, mean, std, config)
    except (ShapeMismatchError, ValueError) as e:
        raise FormatError(f"checkpoint inconsistent with its descriptor: {e}") from e
