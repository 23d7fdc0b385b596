"""Encoder-decoder generator, critic, initializer, optimizer, checkpoints.

The generator squeezes an image through a configurable bottleneck,
appends Gaussian noise channels there, and decodes back to image shape
with a tanh squash to [-1, 1]. The critic maps an image to an n-vector
(its "feature" head) plus the scalar sum of that vector; the scalar head
equals the vector sum by construction, never by a separate set of
weights.
"""

from __future__ import annotations

import struct
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

CHECKPOINT_MAGIC = b"ADVT"
CHECKPOINT_VERSION = 1


class NonFiniteGradient(RuntimeError):
    """A parameter gradient went NaN/Inf; the run must abort."""


def _he_conv(rng, cout, cin, kh, kw, dtype):
    std = np.sqrt(2.0 / (cin * kh * kw))
    return (rng.standard_normal((cout, cin, kh, kw)) * std).astype(dtype)


def _he_dense(rng, nin, nout, dtype):
    std = np.sqrt(2.0 / nin)
    return (rng.standard_normal((nin, nout)) * std).astype(dtype)


def _stage_widths(n_down: int, final: int) -> tuple:
    ramp = (16, 24, 32, 48, 64)
    widths = [ramp[min(i, len(ramp) - 1)] for i in range(n_down)]
    widths[-1] = final
    return tuple(widths)


@dataclass(frozen=True)
class GeneratorSpec:
    image_size: int = 32
    channels: int = 1
    bottleneck: tuple = (32, 4, 4)  # (c, h, w)
    noise_dim: int = 4
    stem_width: int = 12
    downsample: str = "conv"  # "conv" = stride-2 conv; "avgpool" = avgpool2x

    def __post_init__(self):
        c, h, w = self.bottleneck
        if h != w or self.image_size % h:
            raise ValueError(f"bottleneck {self.bottleneck} incompatible with image {self.image_size}")
        n = self.image_size // h
        if n < 2 or n & (n - 1):
            raise ValueError(f"image/bottleneck ratio {n} must be a power of two >= 2")
        if self.downsample not in ("conv", "avgpool"):
            raise ValueError(f"unknown downsample mode {self.downsample!r}")

    @property
    def n_down(self) -> int:
        return int(round(np.log2(self.image_size // self.bottleneck[1])))

    @property
    def encoder_widths(self) -> tuple:
        return _stage_widths(self.n_down, self.bottleneck[0])

    @property
    def decoder_widths(self) -> tuple:
        return tuple(reversed(self.encoder_widths[:-1])) + (self.stem_width,)


@dataclass(frozen=True)
class CriticSpec:
    image_size: int = 32
    channels: int = 1
    vector_dim: int = 64  # n of the feature head; the scalar head sums it
    stem_width: int = 12
    min_hw: int = 4

    @property
    def n_down(self) -> int:
        n = int(round(np.log2(self.image_size // self.min_hw)))
        if self.min_hw << n != self.image_size:
            raise ValueError(f"image {self.image_size} not a power-of-two multiple of {self.min_hw}")
        return n

    @property
    def trunk_widths(self) -> tuple:
        return _stage_widths(self.n_down, 32)


class Generator:
    """G(x, z): conv encoder, noise concat at the bottleneck, conv decoder."""

    def __init__(self, spec: GeneratorSpec, params: OrderedDict, dtype=np.float32):
        self.spec = spec
        self.params = params
        self.dtype = dtype

    @classmethod
    def build(cls, spec: GeneratorSpec, seed: int, dtype=np.float32) -> "Generator":
        rng = np.random.default_rng(np.random.SeedSequence([int(seed)]))
        p = OrderedDict()
        cin = spec.channels
        p["enc.stem.w"] = Tensor(_he_conv(rng, spec.stem_width, cin, 3, 3, dtype))
        p["enc.stem.b"] = Tensor(np.zeros((spec.stem_width, 1, 1), dtype))
        wprev = spec.stem_width
        for i, wout in enumerate(spec.encoder_widths):
            p[f"enc.down{i}.w"] = Tensor(_he_conv(rng, wout, wprev, 3, 3, dtype))
            p[f"enc.down{i}.b"] = Tensor(np.zeros((wout, 1, 1), dtype))
            wprev = wout
        wprev = spec.bottleneck[0] + spec.noise_dim
        for i, wout in enumerate(spec.decoder_widths):
            p[f"dec.up{i}.w"] = Tensor(_he_conv(rng, wout, wprev, 3, 3, dtype))
            p[f"dec.up{i}.b"] = Tensor(np.zeros((wout, 1, 1), dtype))
            wprev = wout
        p["dec.out.w"] = Tensor(_he_conv(rng, spec.channels, wprev, 3, 3, dtype))
        p["dec.out.b"] = Tensor(np.zeros((spec.channels, 1, 1), dtype))
        return cls(spec, p, dtype)

    def forward(self, x: Tensor, z: Tensor) -> Tensor:
        s = self.spec
        b = x.shape[0]
        if x.shape[1:] != (s.channels, s.image_size, s.image_size):
            raise ad.ShapeMismatch(
                f"generator built for {(s.channels, s.image_size, s.image_size)}, got input {x.shape}")
        c, h, w = s.bottleneck
        if s.noise_dim and z.shape != (b, s.noise_dim, h, w):
            raise ad.ShapeMismatch(
                f"noise must be {(b, s.noise_dim, h, w)}, got {z.shape}")
        p = self.params
        t = ad.relu(ad.add(ad.conv2d(x, p["enc.stem.w"], 1, 1), p["enc.stem.b"]))
        for i in range(len(s.encoder_widths)):
            if s.downsample == "avgpool":
                t = ad.avgpool2x(t)
                t = ad.conv2d(t, p[f"enc.down{i}.w"], 1, 1)
            else:
                t = ad.conv2d(t, p[f"enc.down{i}.w"], 2, 1)
            t = ad.relu(ad.add(t, p[f"enc.down{i}.b"]))
        if s.noise_dim:
            t = ad.concat([t, z], axis=1)
        for i in range(len(s.decoder_widths)):
            t = ad.nearest_upsample2x(t)
            t = ad.relu(ad.add(ad.conv2d(t, p[f"dec.up{i}.w"], 1, 1), p[f"dec.up{i}.b"]))
        t = ad.add(ad.conv2d(t, p["dec.out.w"], 1, 1), p["dec.out.b"])
        return ad.tanh(t)

    def named_params(self):
        return list(self.params.items())

    def state(self) -> OrderedDict:
        return OrderedDict((k, v.data) for k, v in self.params.items())

    def load_state(self, state: dict):
        _load_into(self.params, state, "generator")


class Critic:
    """D(x): conv trunk, dense vector head, scalar head = sum of the vector."""

    def __init__(self, spec: CriticSpec, params: OrderedDict, dtype=np.float32):
        self.spec = spec
        self.params = params
        self.dtype = dtype

    @classmethod
    def build(cls, spec: CriticSpec, seed: int, dtype=np.float32) -> "Critic":
        rng = np.random.default_rng(np.random.SeedSequence([int(seed)]))
        p = OrderedDict()
        p["trunk.stem.w"] = Tensor(_he_conv(rng, spec.stem_width, spec.channels, 3, 3, dtype))
        p["trunk.stem.b"] = Tensor(np.zeros((spec.stem_width, 1, 1), dtype))
        wprev = spec.stem_width
        for i, wout in enumerate(spec.trunk_widths):
            p[f"trunk.down{i}.w"] = Tensor(_he_conv(rng, wout, wprev, 3, 3, dtype))
            p[f"trunk.down{i}.b"] = Tensor(np.zeros((wout, 1, 1), dtype))
            wprev = wout
        nin = wprev * spec.min_hw * spec.min_hw
        p["head.w"] = Tensor(_he_dense(rng, nin, spec.vector_dim, dtype))
        p["head.b"] = Tensor(np.zeros((spec.vector_dim,), dtype))
        return cls(spec, p, dtype)

    def forward(self, x: Tensor):
        """Returns (vector (B,n), scalar (B,)); scalar is the vector's row sum."""
        s = self.spec
        if x.shape[1:] != (s.channels, s.image_size, s.image_size):
            raise ad.ShapeMismatch(
                f"critic built for {(s.channels, s.image_size, s.image_size)}, got input {x.shape}")
        p = self.params
        t = ad.leaky_relu(ad.add(ad.conv2d(x, p["trunk.stem.w"], 1, 1), p["trunk.stem.b"]))
        for i in range(len(s.trunk_widths)):
            t = ad.leaky_relu(ad.add(ad.conv2d(t, p[f"trunk.down{i}.w"], 2, 1),
                                     p[f"trunk.down{i}.b"]))
        flat = ad.reshape(t, (x.shape[0], -1))
        vec = ad.dense(flat, p["head.w"], p["head.b"])
        return vec, ad.sum_(vec, axis=1)

    def named_params(self):
        return list(self.params.items())

    def state(self) -> OrderedDict:
        return OrderedDict((k, v.data) for k, v in self.params.items())

    def load_state(self, state: dict):
        _load_into(self.params, state, "critic")


def _load_into(params: OrderedDict, state: dict, what: str):
    missing = set(params) - set(state)
    extra = set(state) - set(params)
    if missing or extra:
        raise ValueError(f"{what} state mismatch: missing={sorted(missing)} extra={sorted(extra)}")
    for k, t in params.items():
        arr = np.asarray(state[k], dtype=t.data.dtype)
        if arr.shape != t.data.shape:
            raise ValueError(f"{what} param {k}: shape {arr.shape} != {t.data.shape}")
        t.data = arr.copy()


class NoiseSource:
    """Seeded Gaussian z-sampler; identical seed gives an identical stream."""

    def __init__(self, seed: int, noise_dim: int, h: int, w: int, dtype=np.float32):
        self.rng = np.random.default_rng(np.random.SeedSequence([int(seed)]))
        self.noise_dim, self.h, self.w, self.dtype = noise_dim, h, w, dtype

    def sample(self, batch: int) -> Tensor:
        z = self.rng.standard_normal((batch, self.noise_dim, self.h, self.w))
        return Tensor(z.astype(self.dtype))


class Adam:
    """Adam with bias correction over an ordered set of named parameters."""

    def __init__(self, named_params, lr=2e-4, beta1=0.5, beta2=0.999, eps=1e-8):
        self.named_params = list(named_params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.named_params}
        self.v = {k: np.zeros_like(p.data) for k, p in self.named_params}

    def step(self):
        """Apply one update from the gradients stored on the parameters."""
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for name, p in self.named_params:
            g = p.grad
            if g is None:
                raise RuntimeError(f"parameter {name} has no gradient; run backward first")
            if not np.all(np.isfinite(g)):
                raise NonFiniteGradient(f"non-finite gradient in parameter {name}")
            m = self.m[name]
            v = self.v[name]
            m += (1.0 - b1) * (g - m)
            v += (1.0 - b2) * (g * g - v)
            p.data -= (self.lr / c1) * m / (np.sqrt(v / c2) + self.eps)


def clip_critic_weights(critic: Critic, c: float):
    """Clamp every critic parameter into [-c, c] (Lipschitz control)."""
    if c <= 0:
        raise ValueError(f"clip bound must be positive, got {c}")
    for _, p in critic.named_params():
        np.clip(p.data, -c, c, out=p.data)


def save_params(path, named_arrays):
    """Write named float32 tensors in the documented checkpoint format.

    Layout, all little-endian: magic "ADVT", u32 version, u64 tensor
    count, then per tensor u32 name length, utf-8 name, u32 rank,
    u32 extents, raw float32 data in row-major order.
    """
    items = list(named_arrays.items())
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", CHECKPOINT_VERSION))
        f.write(struct.pack("<Q", len(items)))
        for name, arr in items:
            nb = name.encode("utf-8")
            a = np.ascontiguousarray(arr, dtype="<f4")
            f.write(struct.pack("<I", len(nb)))
            f.write(nb)
            f.write(struct.pack("<I", a.ndim))
            f.write(struct.pack(f"<{a.ndim}I", *a.shape))
            f.write(a.tobytes())


def load_params(path) -> OrderedDict:
    """Read a checkpoint written by save_params; raises on malformed files."""
    with open(path, "rb") as f:
        blob = f.read()
    off = 0

    def take(n, what):
        nonlocal off
        if off + n > len(blob):
            raise ValueError(f"truncated checkpoint: wanted {what} at byte {off}")
        piece = blob[off:off + n]
        off += n
        return piece

    if take(4, "magic") != CHECKPOINT_MAGIC:
        raise ValueError("not a checkpoint file (bad magic)")
    (version,) = struct.unpack("<I", take(4, "version"))
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    (count,) = struct.unpack("<Q", take(8, "tensor count"))
    out = OrderedDict()
    for _ in range(count):
        (nlen,) = struct.unpack("<I", take(4, "name length"))
        name = take(nlen, "name").decode("utf-8")
        (rank,) = struct.unpack("<I", take(4, "rank"))
        shape = struct.unpack(f"<{rank}I", take(4 * rank, "extents"))
        n = int(np.prod(shape)) if rank else 1
        data = np.frombuffer(take(4 * n, f"data of {name}"), dtype="<f4")
        out[name] = data.reshape(shape).astype(np.float32)
    if off != len(blob):
        raise ValueError(f"{len(blob) - off} trailing bytes after last tensor")
    return out
