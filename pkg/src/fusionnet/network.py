"""Fully residual encoder-decoder network built from summation skips.

The topology is a symmetric autoencoder: each encoder level is a
convolutional block, a residual block, another convolutional block, and a
2x2 max pool; a bridge level repeats conv-res-conv at double width; each
decoder level upsamples with a learnable stride-2 transposed convolution,
merges the same-resolution encoder features by elementwise addition (never
concatenation), and runs conv-res-conv.  Feature width doubles per encoder
level and halves per decoder level, so the two paths mirror each other
exactly.  A final convolution plus sigmoid produces a per-pixel probability
map at the input resolution.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .tensor import (
    Adam,
    Parameter,
    Tensor,
    add,
    batch_norm,
    conv2d,
    conv2d_transpose,
    he_init,
    maxpool2x2,
    no_grad,
    relu,
    sigmoid,
)

__all__ = ["NetworkSpec", "FusionNet", "ConvBlock", "ResidualBlock", "EncoderLevel", "Bridge", "DecoderLevel"]

BLOCK_ORDERS = ("conv_relu_bn", "conv_bn_relu")


@dataclass(frozen=True)
class NetworkSpec:
    """Declarative description of the network; the parameter set is a pure
    function of this plus the seed.

    ``levels`` counts down/up pairs; the bridge sits below them, so the
    network spans levels + 1 resolutions.  Feature width at level d is
    base_features * 2**(d-1).  The default is a desk-scale configuration
    small enough to gradient-check and overfit on a CPU.
    """

    levels: int = 2
    base_features: int = 8
    input_size: tuple[int, int] = (64, 64)
    input_channels: int = 1
    output_channels: int = 1
    kernel_size: int = 3
    block_order: str = "conv_relu_bn"

    def __post_init__(self):
        if self.levels < 1:
            raise ValueError(f"levels must be >= 1, got {self.levels}")
        if self.base_features < 1:
            raise ValueError(f"base_features must be >= 1, got {self.base_features}")
        if self.kernel_size % 2 != 1:
            raise ValueError(f"kernel_size must be odd, got {self.kernel_size}")
        if self.block_order not in BLOCK_ORDERS:
            raise ValueError(f"block_order must be one of {BLOCK_ORDERS}, got {self.block_order!r}")
        h, w = self.input_size
        div = 2**self.levels
        if h % div or w % div:
            raise ValueError(
                f"input size {h}x{w} must be divisible by 2^levels = {div}"
            )

    def width(self, level: int) -> int:
        """Feature maps at encoder/decoder level ``level`` (1-based)."""
        return self.base_features * 2 ** (level - 1)

    @property
    def bridge_width(self) -> int:
        return self.base_features * 2**self.levels

    def shape_table(self) -> list[tuple[str, str, list[tuple[int, int, int]]]]:
        """Per-block feature-map sizes (H, W, C), computed without building
        or running the network."""
        h, w = self.input_size
        rows: list[tuple[str, str, list[tuple[int, int, int]]]] = [
            ("inputs", "", [(h, w, self.input_channels)])
        ]
        for d in range(1, self.levels + 1):
            c = self.width(d)
            rows.append(
                (f"down {d}", "conv + res + conv + maxpooling", [(h, w, c), (h // 2, w // 2, c)])
            )
            h, w = h // 2, w // 2
        rows.append(("bridge", "conv + res + conv", [(h, w, self.bridge_width)]))
        for d in range(self.levels, 0, -1):
            h, w = h * 2, w * 2
            c = self.width(d)
            rows.append(
                (f"upscaling {d}", "deconv + merge + conv + res + conv", [(h, w, c), (h, w, c)])
            )
        rows.append(("output", "conv", [(h, w, self.output_channels)]))
        return rows


class ConvBlock:
    """Convolution optionally followed by ReLU activation and batch
    normalization, in the configured order."""

    def __init__(
        self,
        name: str,
        c_in: int,
        c_out: int,
        kernel_size: int,
        rng: np.random.Generator,
        order: str = "conv_relu_bn",
        normalized: bool = True,
    ):
        self.name = name
        self.order = order
        self.normalized = normalized
        self.weight = Parameter(he_init((c_out, c_in, kernel_size, kernel_size), rng).data, f"{name}.weight")
        self.bias = Parameter(np.zeros(c_out, dtype=np.float32), f"{name}.bias")
        if normalized:
            self.gamma = Parameter(np.ones(c_out, dtype=np.float32), f"{name}.gamma")
            self.beta = Parameter(np.zeros(c_out, dtype=np.float32), f"{name}.beta")
            self.running_mean = np.zeros(c_out, dtype=np.float32)
            self.running_var = np.ones(c_out, dtype=np.float32)

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        h = conv2d(x, self.weight, self.bias)
        if not self.normalized:
            return h
        if self.order == "conv_relu_bn":
            h = relu(h)
            h = batch_norm(h, self.gamma, self.beta, self.running_mean, self.running_var, training)
        else:
            h = batch_norm(h, self.gamma, self.beta, self.running_mean, self.running_var, training)
            h = relu(h)
        return h

    def parameters(self) -> Iterator[Parameter]:
        yield self.weight
        yield self.bias
        if self.normalized:
            yield self.gamma
            yield self.beta

    def buffers(self) -> Iterator[tuple[str, np.ndarray]]:
        if self.normalized:
            yield f"{self.name}.running_mean", self.running_mean
            yield f"{self.name}.running_var", self.running_var


class Deconv:
    """Learnable stride-2 upsampling; doubles the spatial size exactly."""

    def __init__(self, name: str, c_in: int, c_out: int, rng: np.random.Generator):
        self.name = name
        self.weight = Parameter(he_init((c_in, c_out, 2, 2), rng).data, f"{name}.weight")
        self.bias = Parameter(np.zeros(c_out, dtype=np.float32), f"{name}.bias")

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d_transpose(x, self.weight, self.bias)

    def parameters(self) -> Iterator[Parameter]:
        yield self.weight
        yield self.bias

    def buffers(self) -> Iterator[tuple[str, np.ndarray]]:
        return iter(())


class ResidualBlock:
    """y = x + F(x) with F three stacked convolutional blocks at fixed width.

    The identity path gives every level a gradient route that bypasses F.
    """

    def __init__(self, name: str, width: int, kernel_size: int, rng: np.random.Generator, order: str):
        self.name = name
        self.width = width
        self.convs = [
            ConvBlock(f"{name}.conv{i}", width, width, kernel_size, rng, order) for i in (1, 2, 3)
        ]

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        if x.data.shape[1] != self.width:
            raise ValueError(
                f"{self.name}: input has {x.data.shape[1]} channels, block is {self.width} wide"
            )
        h = x
        for conv in self.convs:
            h = conv(h, training)
        return add(x, h)

    def zero_branch(self) -> None:
        """Force F(x) = 0 by zeroing the last block's affine scale and shift."""
        last = self.convs[-1]
        last.gamma.data[...] = 0.0
        last.beta.data[...] = 0.0

    def parameters(self) -> Iterator[Parameter]:
        for conv in self.convs:
            yield from conv.parameters()

    def buffers(self) -> Iterator[tuple[str, np.ndarray]]:
        for conv in self.convs:
            yield from conv.buffers()


class EncoderLevel:
    """conv -> res -> conv at ``width`` channels, then 2x2 max pool.

    The entry conv adapts the incoming channel count to the level width;
    the pre-pool features are returned as the skip for the matching decoder
    level.
    """

    def __init__(self, name: str, c_in: int, width: int, kernel_size: int, rng, order: str):
        self.name = name
        self.in_conv = ConvBlock(f"{name}.in_conv", c_in, width, kernel_size, rng, order)
        self.res = ResidualBlock(f"{name}.res", width, kernel_size, rng, order)
        self.out_conv = ConvBlock(f"{name}.out_conv", width, width, kernel_size, rng, order)

    def __call__(self, x: Tensor, training: bool) -> tuple[Tensor, Tensor]:
        h = self.in_conv(x, training)
        h = self.res(h, training)
        skip = self.out_conv(h, training)
        return skip, maxpool2x2(skip)

    def parameters(self) -> Iterator[Parameter]:
        for part in (self.in_conv, self.res, self.out_conv):
            yield from part.parameters()

    def buffers(self) -> Iterator[tuple[str, np.ndarray]]:
        for part in (self.in_conv, self.res, self.out_conv):
            yield from part.buffers()


class Bridge:
    """conv -> res -> conv at the bottom resolution, no resampling."""

    def __init__(self, name: str, c_in: int, width: int, kernel_size: int, rng, order: str):
        self.name = name
        self.in_conv = ConvBlock(f"{name}.in_conv", c_in, width, kernel_size, rng, order)
        self.res = ResidualBlock(f"{name}.res", width, kernel_size, rng, order)
        self.out_conv = ConvBlock(f"{name}.out_conv", width, width, kernel_size, rng, order)

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        return self.out_conv(self.res(self.in_conv(x, training), training), training)

    def parameters(self) -> Iterator[Parameter]:
        for part in (self.in_conv, self.res, self.out_conv):
            yield from part.parameters()

    def buffers(self) -> Iterator[tuple[str, np.ndarray]]:
        for part in (self.in_conv, self.res, self.out_conv):
            yield from part.buffers()


class DecoderLevel:
    """deconv -> merge-by-addition with the encoder skip -> conv -> res -> conv.

    The merge requires the upsampled map and the skip to agree exactly in
    shape, so the channel count stays at ``width`` (a concatenating merge
    would double it).
    """

    def __init__(self, name: str, c_in: int, width: int, kernel_size: int, rng, order: str):
        self.name = name
        self.deconv = Deconv(f"{name}.deconv", c_in, width, rng)
        self.in_conv = ConvBlock(f"{name}.in_conv", width, width, kernel_size, rng, order)
        self.res = ResidualBlock(f"{name}.res", width, kernel_size, rng, order)
        self.out_conv = ConvBlock(f"{name}.out_conv", width, width, kernel_size, rng, order)

    def __call__(self, x: Tensor, skip: Tensor, training: bool) -> Tensor:
        up = self.deconv(x)
        if up.data.shape != skip.data.shape:
            raise ValueError(
                f"{self.name}: upsampled shape {up.data.shape} does not match skip shape {skip.data.shape}"
            )
        h = add(up, skip)
        h = self.in_conv(h, training)
        h = self.res(h, training)
        return self.out_conv(h, training)

    def parameters(self) -> Iterator[Parameter]:
        for part in (self.deconv, self.in_conv, self.res, self.out_conv):
            yield from part.parameters()

    def buffers(self) -> Iterator[tuple[str, np.ndarray]]:
        for part in (self.deconv, self.in_conv, self.res, self.out_conv):
            yield from part.buffers()


class FusionNet:
    """The full network: parameters are created in a fixed deterministic
    order from a single seeded stream, so two builds with the same seed are
    bit-identical."""

    def __init__(self, spec: NetworkSpec, seed: int = 0):
        self.spec = spec
        self.seed = int(seed)
        rng = np.random.default_rng(self.seed)
        k = spec.kernel_size
        order = spec.block_order

        self.down: list[EncoderLevel] = []
        c_in = spec.input_channels
        for d in range(1, spec.levels + 1):
            w = spec.width(d)
            self.down.append(EncoderLevel(f"down{d}", c_in, w, k, rng, order))
            c_in = w
        self.bridge = Bridge("bridge", c_in, spec.bridge_width, k, rng, order)
        self.up: list[DecoderLevel] = []
        c_in = spec.bridge_width
        for d in range(spec.levels, 0, -1):
            w = spec.width(d)
            self.up.append(DecoderLevel(f"up{d}", c_in, w, k, rng, order))
            c_in = w
        self.head = ConvBlock("output.conv", c_in, spec.output_channels, k, rng, order, normalized=False)

    # -- forward ------------------------------------------------------------

    def forward(self, x: Tensor, training: bool = False) -> Tensor:
        """Probability map in (0, 1) at the input resolution.

        Training-mode forwards record the tape and update batch-norm running
        statistics; evaluation-mode forwards are recording-free and
        deterministic.
        """
        if not training:
            with no_grad():
                return self._forward(x, training=False)
        return self._forward(x, training=True)

    def _forward(self, x: Tensor, training: bool) -> Tensor:
        if x.data.ndim != 4 or x.data.shape[1] != self.spec.input_channels:
            raise ValueError(
                f"input must be (N, {self.spec.input_channels}, H, W), got {x.data.shape}"
            )
        div = 2**self.spec.levels
        _, _, h, w = x.data.shape
        if h % div or w % div:
            raise ValueError(
                f"input spatial size {h}x{w} must be divisible by 2^levels = {div}"
            )
        skips: list[Tensor] = []
        hmap = x
        for enc in self.down:
            skip, hmap = enc(hmap, training)
            skips.append(skip)
        hmap = self.bridge(hmap, training)
        for dec, skip in zip(self.up, reversed(skips)):
            hmap = dec(hmap, skip, training)
        return sigmoid(self.head(hmap, training))

    def __call__(self, x: Tensor, training: bool = False) -> Tensor:
        return self.forward(x, training)

    # -- parameter access ---------------------------------------------------

    def _parts(self):
        yield from self.down
        yield self.bridge
        yield from self.up
        yield self.head

    def parameters(self) -> list[Parameter]:
        out = []
        for part in self._parts():
            out.extend(part.parameters())
        return out

    def named_parameters(self) -> dict[str, Parameter]:
        params = self.parameters()
        names = [p.name for p in params]
        if len(set(names)) != len(names):
            raise AssertionError("duplicate parameter identifiers")
        return {p.name: p for p in params}

    def buffers(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for part in self._parts():
            for name, buf in part.buffers():
                out[name] = buf
        return out

    def parameter_count(self) -> int:
        return sum(p.data.size for p in self.parameters())

    def zero_residual_branches(self) -> None:
        """Make every residual block the identity (its branch outputs zero)."""
        for part in self._parts():
            if isinstance(part, (EncoderLevel, Bridge, DecoderLevel)):
                part.res.zero_branch()

    # -- state I/O ------------------------------------------------------------

    def load_state(self, params: dict[str, np.ndarray], buffers: dict[str, np.ndarray]) -> None:
        own = self.named_parameters()
        if set(own) != set(params):
            missing = sorted(set(own) ^ set(params))
            raise ValueError(f"parameter set mismatch: {missing[:5]}")
        for name, p in own.items():
            if p.data.shape != params[name].shape:
                raise ValueError(
                    f"shape mismatch for {name}: have {p.data.shape}, loading {params[name].shape}"
                )
            p.data = params[name].astype(p.data.dtype, copy=True)
        own_buf = self.buffers()
        if set(own_buf) != set(buffers):
            missing = sorted(set(own_buf) ^ set(buffers))
            raise ValueError(f"buffer set mismatch: {missing[:5]}")
        for name, buf in own_buf.items():
            buf[...] = buffers[name]

    def make_optimizer(self, lr: float = 1e-4, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> Adam:
        return Adam(self.parameters(), lr=lr, beta1=beta1, beta2=beta2, eps=eps)
