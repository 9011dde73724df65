"""Dense rank-4 tensor engine with reverse-mode differentiation.

The engine is deliberately small: it provides exactly the operations needed
to express a fully residual encoder-decoder segmentation network (stride-1
same convolutions, stride-2 transposed convolutions, 2x2 max pooling, ReLU,
batch normalization, elementwise addition, sigmoid, and mean-square error),
plus He initialization and an Adam optimizer.

Feature maps are dense float arrays laid out as (batch, channels, height,
width).  Every operation records itself on an implicit tape (a monotonically
increasing sequence number per produced tensor); ``backward`` replays the
recorded operations in exact reverse execution order and accumulates
gradients into the inputs.  Forward passes run in float32 by default; all
operations preserve the dtype of their inputs, so a graph built from float64
tensors is differentiated entirely in 64-bit precision (used by the
finite-difference checks).

There is no implicit broadcasting between tensors: shape mismatches are
rejected so that architecture code stays shape-exact.
"""

from __future__ import annotations

import contextlib
import itertools
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = [
    "Tensor",
    "Parameter",
    "no_grad",
    "is_grad_enabled",
    "backward",
    "zero_grad",
    "conv2d",
    "conv2d_transpose",
    "maxpool2x2",
    "relu",
    "batch_norm",
    "add",
    "sigmoid",
    "mse_loss",
    "he_init",
    "Adam",
]

# Execution-order stamp shared by all tensors; backward sorts by it.
_SEQ = itertools.count()

_grad_enabled = True


def is_grad_enabled() -> bool:
    return _grad_enabled


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (evaluation-mode forwards)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """A dense numeric array with an optional gradient buffer.

    ``data`` is a numpy array (owned, not aliased by further engine ops) and
    ``grad``, once populated by :func:`backward`, has the same shape and
    dtype.  Tensors produced by engine ops keep references to their inputs
    and a backward closure; leaf tensors have neither.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn", "_op", "_seq")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn: Callable[[np.ndarray], None] | None = None
        self._op = "leaf"
        self._seq = next(_SEQ)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self) -> str:
        return f"Tensor(op={self._op}, shape={self.data.shape}, dtype={self.data.dtype})"

    def item(self) -> float:
        return float(self.data)


class Parameter(Tensor):
    """A learnable tensor with a unique identifier path, e.g. ``down1.res.conv2.weight``."""

    __slots__ = ("name",)

    def __init__(self, data, name: str):
        super().__init__(data, requires_grad=True)
        self.name = name

    def __repr__(self) -> str:
        return f"Parameter({self.name}, shape={self.data.shape})"


def _result(data: np.ndarray, parents: Sequence[Tensor], backward_fn, op: str) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward_fn = backward_fn
        out._op = op
    else:
        out._op = op
    return out


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = g.astype(t.data.dtype, copy=True)
    else:
        t.grad += g


def backward(loss: Tensor) -> None:
    """Populate gradients of everything the scalar ``loss`` depends on.

    Visits the recorded operations in exact reverse execution order, so a
    tensor consumed several times (residual reuse) accumulates every
    contribution before its own backward runs.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward requires a scalar loss, got shape {loss.data.shape}")

    nodes: list[Tensor] = []
    seen: set[int] = set()
    stack = [loss]
    while stack:
        t = stack.pop()
        if id(t) in seen:
            continue
        seen.add(id(t))
        nodes.append(t)
        stack.extend(t._parents)
    nodes.sort(key=lambda t: -t._seq)

    loss.grad = np.ones_like(loss.data)
    for t in nodes:
        if t._backward_fn is not None and t.grad is not None:
            t._backward_fn(t.grad)


def zero_grad(params: Iterable[Tensor]) -> None:
    """Reset gradients to zero buffers (unreached parameters stay at zero)."""
    for p in params:
        p.grad = np.zeros_like(p.data)


def _require_rank4(x: Tensor, op: str) -> None:
    if x.data.ndim != 4:
        raise ValueError(f"{op} expects a (N, C, H, W) tensor, got shape {x.data.shape}")


# ---------------------------------------------------------------------------
# convolution


def conv2d(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Stride-1 convolution with zero same-padding; spatial size is preserved.

    ``weight`` is (C_out, C_in, k, k) with odd k; ``bias`` is (C_out,).
    out[n,o,y,x] = bias[o] + sum_{c,i,j} weight[o,c,i,j] * x_padded[n,c,y+i,x+j]
    """
    _require_rank4(x, "conv2d")
    if weight.data.ndim != 4 or weight.data.shape[2] != weight.data.shape[3]:
        raise ValueError(f"conv2d weight must be (C_out, C_in, k, k), got {weight.data.shape}")
    n, c, h, w = x.data.shape
    c_out, c_in, k, _ = weight.data.shape
    if k % 2 != 1:
        raise ValueError(f"conv2d kernel size must be odd, got {k}")
    if c_in != c:
        raise ValueError(
            f"conv2d channel mismatch: input {x.data.shape} has {c} channels, "
            f"weight {weight.data.shape} expects {c_in}"
        )
    if bias.data.shape != (c_out,):
        raise ValueError(f"conv2d bias must have shape ({c_out},), got {bias.data.shape}")

    p = k // 2
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p)))
    win = sliding_window_view(xp, (k, k), axis=(2, 3))  # (N, C, H, W, k, k)
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n * h * w, c * k * k)
    wmat = weight.data.reshape(c_out, c * k * k)
    out = cols @ wmat.T + bias.data
    out = np.ascontiguousarray(out.reshape(n, h, w, c_out).transpose(0, 3, 1, 2))

    def backward_fn(g: np.ndarray) -> None:
        g2 = g.transpose(0, 2, 3, 1).reshape(n * h * w, c_out)
        if weight.requires_grad:
            _accumulate(weight, (g2.T @ cols).reshape(c_out, c, k, k))
        if bias.requires_grad:
            _accumulate(bias, g2.sum(axis=0))
        if x.requires_grad:
            gwin = (g2 @ wmat).reshape(n, h, w, c, k, k)
            gxp = np.zeros_like(xp)
            for i in range(k):
                for j in range(k):
                    gxp[:, :, i : i + h, j : j + w] += gwin[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            _accumulate(x, gxp[:, :, p : p + h, p : p + w])

    return _result(out, (x, weight, bias), backward_fn, "conv2d")


def conv2d_transpose(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Stride-2 transposed convolution with a 2x2 kernel: (H, W) -> (2H, 2W).

    ``weight`` is (C_in, C_out, 2, 2).  The operation is the adjoint of a
    stride-2 valid convolution with the same kernel:
    out[n,o,2y+i,2x+j] = bias[o] + sum_c weight[c,o,i,j] * x[n,c,y,x]
    """
    _require_rank4(x, "conv2d_transpose")
    n, c, h, w = x.data.shape
    if weight.data.ndim != 4:
        raise ValueError(f"conv2d_transpose weight must be (C_in, C_out, 2, 2), got {weight.data.shape}")
    c_in, c_out, kh, kw = weight.data.shape
    if (kh, kw) != (2, 2):
        raise ValueError(
            f"conv2d_transpose only supports the resolution-doubling 2x2/stride-2 form, "
            f"got kernel {kh}x{kw}"
        )
    if c_in != c:
        raise ValueError(
            f"conv2d_transpose channel mismatch: input {x.data.shape} has {c} channels, "
            f"weight {weight.data.shape} expects {c_in}"
        )
    if bias.data.shape != (c_out,):
        raise ValueError(f"conv2d_transpose bias must have shape ({c_out},), got {bias.data.shape}")

    t = np.einsum("nchw,coij->nohwij", x.data, weight.data)
    out = np.ascontiguousarray(t.transpose(0, 1, 2, 4, 3, 5)).reshape(n, c_out, 2 * h, 2 * w)
    out += bias.data[:, None, None]

    def backward_fn(g: np.ndarray) -> None:
        gblk = g.reshape(n, c_out, h, 2, w, 2).transpose(0, 1, 2, 4, 3, 5)
        if bias.requires_grad:
            _accumulate(bias, g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            _accumulate(x, np.einsum("nohwij,coij->nchw", gblk, weight.data))
        if weight.requires_grad:
            _accumulate(weight, np.einsum("nchw,nohwij->coij", x.data, gblk))

    return _result(out, (x, weight, bias), backward_fn, "conv2d_transpose")


def maxpool2x2(x: Tensor) -> Tensor:
    """2x2 max pooling with stride 2; gradient routes to the first maximal
    element of each window in row-major order."""
    _require_rank4(x, "maxpool2x2")
    n, c, h, w = x.data.shape
    if h % 2 != 0 or w % 2 != 0:
        raise ValueError(f"maxpool2x2 requires even spatial dims, got {h}x{w}")
    h2, w2 = h // 2, w // 2
    win = np.ascontiguousarray(
        x.data.reshape(n, c, h2, 2, w2, 2).transpose(0, 1, 2, 4, 3, 5)
    ).reshape(n, c, h2, w2, 4)
    idx = win.argmax(axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]

    def backward_fn(g: np.ndarray) -> None:
        if x.requires_grad:
            gwin = np.zeros_like(win)
            np.put_along_axis(gwin, idx[..., None], g[..., None], axis=-1)
            gx = gwin.reshape(n, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)
            _accumulate(x, gx)

    return _result(out, (x,), backward_fn, "maxpool2x2")


# ---------------------------------------------------------------------------
# pointwise ops


def relu(x: Tensor) -> Tensor:
    """Elementwise max(0, x); the gradient at exactly 0 is defined as 0."""
    out = np.maximum(x.data, 0)

    def backward_fn(g: np.ndarray) -> None:
        if x.requires_grad:
            _accumulate(x, g * (x.data > 0))

    return _result(out, (x,), backward_fn, "relu")


def sigmoid(x: Tensor) -> Tensor:
    """Numerically stable logistic function; outputs lie strictly in (0, 1)."""
    d = x.data
    out = np.empty_like(d)
    pos = d >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    e = np.exp(d[~pos])
    out[~pos] = e / (1.0 + e)

    def backward_fn(g: np.ndarray) -> None:
        if x.requires_grad:
            _accumulate(x, g * out * (1.0 - out))

    return _result(out, (x,), backward_fn, "sigmoid")


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum of identically shaped tensors (no broadcasting)."""
    if a.data.shape != b.data.shape:
        raise ValueError(f"add shape mismatch: {a.data.shape} vs {b.data.shape}")
    out = a.data + b.data

    def backward_fn(g: np.ndarray) -> None:
        _accumulate(a, g)
        _accumulate(b, g)

    return _result(out, (a, b), backward_fn, "add")


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.9,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel normalization over (N, H, W), then affine gamma/beta.

    Train mode normalizes with batch statistics (biased variance) and updates
    the running buffers in place by exponential moving average; eval mode
    normalizes with the running buffers.
    """
    _require_rank4(x, "batch_norm")
    n, c, h, w = x.data.shape
    if n * h * w == 0:
        raise ValueError(f"batch_norm requires nonzero batch*spatial extent, got shape {x.data.shape}")
    if gamma.data.shape != (c,) or beta.data.shape != (c,):
        raise ValueError(
            f"batch_norm gamma/beta must have shape ({c},), got {gamma.data.shape} / {beta.data.shape}"
        )

    if training:
        mu = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        running_mean *= momentum
        running_mean += (1.0 - momentum) * mu
        running_var *= momentum
        running_var += (1.0 - momentum) * var
    else:
        mu = running_mean.astype(x.data.dtype, copy=False)
        var = running_var.astype(x.data.dtype, copy=False)

    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu[:, None, None]) * inv[:, None, None]
    out = gamma.data[:, None, None] * xhat + beta.data[:, None, None]

    def backward_fn(g: np.ndarray) -> None:
        if gamma.requires_grad:
            _accumulate(gamma, (g * xhat).sum(axis=(0, 2, 3)))
        if beta.requires_grad:
            _accumulate(beta, g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            scale = (gamma.data * inv)[:, None, None]
            if training:
                # batch statistics depend on x, hence the centering terms
                gmean = g.mean(axis=(0, 2, 3))[:, None, None]
                gxm = (g * xhat).mean(axis=(0, 2, 3))[:, None, None]
                _accumulate(x, scale * (g - gmean - xhat * gxm))
            else:
                _accumulate(x, scale * g)

    return _result(out, (x, gamma, beta), backward_fn, "batch_norm")


def mse_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean over all elements of (pred - target)^2, as a scalar tensor."""
    if pred.data.shape != target.data.shape:
        raise ValueError(f"mse_loss shape mismatch: {pred.data.shape} vs {target.data.shape}")
    diff = pred.data - target.data
    out = np.asarray((diff * diff).mean(), dtype=pred.data.dtype)

    def backward_fn(g: np.ndarray) -> None:
        coeff = (2.0 / diff.size) * g
        if pred.requires_grad:
            _accumulate(pred, coeff * diff)
        if target.requires_grad:
            _accumulate(target, -coeff * diff)

    return _result(out, (pred, target), backward_fn, "mse_loss")


# ---------------------------------------------------------------------------
# initialization and optimization


def he_init(shape: Sequence[int], seed) -> Tensor:
    """Zero-mean normal samples with variance 2 / fan_in, deterministic per seed.

    ``seed`` may be an integer or a numpy Generator (to draw from a shared
    stream during network construction).  fan_in is the product of all but
    the leading dimension.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    shape = tuple(int(s) for s in shape)
    fan_in = int(np.prod(shape[1:])) if len(shape) > 1 else shape[0]
    std = np.sqrt(2.0 / fan_in)
    return Tensor(rng.normal(0.0, std, size=shape).astype(np.float32))


class Adam:
    """Adam with bias correction.  ``step`` consumes and zeroes gradients."""

    def __init__(
        self,
        params: Sequence[Parameter],
        lr: float = 1e-4,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.params = list(params)
        names = [p.name for p in self.params]
        if len(set(names)) != len(names):
            raise ValueError("parameter identifiers must be unique")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {p.name: np.zeros_like(p.data) for p in self.params}
        self.v = {p.name: np.zeros_like(p.data) for p in self.params}

    def step(self) -> None:
        for p in self.params:
            if p.grad is None:
                raise ValueError(f"adam step with missing gradient for {p.name}")
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for p in self.params:
            g = p.grad
            m = self.m[p.name]
            v = self.v[p.name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p.data -= (self.lr * update).astype(p.data.dtype, copy=False)
            p.grad[...] = 0.0

    def state(self) -> dict:
        return {
            "t": self.t,
            "lr": self.lr,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
        }

    def load_moments(self, m: dict, v: dict, t: int) -> None:
        for p in self.params:
            self.m[p.name] = m[p.name].astype(p.data.dtype, copy=True)
            self.v[p.name] = v[p.name].astype(p.data.dtype, copy=True)
        self.t = int(t)
