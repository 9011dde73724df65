"""Central finite-difference verification of the engine's gradients.

Every differentiable operation is checked by comparing its reverse-mode
gradient against central differences on a scalar probe loss, in 64-bit
precision.  Inputs are nudged away from non-smooth points (ReLU kinks,
max-pool ties) before differencing.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import tensor as T

__all__ = ["numeric_gradient", "relative_error", "check_gradient", "run_suite", "CheckResult"]

STEP = 1e-3
TOLERANCE = 1e-3


def numeric_gradient(f: Callable[[], float], x: np.ndarray, step: float = STEP) -> np.ndarray:
    """Central differences of a scalar function with respect to ``x`` in place."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = f()
        flat[i] = orig - step
        lo = f()
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * step)
    return g


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max-norm difference relative to the larger gradient magnitude."""
    diff = float(np.max(np.abs(analytic - numeric)))
    scale = max(float(np.max(np.abs(analytic))), float(np.max(np.abs(numeric))), 1e-12)
    return diff / scale


def _probe_loss(out: T.Tensor, coeffs: np.ndarray) -> T.Tensor:
    """Random linear functional of the output, as an engine-expressible scalar."""
    return T.mse_loss(out, T.Tensor(coeffs))


def check_gradient(build: Callable[[], tuple[T.Tensor, list[T.Tensor]]]) -> float:
    """Run reverse mode and finite differences for one graph.

    ``build`` returns (loss, inputs-to-check); it must be re-runnable with the
    inputs' current data (finite differencing mutates them in place).
    Returns the worst relative error over the checked inputs.
    """
    loss, inputs = build()
    T.zero_grad(inputs)
    T.backward(loss)
    analytic = [inp.grad.copy() for inp in inputs]

    worst = 0.0
    for inp, ga in zip(inputs, analytic):
        gn = numeric_gradient(lambda: float(build()[0].data), inp.data)
        worst = max(worst, relative_error(ga, gn))
    return worst


def _avoid_kinks(x: np.ndarray, margin: float = 5e-3) -> np.ndarray:
    mask = np.abs(x) < margin
    x[mask] = margin + np.abs(x[mask])
    return x


def _spread_pool_ties(x: np.ndarray, margin: float = 5e-3, rng: np.random.Generator | None = None) -> np.ndarray:
    """Ensure each 2x2 window has a unique max with a safe gap."""
    n, c, h, w = x.shape
    win = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(-1, 4)
    srt = np.sort(win, axis=-1)
    bad = (srt[:, 3] - srt[:, 2]) < 2 * margin
    if bad.any():
        # rank-based offsets keep the ordering and force a gap of >= 4*margin
        ranks = np.argsort(np.argsort(win[bad], axis=-1), axis=-1)
        win[bad] = win[bad] + ranks * 4 * margin
    return win.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)


@dataclass
class CheckResult:
    op: str
    trials: int
    worst_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.worst_error <= self.tolerance


def _rand(rng: np.random.Generator, shape) -> np.ndarray:
    return rng.normal(0.0, 1.0, size=shape)


def run_suite(trials: int = 20, seed: int = 0) -> list[CheckResult]:
    """Finite-difference checks for every differentiable op, ``trials`` random
    small tensors each, all in float64."""
    rng = np.random.default_rng(seed)
    results: list[CheckResult] = []

    def record(op: str, tol: float, one_trial: Callable[[np.random.Generator], float]) -> None:
        worst = max(one_trial(rng) for _ in range(trials))
        results.append(CheckResult(op, trials, worst, tol))

    def conv_trial(rng):
        n, ci, co, k = 1, int(rng.integers(1, 3)), int(rng.integers(1, 3)), int(rng.choice([1, 3]))
        h, w = int(rng.integers(3, 6)), int(rng.integers(3, 6))
        x = T.Tensor(_rand(rng, (n, ci, h, w)), requires_grad=True)
        wt = T.Tensor(_rand(rng, (co, ci, k, k)) * 0.5, requires_grad=True)
        b = T.Tensor(_rand(rng, (co,)), requires_grad=True)
        coeffs = _rand(rng, (n, co, h, w))
        return check_gradient(lambda: (_probe_loss(T.conv2d(x, wt, b), coeffs), [x, wt, b]))

    def deconv_trial(rng):
        n, ci, co = 1, int(rng.integers(1, 3)), int(rng.integers(1, 3))
        h, w = int(rng.integers(2, 5)), int(rng.integers(2, 5))
        x = T.Tensor(_rand(rng, (n, ci, h, w)), requires_grad=True)
        wt = T.Tensor(_rand(rng, (ci, co, 2, 2)) * 0.5, requires_grad=True)
        b = T.Tensor(_rand(rng, (co,)), requires_grad=True)
        coeffs = _rand(rng, (n, co, 2 * h, 2 * w))
        return check_gradient(lambda: (_probe_loss(T.conv2d_transpose(x, wt, b), coeffs), [x, wt, b]))

    def maxpool_trial(rng):
        n, c = 1, int(rng.integers(1, 3))
        h, w = 2 * int(rng.integers(1, 4)), 2 * int(rng.integers(1, 4))
        x = T.Tensor(_spread_pool_ties(_rand(rng, (n, c, h, w))), requires_grad=True)
        coeffs = _rand(rng, (n, c, h // 2, w // 2))
        return check_gradient(lambda: (_probe_loss(T.maxpool2x2(x), coeffs), [x]))

    def relu_trial(rng):
        shape = (1, int(rng.integers(1, 3)), int(rng.integers(2, 5)), int(rng.integers(2, 5)))
        x = T.Tensor(_avoid_kinks(_rand(rng, shape)), requires_grad=True)
        coeffs = _rand(rng, shape)
        return check_gradient(lambda: (_probe_loss(T.relu(x), coeffs), [x]))

    def sigmoid_trial(rng):
        shape = (1, int(rng.integers(1, 3)), int(rng.integers(2, 5)), int(rng.integers(2, 5)))
        x = T.Tensor(_rand(rng, shape), requires_grad=True)
        coeffs = _rand(rng, shape)
        return check_gradient(lambda: (_probe_loss(T.sigmoid(x), coeffs), [x]))

    def add_trial(rng):
        shape = (1, int(rng.integers(1, 3)), int(rng.integers(2, 5)), int(rng.integers(2, 5)))
        a = T.Tensor(_rand(rng, shape), requires_grad=True)
        b = T.Tensor(_rand(rng, shape), requires_grad=True)
        coeffs = _rand(rng, shape)
        return check_gradient(lambda: (_probe_loss(T.add(a, b), coeffs), [a, b]))

    def bn_trial(rng):
        n, c = int(rng.integers(1, 3)), int(rng.integers(1, 3))
        h, w = int(rng.integers(2, 5)), int(rng.integers(2, 5))
        x = T.Tensor(_rand(rng, (n, c, h, w)), requires_grad=True)
        gamma = T.Tensor(1.0 + 0.3 * _rand(rng, (c,)), requires_grad=True)
        beta = T.Tensor(_rand(rng, (c,)), requires_grad=True)
        coeffs = _rand(rng, (n, c, h, w))

        def build():
            rm, rv = np.zeros(c), np.ones(c)
            out = T.batch_norm(x, gamma, beta, rm, rv, training=True)
            return _probe_loss(out, coeffs), [x, gamma, beta]

        return check_gradient(build)

    def mse_trial(rng):
        shape = (1, int(rng.integers(1, 3)), int(rng.integers(2, 5)), int(rng.integers(2, 5)))
        pred = T.Tensor(_rand(rng, shape), requires_grad=True)
        target = T.Tensor(_rand(rng, shape))
        return check_gradient(lambda: (T.mse_loss(pred, target), [pred]))

    def composite_trial(rng):
        # conv -> relu -> mse, the training-step shape of the gradient path
        n, ci, co, k = 1, int(rng.integers(1, 3)), int(rng.integers(1, 3)), 3
        h, w = int(rng.integers(3, 6)), int(rng.integers(3, 6))
        x = T.Tensor(_rand(rng, (n, ci, h, w)), requires_grad=True)
        wt = T.Tensor(_rand(rng, (co, ci, k, k)) * 0.5, requires_grad=True)
        b = T.Tensor(_rand(rng, (co,)), requires_grad=True)
        target = T.Tensor(_rand(rng, (n, co, h, w)))

        def build():
            out = T.conv2d(x, wt, b)
            out = T.relu(out)
            return T.mse_loss(out, target), [x, wt, b]

        return check_gradient(build)

    record("conv2d", TOLERANCE, conv_trial)
    record("conv2d_transpose", TOLERANCE, deconv_trial)
    record("maxpool2x2", TOLERANCE, maxpool_trial)
    record("relu", TOLERANCE, relu_trial)
    record("sigmoid", TOLERANCE, sigmoid_trial)
    record("add", TOLERANCE, add_trial)
    record("batch_norm", TOLERANCE, bn_trial)
    record("mse_loss", 1e-4, mse_trial)
    record("conv_relu_mse", TOLERANCE, composite_trial)
    return results
