"""Data enrichment and augmentation: the eight square orientations, elastic
deformation by a sparse displacement grid, Gaussian intensity noise, mirror
padding with its inverse crop, and orientation-averaged prediction.

All operations are pure functions of (inputs, seed) and can run per sample
in parallel.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .tensor import Tensor

__all__ = [
    "Orientation",
    "ORIENTATIONS",
    "IDENTITY",
    "compose",
    "d4_apply",
    "SamplePair",
    "enrich",
    "ElasticField",
    "sample_elastic_field",
    "elastic_warp",
    "add_gaussian_noise",
    "mirror_pad",
    "crop_center",
    "tta_predict",
]


@dataclass(frozen=True)
class Orientation:
    """One of the eight orientations of a square image: an optional
    horizontal reflection followed by 0-3 quarter turns."""

    quarter_turns: int
    reflected: bool

    def __post_init__(self):
        if self.quarter_turns not in (0, 1, 2, 3):
            raise ValueError(f"quarter_turns must be in 0..3, got {self.quarter_turns}")

    def inverse(self) -> "Orientation":
        # reflected elements are involutions: g applied twice is the identity
        if self.reflected:
            return self
        return Orientation((-self.quarter_turns) % 4, False)


IDENTITY = Orientation(0, False)

ORIENTATIONS: tuple[Orientation, ...] = tuple(
    Orientation(k, refl) for refl in (False, True) for k in (0, 1, 2, 3)
)


def compose(a: Orientation, b: Orientation) -> Orientation:
    """The orientation equivalent to applying ``b`` first, then ``a``."""
    k = (a.quarter_turns + (-b.quarter_turns if a.reflected else b.quarter_turns)) % 4
    return Orientation(k, a.reflected != b.reflected)


def d4_apply(image: np.ndarray, g: Orientation) -> np.ndarray:
    """Rotate/reflect the last two axes; the array must be square there
    unless the turn count is even."""
    h, w = image.shape[-2:]
    if g.quarter_turns % 2 == 1 and h != w:
        raise ValueError(f"quarter-turn of a non-square image ({h}x{w}) changes its shape")
    out = image
    if g.reflected:
        out = np.flip(out, axis=-1)
    if g.quarter_turns:
        out = np.rot90(out, g.quarter_turns, axes=(-2, -1))
    return out


@dataclass
class SamplePair:
    """A raw image in [0, 1] and its binary label mask, same dimensions."""

    image: np.ndarray
    label: np.ndarray


def enrich(dataset: Sequence[SamplePair]) -> list[SamplePair]:
    """All eight orientation variants of every pair: output is exactly eight
    times the input, image and label transformed by the same element."""
    out = []
    for pair in dataset:
        for g in ORIENTATIONS:
            out.append(
                SamplePair(
                    np.ascontiguousarray(d4_apply(pair.image, g)),
                    np.ascontiguousarray(d4_apply(pair.label, g)),
                )
            )
    return out


# ---------------------------------------------------------------------------
# elastic deformation


GRID = 12

@dataclass
class ElasticField:
    """Sparse displacement grid in pixels, (GRID, GRID, 2) as (dy, dx).

    The boundary ring is exactly zero; interior components are bounded by
    ``amplitude`` in magnitude.
    """

    grid: np.ndarray
    amplitude: float


def sample_elastic_field(rng, amplitude: float) -> ElasticField:
    """Uniform per-component displacements in [-amplitude, amplitude] on the
    interior grid cells; deterministic under a fixed seed."""
    if amplitude < 0:
        raise ValueError(f"amplitude must be >= 0, got {amplitude}")
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    grid = np.zeros((GRID, GRID, 2), dtype=np.float64)
    if amplitude > 0:
        grid[1:-1, 1:-1, :] = rng.uniform(-amplitude, amplitude, size=(GRID - 2, GRID - 2, 2))
    return ElasticField(grid, float(amplitude))


def _lerp_axis0(values: np.ndarray, positions: np.ndarray) -> np.ndarray:
    """Linear interpolation of ``values`` along axis 0 at fractional
    ``positions``; exact at integer positions."""
    i0 = np.floor(positions).astype(int)
    i0 = np.clip(i0, 0, values.shape[0] - 2) if values.shape[0] > 1 else np.zeros_like(i0)
    frac = (positions - i0)[:, None] if values.ndim > 1 else positions - i0
    lo = values[i0]
    hi = values[np.minimum(i0 + 1, values.shape[0] - 1)]
    return lo + frac * (hi - lo)


def _upsample_grid(grid: np.ndarray, h: int, w: int) -> np.ndarray:
    """Bilinear upsampling of the sparse grid to (h, w, 2), grid corners
    anchored to image corners."""
    gy = np.linspace(0.0, GRID - 1, h)
    gx = np.linspace(0.0, GRID - 1, w)
    rows = _lerp_axis0(grid.reshape(GRID, GRID * 2), gy).reshape(h, GRID, 2)
    cols = _lerp_axis0(rows.transpose(1, 0, 2).reshape(GRID, h * 2), gx)
    return cols.reshape(w, h, 2).transpose(1, 0, 2)


def _bilinear_sample(image: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    h, w = image.shape
    ys = np.clip(ys, 0.0, h - 1.0)
    xs = np.clip(xs, 0.0, w - 1.0)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = ys - y0
    wx = xs - x0
    # nested lerp keeps constants exact
    top = image[y0, x0] + wx * (image[y0, x1] - image[y0, x0])
    bot = image[y1, x0] + wx * (image[y1, x1] - image[y1, x0])
    return top + wy * (bot - top)


def elastic_warp(pair: SamplePair, field: ElasticField) -> SamplePair:
    """Warp image and label by the upsampled field.

    Content moves by +field: output(p) samples input(p - d(p)), bilinearly
    for the image and nearest-neighbor for the label so it stays binary.
    Out-of-bounds samples clamp to the edge.
    """
    h, w = pair.image.shape
    dense = _upsample_grid(field.grid, h, w)
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    ys = yy - dense[:, :, 0]
    xs = xx - dense[:, :, 1]
    image = _bilinear_sample(pair.image.astype(np.float64), ys, xs).astype(pair.image.dtype)
    yn = np.clip(np.rint(ys), 0, h - 1).astype(int)
    xn = np.clip(np.rint(xs), 0, w - 1).astype(int)
    label = pair.label[yn, xn]
    return SamplePair(image, label)


# ---------------------------------------------------------------------------
# noise, padding, cropping


def add_gaussian_noise(image: np.ndarray, sigma: float, rng) -> np.ndarray:
    """Independent zero-mean noise per pixel, clamped back into [0, 1]."""
    if sigma == 0:
        return image.copy()
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    noisy = image + rng.normal(0.0, sigma, size=image.shape)
    return np.clip(noisy, 0.0, 1.0).astype(image.dtype)


def mirror_pad(image: np.ndarray, radius: int) -> np.ndarray:
    """Extend by ``radius`` on every side with the reflection of the interior
    about each border (edge row not repeated), so (H, W) -> (H+2r, W+2r)."""
    if radius < 0:
        raise ValueError(f"radius must be >= 0, got {radius}")
    if radius == 0:
        return image.copy()
    h, w = image.shape[-2:]
    if radius > min(h, w) - 1:
        raise ValueError(
            f"radius {radius} too large for {h}x{w} image (reflection needs radius <= {min(h, w) - 1})"
        )
    pad = [(0, 0)] * (image.ndim - 2) + [(radius, radius), (radius, radius)]
    return np.pad(image, pad, mode="reflect")


def crop_center(image: np.ndarray, radius: int) -> np.ndarray:
    """Remove ``radius`` from every side; exact inverse of mirror_pad."""
    if radius < 0:
        raise ValueError(f"radius must be >= 0, got {radius}")
    if radius == 0:
        return image.copy()
    h, w = image.shape[-2:]
    if h <= 2 * radius or w <= 2 * radius:
        raise ValueError(f"cannot crop radius {radius} from {h}x{w} image")
    return image[..., radius : h - radius, radius : w - radius].copy()


# ---------------------------------------------------------------------------
# orientation-averaged prediction


def tta_predict(net, image: np.ndarray, pad_radius: int = 0) -> np.ndarray:
    """Average the network over all eight orientations.

    The image is mirror-padded, pushed through the network once per
    orientation, inverse-transformed, averaged, and cropped back.  The
    resulting predictor commutes with every orientation of its input.
    """
    if image.shape[0] != image.shape[1]:
        raise ValueError(f"orientation averaging requires a square image, got {image.shape}")
    padded = mirror_pad(image, pad_radius)
    acc = np.zeros(padded.shape, dtype=np.float64)
    for g in ORIENTATIONS:
        t = np.ascontiguousarray(d4_apply(padded, g), dtype=np.float32)
        y = net.forward(Tensor(t[None, None]), training=False).data[0, 0]
        acc += d4_apply(y.astype(np.float64), g.inverse())
    out = (acc / len(ORIENTATIONS)).astype(np.float32)
    return crop_center(out, pad_radius) if pad_radius else out
