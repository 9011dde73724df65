"""Shared test helpers: synthetic desk-scale corpora.

Two kinds of fixture data:

* blob pairs: a smooth random field with its 0.5-level set as the label;
  trivially learnable, used for optimization smoke tests.
* cell pairs: a seed-point partition of the image rendered as 2-pixel
  boundary walls, with the image a blurred copy of the walls; used for the
  end-to-end segmentation workflows.
"""

from __future__ import annotations

import numpy as np
from scipy.ndimage import gaussian_filter

from fusionnet.augment import SamplePair


def make_blob_pair(rng: np.random.Generator, size: int = 64) -> SamplePair:
    field = np.kron(rng.normal(0, 1, (size // 8, size // 8)), np.ones((8, 8)))
    field = gaussian_filter(field, 3.0)
    field = (field - field.min()) / (field.max() - field.min())
    return SamplePair(field.astype(np.float32), (field > 0.5).astype(np.uint8))


def make_blob_corpus(n: int = 4, size: int = 64, seed: int = 7) -> list[SamplePair]:
    rng = np.random.default_rng(seed)
    return [make_blob_pair(rng, size) for _ in range(n)]


def make_cell_pair(
    rng: np.random.Generator, size: int = 48, n_seeds: int = 4, blur: float = 0.7
) -> SamplePair:
    points = rng.uniform(4, size - 4, (n_seeds, 2))
    yy, xx = np.mgrid[0:size, 0:size]
    dist = (yy[None] - points[:, 0, None, None]) ** 2 + (xx[None] - points[:, 1, None, None]) ** 2
    cell = dist.argmin(axis=0)
    walls = np.zeros((size, size), dtype=np.uint8)
    diff = cell[:, :-1] != cell[:, 1:]
    walls[:, :-1] |= diff
    walls[:, 1:] |= diff
    diff = cell[:-1, :] != cell[1:, :]
    walls[:-1, :] |= diff
    walls[1:, :] |= diff
    image = gaussian_filter(walls.astype(np.float32), blur)
    image = np.clip(0.05 + 0.9 * image / max(float(image.max()), 1e-6), 0.0, 1.0)
    return SamplePair(image.astype(np.float32), walls)


def make_cell_corpus(n: int = 6, size: int = 48, seed: int = 42) -> list[SamplePair]:
    rng = np.random.default_rng(seed)
    return [make_cell_pair(rng, size) for _ in range(n)]
