"""Segmentation scoring: foreground-restricted Rand and information-theoretic
F-scores over connected components, the Dice overlap coefficient, and the
pre-scoring steps (median filtering, thresholding, boundary thinning,
component labeling).

Region scores compare two integer labelings through their joint pixel-count
contingency table and are invariant under any permutation of the ids on
either side.  Evaluation is restricted to pixels that are foreground in the
reference labeling, so reference boundary pixels never contribute.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import ndimage

__all__ = [
    "threshold",
    "median_filter",
    "connected_components",
    "border_thin",
    "ContingencyTable",
    "rand_fscore",
    "info_fscore",
    "dice",
    "EvalConfig",
    "ScoreReport",
    "labeling_from_boundary",
    "evaluate",
]

FOUR_CONNECTED = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=np.uint8)


def threshold(prob_map: np.ndarray, t: float) -> np.ndarray:
    """Binary mask: 1 where prob >= t (ties count as 1)."""
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"threshold must be in [0, 1], got {t}")
    return (prob_map >= t).astype(np.uint8)


def median_filter(prob_map: np.ndarray, radius: int = 2) -> np.ndarray:
    """Median over the (2r+1)^2 neighborhood of each pixel, borders handled
    by mirror reflection; radius 0 is the identity."""
    if radius < 0:
        raise ValueError(f"radius must be >= 0, got {radius}")
    if radius == 0:
        return prob_map.copy()
    k = 2 * radius + 1
    padded = np.pad(prob_map, radius, mode="reflect")
    win = sliding_window_view(padded, (k, k))
    return np.median(win, axis=(2, 3)).astype(prob_map.dtype)


def connected_components(mask: np.ndarray, connectivity: int = 4) -> np.ndarray:
    """Label the 1-valued pixels; ids are assigned in raster-scan discovery
    order starting at 1, zeros stay zero."""
    if connectivity != 4:
        raise ValueError(f"only 4-connectivity is supported, got {connectivity}")
    mask = np.asarray(mask)
    if not np.isin(mask, (0, 1)).all():
        raise ValueError("mask must be binary")
    lab, n = ndimage.label(mask, structure=FOUR_CONNECTED)
    if n == 0:
        return lab.astype(np.int32)
    # renumber by first raster occurrence so ids are scan-deterministic
    flat = lab.ravel()
    first = np.full(n + 1, flat.size, dtype=np.int64)
    nz = np.flatnonzero(flat)
    # reversed so earlier indices overwrite later ones
    first[flat[nz[::-1]]] = nz[::-1]
    order = np.argsort(first[1:], kind="stable")
    remap = np.zeros(n + 1, dtype=np.int32)
    remap[order + 1] = np.arange(1, n + 1)
    return remap[lab]


def border_thin(boundary_mask: np.ndarray) -> np.ndarray:
    """One sequential raster pass of topology-preserving boundary erosion.

    A boundary pixel is cleared when all of its 4-adjacent foreground pixels
    belong to one component (so deleting it cannot merge regions, and the
    pixel joins that component).  Pixels with no foreground neighbor, and
    pixels sitting between two different regions, are kept; the number of
    regions is invariant.
    """
    m = np.asarray(boundary_mask).astype(np.uint8).copy()
    h, w = m.shape
    comp = connected_components(1 - m).astype(np.int64)
    ys, xs = np.nonzero(m)
    for y, x in zip(ys.tolist(), xs.tolist()):
        adjacent = 0
        deletable = True
        for ny, nx in ((y - 1, x), (y, x - 1), (y + 1, x), (y, x + 1)):
            if 0 <= ny < h and 0 <= nx < w and m[ny, nx] == 0:
                c = comp[ny, nx]
                if adjacent == 0:
                    adjacent = c
                elif c != adjacent:
                    deletable = False
                    break
        if deletable and adjacent:
            m[y, x] = 0
            comp[y, x] = adjacent
    return m


# ---------------------------------------------------------------------------
# region scores


@dataclass
class ContingencyTable:
    """Joint pixel counts between two labelings over the evaluated pixels:
    counts[i, j] = |{p : pred(p) = pred_ids[i] and truth(p) = truth_ids[j]}|."""

    counts: np.ndarray
    pred_ids: np.ndarray
    truth_ids: np.ndarray

    @property
    def n(self) -> int:
        return int(self.counts.sum())

    @property
    def pred_marginals(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    @property
    def truth_marginals(self) -> np.ndarray:
        return self.counts.sum(axis=0)

    @classmethod
    def from_labelings(cls, pred: np.ndarray, truth: np.ndarray) -> "ContingencyTable | None":
        """Build over truth-foreground pixels; None when there are none."""
        if pred.shape != truth.shape:
            raise ValueError(f"labeling shapes differ: {pred.shape} vs {truth.shape}")
        fg = truth > 0
        p = pred[fg].ravel()
        t = truth[fg].ravel()
        if p.size == 0:
            return None
        pred_ids, pi = np.unique(p, return_inverse=True)
        truth_ids, ti = np.unique(t, return_inverse=True)
        counts = np.zeros((pred_ids.size, truth_ids.size), dtype=np.int64)
        np.add.at(counts, (pi, ti), 1)
        return cls(counts, pred_ids, truth_ids)


def rand_fscore(pred: np.ndarray, truth: np.ndarray) -> float:
    """Harmonic mean of same-region pair precision and recall, restricted to
    truth-foreground pixels:

        2 * sum_ij n_ij^2 / (sum_i s_i^2 + sum_j t_j^2)

    Equals 1 exactly when the two partitions coincide up to id permutation.
    """
    table = ContingencyTable.from_labelings(pred, truth)
    if table is None:
        return 1.0
    counts = table.counts.astype(np.float64)
    a = (counts**2).sum()
    s = (table.pred_marginals.astype(np.float64) ** 2).sum()
    t = (table.truth_marginals.astype(np.float64) ** 2).sum()
    return float(2.0 * a / (s + t))


def info_fscore(pred: np.ndarray, truth: np.ndarray) -> float:
    """Mutual information over the mean marginal entropy (natural logs),
    restricted to truth-foreground pixels; 0*log(0) = 0, and two single
    segment labelings score 1."""
    table = ContingencyTable.from_labelings(pred, truth)
    if table is None:
        return 1.0

    def entropy(counts: np.ndarray) -> float:
        p = counts[counts > 0].astype(np.float64) / table.n
        return float(-(p * np.log(p)).sum())

    hs = entropy(table.pred_marginals)
    ht = entropy(table.truth_marginals)
    if hs + ht == 0.0:
        return 1.0
    # I(S;T) = H(S) + H(T) - H(S,T); exact 1.0 when the partitions coincide
    mi = hs + ht - entropy(table.counts.ravel())
    return float(min(max(mi / (0.5 * (hs + ht)), 0.0), 1.0))


def dice(pred_mask: np.ndarray, truth_mask: np.ndarray) -> float:
    """Overlap coefficient 2|A n B| / (|A| + |B|); two empty masks score 1."""
    if pred_mask.shape != truth_mask.shape:
        raise ValueError(f"mask shapes differ: {pred_mask.shape} vs {truth_mask.shape}")
    a = pred_mask.astype(bool)
    b = truth_mask.astype(bool)
    tot = int(a.sum()) + int(b.sum())
    if tot == 0:
        return 1.0
    return float(2.0 * int((a & b).sum()) / tot)


# ---------------------------------------------------------------------------
# evaluation pipeline


@dataclass(frozen=True)
class EvalConfig:
    threshold: float = 0.5
    median_radius: int = 2
    thin: bool = True


@dataclass
class ScoreReport:
    v_rand: float
    v_info: float
    v_dice: float
    pixels: int

    def __post_init__(self):
        for name in ("v_rand", "v_info", "v_dice"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")

    def line(self, tag: str = "") -> str:
        prefix = f"{tag}: " if tag else ""
        return (
            f"{prefix}v_rand={self.v_rand:.6f} v_info={self.v_info:.6f} "
            f"v_dice={self.v_dice:.6f} pixels={self.pixels}"
        )


def labeling_from_boundary(boundary_mask: np.ndarray, thin: bool = False) -> np.ndarray:
    """Region labeling of the non-boundary pixels, optionally after one
    thinning pass on the boundary."""
    mask = border_thin(boundary_mask) if thin else np.asarray(boundary_mask)
    return connected_components(1 - mask.astype(np.uint8))


def evaluate(prob_map: np.ndarray, truth: np.ndarray, config: EvalConfig = EvalConfig()) -> ScoreReport:
    """Score a boundary-probability map against a reference.

    ``truth`` is either a binary boundary mask (boundary = 1) or an integer
    region labeling (0 = boundary, ids >= 1).  The prediction pipeline is
    median filter -> threshold -> invert to foreground -> connected
    components; thinning, when enabled, applies to the reference boundary
    before its components are taken.  Dice compares the foreground masks
    without thinning.
    """
    if prob_map.shape != truth.shape:
        raise ValueError(f"prediction/reference shapes differ: {prob_map.shape} vs {truth.shape}")
    filtered = median_filter(prob_map, config.median_radius)
    pred_boundary = threshold(filtered, config.threshold)
    pred_lab = connected_components(1 - pred_boundary)

    truth = np.asarray(truth)
    if truth.max() <= 1:
        truth_lab = labeling_from_boundary(truth, thin=config.thin)
        truth_fg = truth == 0
    else:
        truth_lab = truth.astype(np.int32)
        truth_fg = truth > 0

    table = ContingencyTable.from_labelings(pred_lab, truth_lab)
    return ScoreReport(
        v_rand=rand_fscore(pred_lab, truth_lab),
        v_info=info_fscore(pred_lab, truth_lab),
        v_dice=dice(pred_boundary == 0, truth_fg),
        pixels=0 if table is None else table.n,
    )
