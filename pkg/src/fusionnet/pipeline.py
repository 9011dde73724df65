"""End-to-end workflows: configurable training with per-epoch augmentation,
contiguous-fold cross-validation, padded/orientation-averaged prediction,
and bit-exact binary checkpoints.

Everything an emitted number depends on derives from (config, seed,
dataset): per-epoch shuffles and per-sample augmentation draws come from
dedicated seed streams keyed by (seed, stream, epoch, sample), so a resumed
run replays exactly the schedule of an uninterrupted one.
"""

from __future__ import annotations

import configparser
import json
import math
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .augment import (
    SamplePair,
    add_gaussian_noise,
    crop_center,
    elastic_warp,
    enrich,
    mirror_pad,
    sample_elastic_field,
    tta_predict,
)
from .metrics import EvalConfig, ScoreReport, evaluate
from .network import FusionNet, NetworkSpec

__all__ = [
    "TrainConfig",
    "Checkpoint",
    "CheckpointError",
    "TrainingDiverged",
    "train",
    "cross_validate",
    "fold_indices",
    "predict",
    "save_checkpoint",
    "load_checkpoint",
    "net_from_checkpoint",
]

MAGIC = b"FNET"
VERSION = 1

# seed-stream tags so independent draws never collide
_SHUFFLE, _ELASTIC, _NOISE, _FOLDS = 1, 2, 3, 4


class CheckpointError(ValueError):
    pass


class TrainingDiverged(RuntimeError):
    """Raised on the first non-finite loss; the last checkpoint written to
    disk is left untouched."""

    def __init__(self, message: str, history: list[float]):
        super().__init__(message)
        self.history = history


@dataclass(frozen=True)
class TrainConfig:
    spec: NetworkSpec = field(default_factory=NetworkSpec)
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 1
    batch_size: int = 1
    seed: int = 0
    folds: int = 3
    checkpoint_every: int = 1
    enrich: bool = True
    shuffle: bool = True
    pad_radius: int = 64
    noise_sigma: float = 0.1
    elastic_amplitude: float = 10.0
    tta: bool = True

    def __post_init__(self):
        if self.folds < 1:
            raise ValueError(f"folds must be >= 1, got {self.folds}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")

    @classmethod
    def from_ini(cls, path: str | Path) -> "TrainConfig":
        """Sectioned key = value file; every default can be overridden.
        FUSIONNET_SEED in the environment overrides the configured seed."""
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"config not found: {path}")
        cp = configparser.ConfigParser()
        cp.read(path)

        def section(name):
            return cp[name] if cp.has_section(name) else {}

        net = section("network")
        size_text = net.get("input_size", "64")
        if "x" in size_text:
            h, w = (int(v) for v in size_text.lower().split("x"))
        else:
            h = w = int(size_text)
        spec = NetworkSpec(
            levels=int(net.get("levels", 2)),
            base_features=int(net.get("base_features", 8)),
            input_size=(h, w),
            input_channels=int(net.get("input_channels", 1)),
            output_channels=int(net.get("output_channels", 1)),
            kernel_size=int(net.get("kernel_size", 3)),
            block_order=net.get("block_order", "conv_relu_bn"),
        )
        opt = section("optimizer")
        tr = section("train")
        aug = section("augment")

        def as_bool(text, default):
            if text is None:
                return default
            return text.strip().lower() in ("1", "true", "yes", "on")

        seed = int(tr.get("seed", 0))
        env_seed = os.environ.get("FUSIONNET_SEED")
        if env_seed is not None:
            seed = int(env_seed)
        return cls(
            spec=spec,
            lr=float(opt.get("lr", 1e-4)),
            beta1=float(opt.get("beta1", 0.9)),
            beta2=float(opt.get("beta2", 0.999)),
            eps=float(opt.get("eps", 1e-8)),
            epochs=int(tr.get("epochs", 1)),
            batch_size=int(tr.get("batch_size", 1)),
            seed=seed,
            folds=int(tr.get("folds", 3)),
            checkpoint_every=int(tr.get("checkpoint_every", 1)),
            shuffle=as_bool(tr.get("shuffle"), True),
            enrich=as_bool(aug.get("enrich"), True),
            pad_radius=int(aug.get("pad_radius", 64)),
            noise_sigma=float(aug.get("noise_sigma", 0.1)),
            elastic_amplitude=float(aug.get("elastic_amplitude", 10.0)),
            tta=as_bool(tr.get("tta"), True),
        )


# ---------------------------------------------------------------------------
# checkpoints


@dataclass
class Checkpoint:
    spec: NetworkSpec
    params: dict[str, np.ndarray]
    buffers: dict[str, np.ndarray]
    adam_m: dict[str, np.ndarray]
    adam_v: dict[str, np.ndarray]
    adam: dict
    epoch: int
    step: int
    seed: int
    extras: dict


def _make_checkpoint(net: FusionNet, adam: T.Adam, config: TrainConfig, epoch: int, step: int) -> Checkpoint:
    return Checkpoint(
        spec=net.spec,
        params={name: p.data.copy() for name, p in net.named_parameters().items()},
        buffers={name: b.copy() for name, b in net.buffers().items()},
        adam_m={k: v.copy() for k, v in adam.m.items()},
        adam_v={k: v.copy() for k, v in adam.v.items()},
        adam=adam.state(),
        epoch=epoch,
        step=step,
        seed=config.seed,
        extras={
            "pad_radius": config.pad_radius,
            "noise_sigma": config.noise_sigma,
            "elastic_amplitude": config.elastic_amplitude,
            "batch_size": config.batch_size,
            "enrich": config.enrich,
            "shuffle": config.shuffle,
        },
    )


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    """Magic + version + length-prefixed JSON header (spec, identifiers,
    shapes) + raw little-endian float32 payloads in header order."""
    entries: list[tuple[str, str, np.ndarray]] = []
    for name, arr in ckpt.params.items():
        entries.append((name, "param", arr))
    for name, arr in ckpt.buffers.items():
        entries.append((name, "buffer", arr))
    for name, arr in ckpt.adam_m.items():
        entries.append((name, "adam_m", arr))
    for name, arr in ckpt.adam_v.items():
        entries.append((name, "adam_v", arr))
    header = {
        "spec": {
            "levels": ckpt.spec.levels,
            "base_features": ckpt.spec.base_features,
            "input_size": list(ckpt.spec.input_size),
            "input_channels": ckpt.spec.input_channels,
            "output_channels": ckpt.spec.output_channels,
            "kernel_size": ckpt.spec.kernel_size,
            "block_order": ckpt.spec.block_order,
        },
        "epoch": ckpt.epoch,
        "step": ckpt.step,
        "seed": ckpt.seed,
        "adam": ckpt.adam,
        "extras": ckpt.extras,
        "tensors": [
            {"name": name, "kind": kind, "shape": list(arr.shape)} for name, kind, arr in entries
        ],
    }
    blob = json.dumps(header).encode("utf-8")
    path = Path(path)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for _, _, arr in entries:
            f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 12:
        raise CheckpointError(f"{path}: file too short ({len(raw)} bytes) to hold a header")
    if raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {raw[:4]!r} at offset 0, expected {MAGIC!r}")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}, expected {VERSION}")
    (hlen,) = struct.unpack_from("<I", raw, 8)
    if 12 + hlen > len(raw):
        raise CheckpointError(
            f"{path}: truncated header: need {hlen} bytes at offset 12, file has {len(raw) - 12}"
        )
    try:
        header = json.loads(raw[12 : 12 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header: {exc}") from None

    spec = NetworkSpec(
        levels=header["spec"]["levels"],
        base_features=header["spec"]["base_features"],
        input_size=tuple(header["spec"]["input_size"]),
        input_channels=header["spec"]["input_channels"],
        output_channels=header["spec"]["output_channels"],
        kernel_size=header["spec"]["kernel_size"],
        block_order=header["spec"]["block_order"],
    )
    offset = 12 + hlen
    expected = sum(int(np.prod(t["shape"])) * 4 for t in header["tensors"])
    if len(raw) - offset != expected:
        raise CheckpointError(
            f"{path}: truncated payload: expected {expected} bytes at offset {offset}, "
            f"file has {len(raw) - offset}"
        )
    groups: dict[str, dict[str, np.ndarray]] = {"param": {}, "buffer": {}, "adam_m": {}, "adam_v": {}}
    for entry in header["tensors"]:
        shape = tuple(int(s) for s in entry["shape"])
        count = int(np.prod(shape))
        arr = np.frombuffer(raw, dtype="<f4", count=count, offset=offset).reshape(shape).copy()
        offset += count * 4
        kind = entry["kind"]
        if kind not in groups:
            raise CheckpointError(f"{path}: unknown tensor kind {kind!r}")
        groups[kind][entry["name"]] = arr
    return Checkpoint(
        spec=spec,
        params=groups["param"],
        buffers=groups["buffer"],
        adam_m=groups["adam_m"],
        adam_v=groups["adam_v"],
        adam=header["adam"],
        epoch=int(header["epoch"]),
        step=int(header["step"]),
        seed=int(header["seed"]),
        extras=header.get("extras", {}),
    )


def net_from_checkpoint(ckpt: Checkpoint) -> FusionNet:
    net = FusionNet(ckpt.spec, seed=ckpt.seed)
    net.load_state(ckpt.params, ckpt.buffers)
    return net


# ---------------------------------------------------------------------------
# training


def _augmented_batch(
    data: list[SamplePair], indices, config: TrainConfig, epoch: int
) -> tuple[np.ndarray, np.ndarray]:
    images, labels = [], []
    for idx in indices:
        pair = data[idx]
        if config.elastic_amplitude > 0:
            rng = np.random.default_rng((config.seed, _ELASTIC, epoch, int(idx)))
            pair = elastic_warp(pair, sample_elastic_field(rng, config.elastic_amplitude))
        image = pair.image
        if config.noise_sigma > 0:
            rng = np.random.default_rng((config.seed, _NOISE, epoch, int(idx)))
            image = add_gaussian_noise(image, config.noise_sigma, rng)
        label = pair.label.astype(np.float32)
        if config.pad_radius > 0:
            image = mirror_pad(image, config.pad_radius)
            label = mirror_pad(label, config.pad_radius)
        images.append(image.astype(np.float32))
        labels.append(label)
    return np.stack(images)[:, None], np.stack(labels)[:, None]


def train(
    config: TrainConfig,
    dataset: list[SamplePair],
    out_path: str | Path | None = None,
    resume: Checkpoint | None = None,
) -> tuple[Checkpoint, list[float]]:
    """Fit the network and return (final checkpoint, per-step loss history).

    The dataset is enriched eightfold once up front (when enabled); each
    epoch then draws a fresh elastic field and noise per sample, mirror-pads,
    shuffles, and runs minibatch MSE steps.  Checkpoints are written to
    ``out_path`` at the configured epoch cadence.  A non-finite loss aborts
    immediately, leaving the last written checkpoint in place.
    """
    if not dataset:
        raise ValueError("training dataset is empty")
    for pair in dataset:
        if pair.image.shape[0] != pair.image.shape[1]:
            raise ValueError(f"training images must be square, got {pair.image.shape}")

    if resume is not None:
        if resume.spec != config.spec:
            raise ValueError("resume checkpoint spec does not match the configured spec")
        net = net_from_checkpoint(resume)
        adam = net.make_optimizer(lr=config.lr, beta1=config.beta1, beta2=config.beta2, eps=config.eps)
        adam.load_moments(resume.adam_m, resume.adam_v, resume.adam["t"])
        start_epoch, step = resume.epoch, resume.step
    else:
        net = FusionNet(config.spec, seed=config.seed)
        adam = net.make_optimizer(lr=config.lr, beta1=config.beta1, beta2=config.beta2, eps=config.eps)
        start_epoch, step = 0, 0

    data = enrich(dataset) if config.enrich else list(dataset)
    params = net.parameters()
    history: list[float] = []

    ckpt = _make_checkpoint(net, adam, config, start_epoch, step)
    for epoch in range(start_epoch, config.epochs):
        if config.shuffle:
            order = np.random.default_rng((config.seed, _SHUFFLE, epoch)).permutation(len(data))
        else:
            order = np.arange(len(data))
        for lo in range(0, len(order), config.batch_size):
            x_arr, y_arr = _augmented_batch(data, order[lo : lo + config.batch_size], config, epoch)
            out = net.forward(T.Tensor(x_arr), training=True)
            loss = T.mse_loss(out, T.Tensor(y_arr))
            loss_val = float(loss.data)
            if not math.isfinite(loss_val):
                raise TrainingDiverged(
                    f"non-finite loss {loss_val} at epoch {epoch} step {step}", history
                )
            T.zero_grad(params)
            T.backward(loss)
            adam.step()
            history.append(loss_val)
            step += 1
        ckpt = _make_checkpoint(net, adam, config, epoch + 1, step)
        if out_path is not None and config.checkpoint_every > 0 and (epoch + 1) % config.checkpoint_every == 0:
            save_checkpoint(ckpt, out_path)

    if out_path is not None:
        save_checkpoint(ckpt, out_path)
    return ckpt, history


# ---------------------------------------------------------------------------
# prediction and cross-validation


def _forward_map(net: FusionNet, image: np.ndarray, pad_radius: int) -> np.ndarray:
    padded = mirror_pad(image, pad_radius)
    h, w = padded.shape
    div = 2**net.spec.levels
    if h % div or w % div:
        raise ValueError(
            f"image {image.shape} padded by {pad_radius} gives {h}x{w}, which is not divisible "
            f"by 2^levels = {div}; adjust the pad radius or image size"
        )
    out = net.forward(T.Tensor(padded.astype(np.float32)[None, None]), training=False).data[0, 0]
    return crop_center(out, pad_radius) if pad_radius else out


def predict(
    source: FusionNet | Checkpoint,
    images: list[np.ndarray],
    tta: bool = True,
    pad_radius: int | None = None,
) -> list[np.ndarray]:
    """Probability maps, one per image, each the size of its input.

    Images are mirror-padded, pushed through the network (averaged over the
    eight orientations when ``tta``), and cropped back.  The pad radius
    defaults to the one the checkpoint was trained with.
    """
    if isinstance(source, Checkpoint):
        net = net_from_checkpoint(source)
        if pad_radius is None:
            pad_radius = int(source.extras.get("pad_radius", 0))
    else:
        net = source
        if pad_radius is None:
            pad_radius = 0
    out = []
    for image in images:
        if tta:
            out.append(tta_predict(net, image, pad_radius))
        else:
            out.append(_forward_map(net, image, pad_radius))
    return out


def fold_indices(n: int, folds: int, seed: int) -> list[np.ndarray]:
    """Deterministic contiguous-block fold assignment after a seeded shuffle;
    the blocks partition range(n) exactly."""
    if folds > n:
        raise ValueError(f"cannot split {n} samples into {folds} folds")
    perm = np.random.default_rng((seed, _FOLDS)).permutation(n)
    sizes = [n // folds + (1 if i < n % folds else 0) for i in range(folds)]
    out = []
    start = 0
    for size in sizes:
        out.append(perm[start : start + size])
        start += size
    return out


def cross_validate(
    config: TrainConfig,
    dataset: list[SamplePair],
    eval_config: EvalConfig = EvalConfig(),
) -> list[ScoreReport]:
    """Train on k-1 folds, score the held-out fold, one report per fold.

    Folds are contiguous blocks of a seeded shuffle and partition the
    dataset exactly; enrichment happens inside training only, so validation
    samples are never enriched.  With folds = 1 this trains on everything
    and returns no reports.
    """
    n = len(dataset)
    if config.folds == 1:
        train(config, dataset)
        return []
    blocks = fold_indices(n, config.folds, config.seed)
    all_idx = np.arange(n)
    reports: list[ScoreReport] = []
    for val_idx in blocks:
        train_idx = np.setdiff1d(all_idx, val_idx)
        ckpt, _ = train(config, [dataset[i] for i in train_idx])
        net = net_from_checkpoint(ckpt)
        maps = predict(net, [dataset[i].image for i in val_idx], tta=config.tta, pad_radius=config.pad_radius)
        scores = [
            evaluate(prob, dataset[i].label, eval_config) for prob, i in zip(maps, val_idx)
        ]
        reports.append(
            ScoreReport(
                v_rand=float(np.mean([s.v_rand for s in scores])),
                v_info=float(np.mean([s.v_info for s in scores])),
                v_dice=float(np.mean([s.v_dice for s in scores])),
                pixels=int(sum(s.pixels for s in scores)),
            )
        )
    return reports
