"""Dataset ingestion: manifest files listing image/label pairs, and 8-bit
grayscale image I/O (PNG and PGM).

A manifest is plain text.  Optional ``key = value`` header lines declare
metadata (``size = 512x512`` to enforce dimensions, ``pixel_size`` free
text); every other non-comment line names an image path and a label path
separated by whitespace, resolved relative to the manifest's directory.
Prediction-only manifests may list a single path per line.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .augment import SamplePair

__all__ = ["DatasetManifest", "parse_manifest", "load_dataset", "read_image", "write_image"]

_IMAGE_SUFFIXES = (".png", ".pgm")


@dataclass
class DatasetManifest:
    entries: list[tuple[Path, Path | None]]
    size: tuple[int, int] | None = None
    pixel_size: str | None = None
    path: Path | None = None

    def __len__(self) -> int:
        return len(self.entries)


def parse_manifest(path: str | Path) -> DatasetManifest:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"manifest not found: {path}")
    base = path.parent
    entries: list[tuple[Path, Path | None]] = []
    size = None
    pixel_size = None
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" in line:
            key, _, value = (part.strip() for part in line.partition("="))
            if key == "size":
                try:
                    h, w = value.lower().split("x")
                    size = (int(h), int(w))
                except ValueError:
                    raise ValueError(f"{path}:{lineno}: bad size {value!r}, expected HxW") from None
            elif key == "pixel_size":
                pixel_size = value
            else:
                raise ValueError(f"{path}:{lineno}: unknown manifest key {key!r}")
            continue
        parts = line.split()
        if len(parts) == 1:
            entries.append((base / parts[0], None))
        elif len(parts) == 2:
            entries.append((base / parts[0], base / parts[1]))
        else:
            raise ValueError(f"{path}:{lineno}: expected 'image label' or 'image', got {line!r}")
    return DatasetManifest(entries, size, pixel_size, path)


def read_image(path: str | Path) -> np.ndarray:
    """8-bit grayscale image as float32 in [0, 1]."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"image not found: {path}")
    with Image.open(path) as img:
        if img.mode == "1":
            img = img.convert("L")
        if img.mode != "L":
            raise ValueError(f"{path}: expected 8-bit grayscale, got mode {img.mode!r}")
        arr = np.asarray(img, dtype=np.uint8)
    return arr.astype(np.float32) / 255.0


def write_image(path: str | Path, values: np.ndarray) -> None:
    """Write values in [0, 1] as an 8-bit grayscale PNG/PGM."""
    path = Path(path)
    arr = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    Image.fromarray(np.rint(arr * 255.0).astype(np.uint8), mode="L").save(path)


def load_dataset(manifest: DatasetManifest | str | Path) -> list[SamplePair]:
    """Decode every manifest entry: images normalized to [0, 1], labels
    binarized at 0.5, dimensions validated against the declaration and the
    paired image."""
    if not isinstance(manifest, DatasetManifest):
        manifest = parse_manifest(manifest)
    pairs: list[SamplePair] = []
    for image_path, label_path in manifest.entries:
        image = read_image(image_path)
        if manifest.size is not None and image.shape != manifest.size:
            raise ValueError(
                f"{image_path}: decoded size {image.shape} does not match declared {manifest.size}"
            )
        if label_path is None:
            raise ValueError(f"{image_path}: manifest entry has no label (dataset loading needs pairs)")
        label_f = read_image(label_path)
        if label_f.shape != image.shape:
            raise ValueError(
                f"{label_path}: label size {label_f.shape} does not match image size {image.shape}"
            )
        pairs.append(SamplePair(image, (label_f >= 0.5).astype(np.uint8)))
    return pairs


def load_images(manifest_or_image: str | Path) -> list[tuple[str, np.ndarray]]:
    """Images for prediction: a single image file, or every image column of a
    manifest.  Returns (stem, array) pairs."""
    p = Path(manifest_or_image)
    if p.suffix.lower() in _IMAGE_SUFFIXES:
        return [(p.stem, read_image(p))]
    manifest = parse_manifest(p)
    return [(img.stem, read_image(img)) for img, _ in manifest.entries]
