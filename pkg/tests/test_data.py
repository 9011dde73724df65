"""Manifest parsing, image decoding, and dataset validation."""

import numpy as np
import pytest
from PIL import Image

from fusionnet.data import load_dataset, load_images, parse_manifest, read_image, write_image


def write_gray(path, arr):
    Image.fromarray(arr.astype(np.uint8), mode="L").save(path)


class TestImages:
    def test_roundtrip_png(self, tmp_path):
        values = np.linspace(0, 1, 64, dtype=np.float32).reshape(8, 8)
        p = tmp_path / "x.png"
        write_image(p, values)
        decoded = read_image(p)
        assert decoded.shape == (8, 8)
        assert np.max(np.abs(decoded - values)) <= 0.5 / 255

    def test_pgm_supported(self, tmp_path):
        arr = (np.arange(48) % 256).reshape(6, 8).astype(np.uint8)
        p = tmp_path / "x.pgm"
        Image.fromarray(arr, mode="L").save(p)
        decoded = read_image(p)
        np.testing.assert_allclose(decoded, arr / 255.0)

    def test_rgb_rejected(self, tmp_path):
        p = tmp_path / "rgb.png"
        Image.new("RGB", (4, 4), (10, 20, 30)).save(p)
        with pytest.raises(ValueError, match="grayscale"):
            read_image(p)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError, match="nope.png"):
            read_image(tmp_path / "nope.png")


class TestManifest:
    def test_parse_pairs_and_headers(self, tmp_path):
        (tmp_path / "m.txt").write_text(
            "# comment\nsize = 4x4\npixel_size = 4x4x50nm\nimg0.png lab0.png\nimg1.png lab1.png\n"
        )
        m = parse_manifest(tmp_path / "m.txt")
        assert len(m) == 2
        assert m.size == (4, 4)
        assert m.pixel_size == "4x4x50nm"
        assert m.entries[0][0] == tmp_path / "img0.png"

    def test_empty_manifest_is_empty_dataset(self, tmp_path):
        (tmp_path / "m.txt").write_text("# nothing\n")
        assert load_dataset(tmp_path / "m.txt") == []

    def test_unknown_key_rejected(self, tmp_path):
        (tmp_path / "m.txt").write_text("resolution = high\n")
        with pytest.raises(ValueError, match="resolution"):
            parse_manifest(tmp_path / "m.txt")

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            parse_manifest(tmp_path / "absent.txt")


class TestLoadDataset:
    def _write_corpus(self, tmp_path, n, size=16):
        lines = [f"size = {size}x{size}"]
        rng = np.random.default_rng(0)
        for i in range(n):
            img = rng.integers(0, 256, (size, size))
            lab = rng.choice([0, 255], (size, size))
            write_gray(tmp_path / f"i{i}.png", img)
            write_gray(tmp_path / f"l{i}.png", lab)
            lines.append(f"i{i}.png l{i}.png")
        (tmp_path / "m.txt").write_text("\n".join(lines) + "\n")
        return tmp_path / "m.txt"

    def test_thirty_section_stack(self, tmp_path):
        manifest = self._write_corpus(tmp_path, 30, size=512)
        pairs = load_dataset(manifest)
        assert len(pairs) == 30
        assert all(p.image.shape == (512, 512) for p in pairs)

    def test_labels_binarized(self, tmp_path):
        manifest = self._write_corpus(tmp_path, 2)
        for pair in load_dataset(manifest):
            assert set(np.unique(pair.label)) <= {0, 1}
            assert pair.image.min() >= 0.0 and pair.image.max() <= 1.0

    def test_declared_size_enforced(self, tmp_path):
        write_gray(tmp_path / "i.png", np.zeros((8, 8)))
        write_gray(tmp_path / "l.png", np.zeros((8, 8)))
        (tmp_path / "m.txt").write_text("size = 16x16\ni.png l.png\n")
        with pytest.raises(ValueError, match="declared"):
            load_dataset(tmp_path / "m.txt")

    def test_label_size_mismatch(self, tmp_path):
        write_gray(tmp_path / "i.png", np.zeros((8, 8)))
        write_gray(tmp_path / "l.png", np.zeros((8, 4)))
        (tmp_path / "m.txt").write_text("i.png l.png\n")
        with pytest.raises(ValueError, match="l.png"):
            load_dataset(tmp_path / "m.txt")

    def test_missing_referenced_file(self, tmp_path):
        (tmp_path / "m.txt").write_text("ghost.png ghost_l.png\n")
        with pytest.raises(FileNotFoundError, match="ghost.png"):
            load_dataset(tmp_path / "m.txt")


class TestLoadImages:
    def test_single_image(self, tmp_path):
        write_gray(tmp_path / "one.png", np.zeros((8, 8)))
        out = load_images(tmp_path / "one.png")
        assert len(out) == 1 and out[0][0] == "one"

    def test_image_column_of_manifest(self, tmp_path):
        write_gray(tmp_path / "a.png", np.zeros((8, 8)))
        write_gray(tmp_path / "b.png", np.zeros((8, 8)))
        (tmp_path / "m.txt").write_text("a.png\nb.png\n")
        out = load_images(tmp_path / "m.txt")
        assert [stem for stem, _ in out] == ["a", "b"]
