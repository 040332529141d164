import os

import numpy as np
import pytest
from PIL import Image as PILImage

from flim.errors import DuplicateIdError, FormatError, IoError, LayoutError
from flim.image_io import (denormalize_lab, load_dataset, load_image,
                           normalize_lab, rgb_array_to_lab, rgb_to_lab)

from oracles import reference_rgb_to_lab

# frozen from the independent scalar reference implementation
LAB_FIXTURES = {
    (255, 255, 255): (100.000004, -0.000017, 0.000007),
    (0, 0, 0): (0.0, 0.0, 0.0),
    (255, 0, 0): (53.240794, 80.092460, 67.203197),
    (0, 255, 0): (87.734722, -86.182716, 83.179321),
    (0, 0, 255): (32.297011, 79.187520, -107.860162),
    (128, 128, 128): (53.585016, -0.000010, 0.000004),
    (64, 32, 200): (30.137528, 59.095183, -79.886952),
    (200, 100, 50): (53.629540, 36.305775, 45.379528),
}


def test_white_and_black_reference_points():
    assert rgb_to_lab((255, 255, 255)) == pytest.approx((100.0, 0.0, 0.0), abs=1e-3)
    assert rgb_to_lab((0, 0, 0)) == pytest.approx((0.0, 0.0, 0.0), abs=1e-3)


def test_frozen_lab_fixtures():
    for rgb, expected in LAB_FIXTURES.items():
        assert rgb_to_lab(rgb) == pytest.approx(expected, abs=1e-4)


def test_lab_agrees_with_reference_on_color_grid():
    # 5x5x4 = 100 colors
    values = []
    for r in (0, 64, 128, 191, 255):
        for g in (0, 64, 128, 191, 255):
            for b in (10, 90, 170, 250):
                values.append((r, g, b))
    assert len(values) == 100
    for rgb in values:
        expected = reference_rgb_to_lab(*rgb)
        assert rgb_to_lab(rgb) == pytest.approx(expected, abs=1e-3)


def test_normalization_round_trip():
    rng = np.random.default_rng(0)
    lab = np.stack([rng.uniform(0, 100, (7, 5)),
                    rng.uniform(-128, 127, (7, 5)),
                    rng.uniform(-128, 127, (7, 5))], axis=-1)
    back = denormalize_lab(normalize_lab(lab))
    assert np.abs(back - lab).max() < 1e-6


def _write_png(path, array):
    PILImage.fromarray(array.astype(np.uint8)).save(path)


def test_load_image_white_black_pixels(tmp_path):
    arr = np.zeros((2, 2, 3), dtype=np.uint8)
    arr[0, 0] = (255, 255, 255)
    path = str(tmp_path / "img.png")
    _write_png(path, arr)
    img = load_image(path)
    assert img.bands == 3 and img.data.shape == (2, 2, 3)
    white = img.data[0, 0]
    # L=100 -> 1.0; a,b ~ 0 -> (0+128)/255
    assert white[0] == pytest.approx(1.0, abs=1e-5)
    assert white[1] == pytest.approx(128 / 255, abs=1e-3)
    assert white[2] == pytest.approx(128 / 255, abs=1e-3)
    black = img.data[1, 1]
    assert black[0] == pytest.approx(0.0, abs=1e-5)
    assert black[1] == pytest.approx(128 / 255, abs=1e-3)


def test_load_image_range_contract(tmp_path):
    rng = np.random.default_rng(1)
    arr = rng.integers(0, 256, (16, 11, 3), dtype=np.uint8)
    path = str(tmp_path / "img.png")
    _write_png(path, arr)
    img = load_image(path)
    assert img.data.shape == (16, 11, 3)
    assert img.data.min() >= 0.0 and img.data.max() <= 1.0


def test_load_image_errors(tmp_path):
    with pytest.raises(IoError):
        load_image(str(tmp_path / "missing.png"))
    bad = tmp_path / "bad.png"
    bad.write_bytes(b"this is not a png")
    with pytest.raises(IoError):
        load_image(str(bad))
    gray = tmp_path / "gray.png"
    PILImage.fromarray(np.zeros((4, 4), dtype=np.uint8), mode="L").save(gray)
    with pytest.raises(FormatError):
        load_image(str(gray))


def _make_dataset(root, per_class=2):
    for label in (1, 2):
        os.makedirs(os.path.join(root, str(label)), exist_ok=True)
        for i in range(per_class):
            arr = np.full((4, 4, 3), 40 * label + i, dtype=np.uint8)
            _write_png(os.path.join(root, str(label), f"c{label}_{i}.png"), arr)


def test_load_dataset_directory_layout(tmp_path):
    _make_dataset(str(tmp_path))
    index = load_dataset(str(tmp_path))
    assert len(index.entries) == 4
    assert index.classes == 2
    assert sorted(index.ids()) == ["c1_0", "c1_1", "c2_0", "c2_1"]
    assert index.label_of("c2_1") == 2


def test_load_dataset_empty_is_layout_error(tmp_path):
    with pytest.raises(LayoutError):
        load_dataset(str(tmp_path))


def test_load_dataset_manifest(tmp_path):
    _make_dataset(str(tmp_path))
    lines = ["a\t1/c1_0.png\t1", "b\t2/c2_0.png\t2"]
    (tmp_path / "manifest.tsv").write_text("\n".join(lines) + "\n")
    index = load_dataset(str(tmp_path))
    assert sorted(index.ids()) == ["a", "b"]
    assert index.classes == 2


def test_load_dataset_duplicate_id(tmp_path):
    _make_dataset(str(tmp_path))
    lines = ["a\t1/c1_0.png\t1", "a\t2/c2_0.png\t2"]
    (tmp_path / "manifest.tsv").write_text("\n".join(lines) + "\n")
    with pytest.raises(DuplicateIdError):
        load_dataset(str(tmp_path))


def test_vectorized_matches_scalar():
    rng = np.random.default_rng(2)
    arr = rng.integers(0, 256, (3, 4, 3))
    lab = rgb_array_to_lab(arr)
    for y in range(3):
        for x in range(4):
            assert lab[y, x] == pytest.approx(rgb_to_lab(arr[y, x]), abs=1e-9)
