import json

import numpy as np
import pytest

from mmcount.core import load_image
from mmcount.data import (SynthParams, load_manifest, make_synth_dataset, split_sizes,
                          synth_scene, synth_scene_with_truth)
from mmcount.errors import AnnotationError, LoadError, ParameterError, ParseError


def _write_png(path, h, w, channels=3):
    from PIL import Image

    arr = np.zeros((h, w, 3) if channels == 3 else (h, w), dtype=np.uint8)
    Image.fromarray(arr).save(path)


@pytest.fixture
def raw_dataset(tmp_path):
    (tmp_path / "img").mkdir()
    for i in range(3):
        _write_png(tmp_path / "img" / f"{i}.png", 20, 30)
    _write_png(tmp_path / "img" / "t0.png", 20, 30, channels=1)
    (tmp_path / "dataset.json").write_text(json.dumps({"sigma": 7.0}))
    return tmp_path


def _manifest(root, lines):
    path = root / "manifest.jsonl"
    path.write_text("".join(json.dumps(obj) + "\n" for obj in lines))
    return path


def test_load_three_lines(raw_dataset):
    path = _manifest(raw_dataset, [
        {"id": "a", "rgb": "img/0.png", "tir": "img/t0.png", "points": [[1, 2], [29.5, 19.5]], "split": "train"},
        {"id": "b", "rgb": "img/1.png", "points": [], "split": "val"},
        {"id": "c", "rgb": "img/2.png", "tir": None, "points": [[0, 0]], "split": "test"},
    ])
    m = load_manifest(path)
    assert len(m.samples) == 3
    assert m.sigma == 7.0
    assert m.samples[0].tir_path is not None
    assert m.samples[1].tir_path is None and m.samples[2].tir_path is None
    assert len(m.samples[0].points) == 2


def test_point_out_of_bounds(raw_dataset):
    path = _manifest(raw_dataset, [
        {"id": "a", "rgb": "img/0.png", "points": [[31, 10]], "split": "train"}])
    with pytest.raises(AnnotationError, match="sample a"):
        load_manifest(path)


def test_point_700_for_640_wide(tmp_path):
    _write_png(tmp_path / "w.png", 512, 640)
    (tmp_path / "dataset.json").write_text('{"sigma": 7}')
    path = _manifest(tmp_path, [{"id": "a", "rgb": "w.png", "points": [[700, 10]], "split": "train"}])
    with pytest.raises(AnnotationError):
        load_manifest(path)


def test_missing_image(raw_dataset):
    path = _manifest(raw_dataset, [{"id": "zz", "rgb": "img/nope.png", "points": [], "split": "train"}])
    with pytest.raises(LoadError, match="zz"):
        load_manifest(path)


def test_malformed_line_number(raw_dataset):
    path = raw_dataset / "manifest.jsonl"
    path.write_text(json.dumps({"id": "a", "rgb": "img/0.png", "points": [], "split": "train"})
                    + "\n{broken\n")
    with pytest.raises(ParseError, match=":2:"):
        load_manifest(path)


def test_tir_size_mismatch(raw_dataset):
    _write_png(raw_dataset / "img" / "small.png", 10, 10, channels=1)
    path = _manifest(raw_dataset, [
        {"id": "a", "rgb": "img/0.png", "tir": "img/small.png", "points": [], "split": "train"}])
    with pytest.raises(ParseError, match="tir size"):
        load_manifest(path)


def test_duplicate_ids(raw_dataset):
    line = {"id": "a", "rgb": "img/0.png", "points": [], "split": "train"}
    with pytest.raises(ParseError):
        load_manifest(_manifest(raw_dataset, [line, line]))


def test_missing_sigma(tmp_path):
    _write_png(tmp_path / "x.png", 8, 8)
    path = _manifest(tmp_path, [{"id": "a", "rgb": "x.png", "points": [], "split": "train"}])
    with pytest.raises(LoadError, match="sigma"):
        load_manifest(path)
    assert load_manifest(path, sigma=3.0).sigma == 3.0


def test_synth_deterministic():
    p = SynthParams(n_images=3, height=48, width=64, seed=11)
    a, b = synth_scene(p, 2), synth_scene(p, 2)
    assert a[0].values.tobytes() == b[0].values.tobytes()
    assert a[1].values.tobytes() == b[1].values.tobytes()
    assert a[2].points.tobytes() == b[2].points.tobytes()
    c = synth_scene(p, 1)
    assert c[0].values.tobytes() != a[0].values.tobytes()


def test_synth_shapes_and_points():
    p = SynthParams(height=64, width=96, heads_min=4, heads_max=9, seed=1)
    rgb, tir, pts = synth_scene(p, 0)
    assert rgb.channels == 3 and tir.channels == 1
    assert (rgb.height, rgb.width) == (64, 96) == (tir.height, tir.width)
    assert 4 <= len(pts) <= 9
    pts.validate(64, 96)


def _head_signal(img, centers):
    return np.array([img[int(np.floor(y)), int(np.floor(x))] for x, y in centers])


def test_synth_dark_fraction_zero_all_visible():
    p = SynthParams(height=64, width=64, heads_min=6, heads_max=6, dark_fraction=0.0, seed=2)
    rgb, tir, pts, truth = synth_scene_with_truth(p, 0)
    assert not truth.dark.any()
    red = _head_signal(rgb.values[:, :, 0], truth.centers)
    assert np.all(red > 0.8)
    assert np.all(_head_signal(tir.values[:, :, 0], truth.centers) > 0.8)


def test_synth_dark_fraction_one():
    p = SynthParams(height=64, width=64, heads_min=5, heads_max=5, dark_fraction=1.0, seed=3)
    rgb, tir, pts, truth = synth_scene_with_truth(p, 0)
    assert len(pts) == 5 and truth.dark.all()
    # no head-coloured pixels anywhere in RGB, five bright blobs in TIR
    assert rgb.values[:, :, 0].max() < 0.5
    from scipy.ndimage import label

    _, n_blobs = label(tir.values[:, :, 0] > 0.5)
    assert n_blobs == 5


@pytest.mark.parametrize("seed", range(5))
def test_points_equal_rendered_tir_blobs(seed):
    from scipy.ndimage import label

    p = SynthParams(height=64, width=80, heads_min=3, heads_max=20, head_radius=2, seed=seed)
    _, tir, pts, truth = synth_scene_with_truth(p, seed)
    _, n_blobs = label(tir.values[:, :, 0] > 0.5)
    assert n_blobs == len(truth.centers) == len(pts)


def test_dark_heads_visible_only_in_tir():
    p = SynthParams(n_images=20, height=96, width=96, heads_min=10, heads_max=20,
                    dark_fraction=0.3, seed=5)
    tir_dark, rgb_dark, tir_bg, rgb_bg = [], [], [], []
    for i in range(10):
        rgb, tir, _, truth = synth_scene_with_truth(p, i)
        gray = rgb.values.mean(axis=2)
        t = tir.values[:, :, 0]
        mask = np.ones_like(t, dtype=bool)
        yy, xx = np.mgrid[0:96, 0:96]
        for x, y in truth.centers:
            mask &= (xx - x) ** 2 + (yy - y) ** 2 > (p.head_radius + 2) ** 2
        tir_bg.append(t[mask])
        rgb_bg.append(gray[mask])
        dark = truth.centers[truth.dark]
        tir_dark.extend(_head_signal(t, dark))
        rgb_dark.extend(_head_signal(gray, dark))
    tir_bg, rgb_bg = np.concatenate(tir_bg), np.concatenate(rgb_bg)
    assert len(tir_dark) > 0
    assert np.mean(tir_dark) > tir_bg.mean() + 3 * tir_bg.std()
    assert abs(np.mean(rgb_dark) - rgb_bg.mean()) <= rgb_bg.std()


def test_synth_params_validation():
    with pytest.raises(ParameterError):
        SynthParams(height=16)
    with pytest.raises(ParameterError):
        SynthParams(width=66)
    with pytest.raises(ParameterError):
        SynthParams(heads_min=5, heads_max=2)
    with pytest.raises(ParameterError):
        SynthParams(dark_fraction=1.5)


@pytest.mark.parametrize("n, ratios, expected", [
    (10, (0.8, 0.1, 0.1), [8, 1, 1]),
    (200, (0.8, 0.1, 0.1), [160, 20, 20]),
    (7, (0.5, 0.25, 0.25), [3, 2, 2]),
    (3, (1 / 3, 1 / 3, 1 / 3), [1, 1, 1]),
])
def test_split_sizes_largest_remainder(n, ratios, expected):
    assert split_sizes(n, ratios) == expected
    assert sum(split_sizes(n, ratios)) == n


def test_split_ratio_validation():
    with pytest.raises(ParameterError):
        split_sizes(10, (0.5, 0.2, 0.2))


def test_make_synth_dataset(tmp_path):
    p = SynthParams(n_images=10, height=32, width=48, heads_max=8, head_radius=2, seed=4)
    m = make_synth_dataset(p, tmp_path / "d", (0.8, 0.1, 0.1), sigma=2.0)
    assert [len(m.split(s)) for s in ("train", "val", "test")] == [8, 1, 1]
    again = load_manifest(tmp_path / "d" / "manifest.jsonl")
    assert len(again.samples) == 10 and again.sigma == 2.0
    img = load_image(again.samples[0].tir_path)
    assert img.channels == 1


def test_make_synth_dataset_bytes_identical(tmp_path):
    p = SynthParams(n_images=6, height=32, width=32, heads_min=1, heads_max=5, head_radius=2, seed=9)
    make_synth_dataset(p, tmp_path / "a", (0.5, 0.5, 0.0))
    make_synth_dataset(p, tmp_path / "b", (0.5, 0.5, 0.0))
    for rel in ["manifest.jsonl", "dataset.json", "rgb/synth_00003.png", "tir/synth_00005.png"]:
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()


def test_make_synth_refuses_non_empty(tmp_path):
    out = tmp_path / "d"
    out.mkdir()
    (out / "junk").write_text("x")
    p = SynthParams(n_images=2, height=32, width=32, heads_min=1, heads_max=3, head_radius=2)
    with pytest.raises(FileExistsError):
        make_synth_dataset(p, out)
    make_synth_dataset(p, out, overwrite=True)
    assert not (out / "junk").exists()
