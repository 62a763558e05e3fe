"""JSON-lines dataset manifests and a seeded synthetic paired RGB/TIR scene generator."""
from __future__ import annotations

import json
import logging
import math
import os
import shutil
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.ndimage import zoom

from .core import SPLITS, ImageBuffer, PointSet, SampleRecord, image_size, save_image
from .errors import AnnotationError, LoadError, ParameterError, ParseError

log = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.jsonl"
DATASET_META = "dataset.json"
# synthetic dims must be multiples of the counter's downsample factor
DIM_MULTIPLE = 4


@dataclass(frozen=True)
class DatasetManifest:
    root: Path
    samples: tuple[SampleRecord, ...]
    sigma: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise ParameterError(f"sigma must be > 0, got {self.sigma}")
        ids = [s.id for s in self.samples]
        if len(set(ids)) != len(ids):
            raise ParseError("sample ids must be unique")

    def split(self, name: str) -> list[SampleRecord]:
        return [s for s in self.samples if s.split == name]

    @property
    def has_tir(self) -> bool:
        return all(s.tir_path is not None for s in self.samples)


def _record_to_json(rec: SampleRecord, root: Path) -> str:
    def rel(p):
        return None if p is None else Path(os.path.relpath(p, root)).as_posix()

    obj = {
        "id": rec.id,
        "rgb": rel(rec.rgb_path),
        "tir": rel(rec.tir_path),
        "points": [[x, y] for x, y in rec.points.points.tolist()],
        "split": rec.split,
    }
    return json.dumps(obj, separators=(", ", ": "))


def write_manifest(manifest: DatasetManifest, path=None) -> Path:
    """Write manifest.jsonl and dataset.json under ``manifest.root`` (or next to ``path``)."""
    path = Path(path) if path is not None else manifest.root / MANIFEST_NAME
    root = manifest.root
    lines = [_record_to_json(s, root) for s in manifest.samples]
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    (path.parent / DATASET_META).write_text(json.dumps({"sigma": manifest.sigma}) + "\n")
    return path


def load_manifest(path, sigma: Optional[float] = None) -> DatasetManifest:
    """Parse and validate a JSON-lines manifest.

    Relative paths resolve against the manifest's directory. Sigma comes from
    ``dataset.json`` beside the manifest unless given explicitly.
    """
    path = Path(path)
    if not path.is_file():
        raise LoadError(f"manifest {path} does not exist")
    root = path.parent
    if sigma is None:
        meta_path = root / DATASET_META
        if not meta_path.is_file():
            raise LoadError(f"{meta_path} missing (needed for the dataset sigma)")
        try:
            sigma = float(json.loads(meta_path.read_text())["sigma"])
        except (ValueError, KeyError, TypeError) as exc:
            raise ParseError(f"{meta_path}: cannot read sigma ({exc})") from exc

    samples = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            sid = str(obj["id"])
            rgb = obj["rgb"]
            tir = obj.get("tir")
            pts = np.asarray(obj.get("points", []), dtype=np.float64).reshape(-1, 2)
            split = obj["split"]
        except (ValueError, KeyError, TypeError) as exc:
            raise ParseError(f"{path}:{lineno}: malformed manifest line ({exc})") from exc
        if split not in SPLITS:
            raise ParseError(f"{path}:{lineno}: unknown split {split!r}")

        rgb_path = root / rgb
        if not rgb_path.is_file():
            raise LoadError(f"sample {sid}: rgb image {rgb_path} not found")
        h, w = image_size(rgb_path)
        tir_path = None
        if tir is not None:
            tir_path = root / tir
            if not tir_path.is_file():
                raise LoadError(f"sample {sid}: tir image {tir_path} not found")
            if image_size(tir_path) != (h, w):
                raise ParseError(
                    f"sample {sid}: tir size {image_size(tir_path)} != rgb size {(h, w)}"
                )
        points = PointSet(pts)
        try:
            points.validate(h, w)
        except AnnotationError as exc:
            raise AnnotationError(f"sample {sid} ({path}:{lineno}): {exc}") from exc
        samples.append(SampleRecord(sid, rgb_path, tir_path, points, split))
    return DatasetManifest(root=root, samples=tuple(samples), sigma=sigma)


@dataclass(frozen=True)
class SynthParams:
    n_images: int = 40
    height: int = 128
    width: int = 160
    heads_min: int = 5
    heads_max: int = 30
    head_radius: int = 3
    dark_fraction: float = 0.3
    seed: int = 0

    def __post_init__(self):
        if self.n_images < 1:
            raise ParameterError("n_images must be >= 1")
        if self.height < 32 or self.width < 32:
            raise ParameterError(f"dims must be >= 32, got {self.height}x{self.width}")
        if self.height % DIM_MULTIPLE or self.width % DIM_MULTIPLE:
            raise ParameterError(
                f"dims must be multiples of {DIM_MULTIPLE}, got {self.height}x{self.width}")
        if not 0 <= self.heads_min <= self.heads_max:
            raise ParameterError("need 0 <= heads_min <= heads_max")
        if self.head_radius < 1 or 2 * self.head_radius >= min(self.height, self.width):
            raise ParameterError(f"head_radius {self.head_radius} does not fit the image")
        if not 0.0 <= self.dark_fraction <= 1.0:
            raise ParameterError("dark_fraction must lie in [0, 1]")
        if self.seed < 0:
            raise ParameterError("seed must be unsigned")


@dataclass(frozen=True)
class SceneTruth:
    """Generator-internal record of what was drawn, for test oracles."""

    centers: np.ndarray  # (N, 2) as (x, y)
    dark: np.ndarray  # (N,) bool


def _value_noise(rng, height, width, cell=16):
    gh, gw = math.ceil(height / cell) + 1, math.ceil(width / cell) + 1
    coarse = rng.random((gh, gw))
    fine = zoom(coarse, (height / (gh - 1), width / (gw - 1)), order=1, mode="nearest",
                grid_mode=False)
    return fine[:height, :width]


def _sample_centers(rng, n, params):
    """Rejection-sample non-touching interior head centres."""
    r = params.head_radius
    min_dist = 2 * r + 2
    centers = []
    attempts = 0
    while len(centers) < n and attempts < 1000 * max(n, 1):
        attempts += 1
        x = rng.uniform(r, params.width - r)
        y = rng.uniform(r, params.height - r)
        if all((x - cx) ** 2 + (y - cy) ** 2 >= min_dist ** 2 for cx, cy in centers):
            centers.append((x, y))
    return np.asarray(centers, dtype=np.float64).reshape(-1, 2)


def synth_scene_with_truth(params: SynthParams, index: int):
    rng = np.random.default_rng(np.random.SeedSequence([params.seed, index]))
    h, w = params.height, params.width
    n = int(rng.integers(params.heads_min, params.heads_max + 1))
    centers = _sample_centers(rng, n, params)
    dark = rng.random(len(centers)) < params.dark_fraction

    # RGB: dim, low-contrast coloured noise background
    base = 0.25 + 0.1 * _value_noise(rng, h, w)
    tint = np.array([1.0, 0.9, 0.8])
    rgb = base[:, :, None] * tint[None, None, :] + 0.03 * (rng.random((h, w, 3)) - 0.5)
    # TIR: cool background
    tir = 0.15 + 0.05 * _value_noise(rng, h, w) + 0.02 * (rng.random((h, w)) - 0.5)

    yy, xx = np.mgrid[0:h, 0:w]
    head_rgb = np.array([0.85, 0.65, 0.5])
    for (x, y), is_dark in zip(centers, dark):
        cx, cy = math.floor(x) + 0.5, math.floor(y) + 0.5
        disc = (xx + 0.5 - cx) ** 2 + (yy + 0.5 - cy) ** 2 <= params.head_radius ** 2
        tir[disc] = 0.85
        if not is_dark:
            rgb[disc] = head_rgb
    rgb = np.clip(rgb, 0.0, 1.0).astype(np.float32)
    tir = np.clip(tir, 0.0, 1.0).astype(np.float32)
    return ImageBuffer(rgb), ImageBuffer(tir), PointSet(centers), SceneTruth(centers, dark)


def synth_scene(params: SynthParams, index: int):
    """Deterministic (rgb, tir, points) for ``(params.seed, index)``."""
    rgb, tir, points, _ = synth_scene_with_truth(params, index)
    return rgb, tir, points


def split_sizes(n: int, ratios) -> list[int]:
    """Largest-remainder apportionment of ``n`` items over ``ratios``."""
    ratios = [float(r) for r in ratios]
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-6:
        raise ParameterError(f"split ratios must be three non-negatives summing to 1, got {ratios}")
    quotas = [n * r for r in ratios]
    sizes = [math.floor(q) for q in quotas]
    order = sorted(range(3), key=lambda i: (-(quotas[i] - sizes[i]), i))
    for i in order[: n - sum(sizes)]:
        sizes[i] += 1
    return sizes


def make_synth_dataset(params: SynthParams, out_dir, split_ratios=(0.8, 0.1, 0.1),
                       sigma: float = 3.0, overwrite: bool = False) -> DatasetManifest:
    out_dir = Path(out_dir)
    sizes = split_sizes(params.n_images, split_ratios)
    if out_dir.exists() and any(out_dir.iterdir()):
        if not overwrite:
            raise FileExistsError(f"output directory {out_dir} is not empty (use overwrite)")
        shutil.rmtree(out_dir)
    (out_dir / "rgb").mkdir(parents=True, exist_ok=True)
    (out_dir / "tir").mkdir(parents=True, exist_ok=True)

    order = np.random.default_rng(np.random.SeedSequence([params.seed, 2**31])).permutation(
        params.n_images)
    split_of = {}
    for rank, idx in enumerate(order.tolist()):
        split_of[idx] = "train" if rank < sizes[0] else "val" if rank < sizes[0] + sizes[1] else "test"

    samples = []
    for i in range(params.n_images):
        rgb, tir, points = synth_scene(params, i)
        sid = f"synth_{i:05d}"
        rgb_path, tir_path = out_dir / "rgb" / f"{sid}.png", out_dir / "tir" / f"{sid}.png"
        save_image(rgb, rgb_path)
        save_image(tir, tir_path)
        samples.append(SampleRecord(sid, rgb_path, tir_path, points, split_of[i]))
    manifest = DatasetManifest(root=out_dir, samples=tuple(samples), sigma=sigma)
    write_manifest(manifest)
    (out_dir / "synth_params.json").write_text(json.dumps(asdict(params), sort_keys=True) + "\n")
    log.info("synthesized %d scenes into %s (train/val/test = %s)", params.n_images, out_dir, sizes)
    return load_manifest(out_dir / MANIFEST_NAME)
