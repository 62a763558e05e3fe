"""MAE and GAME (grid average mean absolute error) for density-map counting."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from . import kernels
from .core import as_array
from .errors import DimensionError, FormatError, ParameterError


class Patch(NamedTuple):
    row_start: int
    row_stop: int
    col_start: int
    col_stop: int

    @property
    def height(self):
        return self.row_stop - self.row_start

    @property
    def width(self):
        return self.col_stop - self.col_start


def mae(estimates: Sequence[float], truths: Sequence[float]) -> float:
    est = np.asarray(estimates, dtype=np.float64).ravel()
    gt = np.asarray(truths, dtype=np.float64).ravel()
    if est.size == 0 or est.size != gt.size:
        raise ParameterError(
            f"mae needs two equal, non-empty count lists (got {est.size} and {gt.size})"
        )
    return float(np.mean(np.abs(est - gt)))


def _check_level(height, width, level):
    if int(level) != level or level < 0:
        raise ParameterError(f"GAME level must be a non-negative integer, got {level}")
    if 2 ** level > min(height, width):
        raise ParameterError(
            f"GAME level {level} needs 2^{level} <= min(height, width) = {min(height, width)}"
        )


def axis_bounds(dim: int, level: int) -> np.ndarray:
    """Patch boundaries floor(k*dim/2^level), k = 0..2^level."""
    n = 2 ** level
    return np.array([(k * dim) // n for k in range(n + 1)], dtype=np.int64)


def partition_patches(height: int, width: int, level: int) -> list[Patch]:
    _check_level(height, width, level)
    rb, cb = axis_bounds(height, level), axis_bounds(width, level)
    return [
        Patch(int(rb[i]), int(rb[i + 1]), int(cb[j]), int(cb[j + 1]))
        for i in range(len(rb) - 1)
        for j in range(len(cb) - 1)
    ]


def _patch_differences(estimated, truth, level):
    est = np.ascontiguousarray(as_array(estimated), dtype=np.float64)
    gt = np.ascontiguousarray(as_array(truth), dtype=np.float64)
    if est.shape != gt.shape:
        raise DimensionError(f"estimated {est.shape} and truth {gt.shape} differ in shape")
    _check_level(est.shape[0], est.shape[1], level)
    rb, cb = axis_bounds(est.shape[0], level), axis_bounds(est.shape[1], level)
    return kernels.patch_sums(est, rb, cb) - kernels.patch_sums(gt, rb, cb)


def game_levels(estimated, truth, levels: Sequence[int]) -> dict[int, float]:
    """Per-image GAME for several levels at once.

    Coarse patch errors are aggregated from the finest level's signed
    differences (the floor partition is nested), so GAME(L+1) >= GAME(L)
    holds exactly in floating point, not just up to rounding.
    """
    levels = sorted(set(int(lv) for lv in levels))
    if not levels:
        raise ParameterError("at least one GAME level is required")
    diffs = {levels[-1]: _patch_differences(estimated, truth, levels[-1])}
    d = diffs[levels[-1]]
    for lv in range(levels[-1] - 1, -1, -1):
        n = d.shape[0] // 2
        d = d.reshape(n, 2, n, 2).transpose(0, 2, 1, 3).reshape(n, n, 4)
        d = d[..., 0] + d[..., 1] + d[..., 2] + d[..., 3]
        diffs[lv] = d
    out = {}
    for lv in levels:
        absd = np.abs(diffs[lv])
        # group children under their parents so sums share one order across levels
        for _ in range(lv):
            n = absd.shape[0] // 2
            absd = absd.reshape(n, 2, n, 2).transpose(0, 2, 1, 3).reshape(n, n, 4)
            absd = absd[..., 0] + absd[..., 1] + absd[..., 2] + absd[..., 3]
        out[lv] = float(absd[0, 0])
    return out


def game(estimated, truth, level: int) -> float:
    """Per-image GAME(level): sum over 4^level patches of |patch count error|."""
    return game_levels(estimated, truth, [level])[level]


def dataset_game(pairs, level: int) -> float:
    """Mean of per-image GAME(level) over (estimated, truth) pairs."""
    values = [game(e, t, level) for e, t in pairs]
    if not values:
        raise ParameterError("dataset_game needs at least one image")
    return float(np.mean(values))


@dataclass
class MetricsReport:
    split: str
    n_images: int
    mae: float
    game: dict[int, float]
    per_image: list[tuple[str, float, float]] = field(default_factory=list)
    model: str = "MMCount"
    input_mode: str = ""
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.game = {int(k): float(v) for k, v in self.game.items()}
        if self.n_images != len(self.per_image) and self.per_image:
            raise ParameterError("n_images must equal the number of per-image rows")
        if 0 in self.game and self.game[0] != self.mae:
            raise ParameterError("game[0] must equal mae")

    @classmethod
    def from_maps(cls, split, ids, estimated_maps, truth_maps, levels=(0, 1, 2),
                  model="MMCount", input_mode="", extra=None):
        if not ids:
            raise ParameterError(f"split {split!r} is empty")
        levels = sorted(set(int(lv) for lv in levels) | {0})
        per_level = {lv: [] for lv in levels}
        rows = []
        for sid, est, gt in zip(ids, estimated_maps, truth_maps):
            values = game_levels(est, gt, levels)
            for lv in levels:
                per_level[lv].append(values[lv])
            rows.append((sid, float(np.sum(as_array(est), dtype=np.float64)),
                         float(np.sum(as_array(gt), dtype=np.float64))))
        game_means = {lv: float(np.mean(v)) for lv, v in per_level.items()}
        return cls(split=split, n_images=len(rows), mae=game_means[0], game=game_means,
                   per_image=rows, model=model, input_mode=input_mode, extra=dict(extra or {}))

    def to_dict(self):
        return {
            "model": self.model,
            "input_mode": self.input_mode,
            "split": self.split,
            "n_images": self.n_images,
            "mae": self.mae,
            "game": {str(k): v for k, v in sorted(self.game.items())},
            "per_image": [list(r) for r in self.per_image],
            **({"extra": self.extra} if self.extra else {}),
        }

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(
                split=d["split"],
                n_images=int(d["n_images"]),
                mae=float(d["mae"]),
                game={int(k): float(v) for k, v in d["game"].items()},
                per_image=[(str(a), float(b), float(c)) for a, b, c in d.get("per_image", [])],
                model=d.get("model", "MMCount"),
                input_mode=d.get("input_mode", ""),
                extra=d.get("extra", {}),
            )
        except (KeyError, TypeError, ValueError, AttributeError) as exc:
            raise FormatError(f"malformed metrics record: {exc}") from exc

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def from_json(cls, path):
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: not valid JSON ({exc})") from exc
        if not isinstance(data, dict):
            raise FormatError(f"{path}: expected a JSON object")
        try:
            return cls.from_dict(data)
        except FormatError as exc:
            raise FormatError(f"{path}: {exc}") from exc

    def csv_row(self, levels):
        return [self.model, self.input_mode] + [self.game[lv] for lv in levels]


def format_value(v: float) -> str:
    return str(round(float(v), 4))


def reports_to_csv(reports, levels=None) -> str:
    """CSV with columns model,input_mode,GAME<L>... (one row per report)."""
    if levels is None:
        levels = sorted(set().union(*(r.game.keys() for r in reports)))
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["model", "input_mode"] + [f"GAME{lv}" for lv in levels])
    for r in reports:
        writer.writerow([r.model, r.input_mode]
                        + [format_value(r.game[lv]) if lv in r.game else "" for lv in levels])
    return buf.getvalue()
