"""MMCount: two-branch RGB/TIR fusion network, density MSE loss, training and evaluation."""
from __future__ import annotations

import copy
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np
import torch
import torch.nn as nn

from . import gan
from .checkpoint import ModelCheckpoint, load_checkpoint, load_numpy_state, state_to_numpy
from .core import Grid2D, load_image
from .density import KernelSpec, target_at_scale
from .errors import DataError, DimensionError, InputError, ParameterError, TrainingError
from .metrics import MetricsReport, mae

log = logging.getLogger(__name__)

INPUT_MODES = ("rgb", "tir", "rgb+tir")


@dataclass(frozen=True)
class ConvSpec:
    in_ch: int
    out_ch: int
    kernel: int
    padding: int
    stride: int

    def as_row(self):
        return ("Conv", self.in_ch, self.out_ch, self.kernel, self.padding, self.stride)


@dataclass(frozen=True)
class PoolSpec:
    kernel: int
    stride: int

    def as_row(self):
        return ("Pool", self.kernel, self.stride)


def _branch(in_ch, widths=(16, 32, 64, 128)):
    a, b, c, d = widths
    return (ConvSpec(in_ch, a, 3, 1, 1), PoolSpec(2, 2), ConvSpec(a, b, 3, 1, 1), PoolSpec(2, 2),
            ConvSpec(b, c, 3, 1, 1), ConvSpec(c, d, 3, 1, 1))


@dataclass(frozen=True)
class MMCountConfig:
    """Layer lists for both branches, the fusion conv and the 1x1 regressor.

    The regressor uses padding 0 so its output has the fusion map's size.
    """

    rgb_branch: tuple = _branch(3)
    tir_branch: tuple = _branch(1)
    fusion: ConvSpec = ConvSpec(256, 256, 3, 1, 1)
    regressor: ConvSpec = ConvSpec(256, 1, 1, 0, 1)
    input_mode: str = "rgb+tir"

    def __post_init__(self):
        if self.input_mode not in INPUT_MODES:
            raise ParameterError(f"input_mode must be one of {INPUT_MODES}, got {self.input_mode!r}")
        convs = lambda br: [s for s in br if isinstance(s, ConvSpec)]  # noqa: E731
        rgb, tir = convs(self.rgb_branch), convs(self.tir_branch)
        if rgb[0].in_ch != 3 or tir[0].in_ch != 1:
            raise ParameterError("rgb branch must take 3 channels and tir branch 1")
        if self.fusion.in_ch != rgb[-1].out_ch + tir[-1].out_ch:
            raise ParameterError("fusion input channels must equal the concatenated branch outputs")
        if self.regressor.out_ch != 1 or self.regressor.in_ch != self.fusion.out_ch:
            raise ParameterError("regressor must map fusion channels to 1")
        if self.downsample_factor_of(self.rgb_branch) != self.downsample_factor_of(self.tir_branch):
            raise ParameterError("both branches must downsample by the same factor")

    @staticmethod
    def downsample_factor_of(branch) -> int:
        f = 1
        for s in branch:
            f *= s.stride
        return f

    @property
    def downsample_factor(self) -> int:
        return self.downsample_factor_of(self.rgb_branch)

    @classmethod
    def scaled(cls, divisor: int, input_mode: str = "rgb+tir") -> "MMCountConfig":
        """Same topology with every filter count divided by ``divisor`` (for quick checks)."""
        w = tuple(c // divisor for c in (16, 32, 64, 128))
        fused = 2 * w[-1]
        f2 = 256 // divisor
        return cls(_branch(3, w), _branch(1, w), ConvSpec(fused, f2, 3, 1, 1),
                   ConvSpec(f2, 1, 1, 0, 1), input_mode)

    def to_dict(self):
        def spec(s):
            return {"type": "conv" if isinstance(s, ConvSpec) else "pool", **asdict(s)}

        return {"rgb_branch": [spec(s) for s in self.rgb_branch],
                "tir_branch": [spec(s) for s in self.tir_branch],
                "fusion": asdict(self.fusion), "regressor": asdict(self.regressor),
                "input_mode": self.input_mode}

    @classmethod
    def from_dict(cls, d):
        def spec(s):
            s = dict(s)
            kind = s.pop("type")
            return ConvSpec(**s) if kind == "conv" else PoolSpec(**s)

        return cls(tuple(spec(s) for s in d["rgb_branch"]), tuple(spec(s) for s in d["tir_branch"]),
                   ConvSpec(**d["fusion"]), ConvSpec(**d["regressor"]), d["input_mode"])


@dataclass(frozen=True)
class CounterTrainConfig:
    epochs_max: int = 200
    batch_size: int = 8
    lr: float = 1e-3
    adam_betas: tuple = (0.9, 0.999)
    early_stop_patience: int = 10
    seed: int = 0
    deterministic: bool = True
    val_split: str = "val"
    track_train_mae: bool = False
    target_train_mae: Optional[float] = None

    def __post_init__(self):
        if self.epochs_max < 1 or self.batch_size < 1 or self.lr < 0:
            raise ParameterError("epochs_max and batch_size must be positive, lr non-negative")
        if self.early_stop_patience < 1:
            raise ParameterError("early_stop_patience must be >= 1")
        object.__setattr__(self, "adam_betas", tuple(self.adam_betas))


def _make_branch(specs):
    layers = []
    for s in specs:
        if isinstance(s, ConvSpec):
            layers += [nn.Conv2d(s.in_ch, s.out_ch, s.kernel, s.stride, s.padding), nn.ReLU()]
        else:
            layers.append(nn.MaxPool2d(s.kernel, s.stride))
    return nn.Sequential(*layers)


class MMCount(nn.Module):
    def __init__(self, cfg: MMCountConfig = MMCountConfig()):
        super().__init__()
        self.cfg = cfg
        self.rgb_branch = _make_branch(cfg.rgb_branch)
        self.tir_branch = _make_branch(cfg.tir_branch)
        f, r = cfg.fusion, cfg.regressor
        self.fusion = nn.Conv2d(f.in_ch, f.out_ch, f.kernel, f.stride, f.padding)
        self.regressor = nn.Conv2d(r.in_ch, r.out_ch, r.kernel, r.stride, r.padding)

    @property
    def downsample_factor(self) -> int:
        f = 1
        for m in self.rgb_branch:
            if isinstance(m, nn.MaxPool2d):
                f *= m.stride
            elif isinstance(m, nn.Conv2d):
                f *= m.stride[0]
        return f

    def forward(self, rgb, tir):
        x = torch.cat([self.rgb_branch(rgb), self.tir_branch(tir)], dim=1)
        x = torch.relu(self.fusion(x))
        y = self.regressor(x)
        # clamp only at inference: a ReLU in the training path dies on the first Adam step
        return y if self.training else torch.relu(y)


def build_mmcount(cfg: MMCountConfig = MMCountConfig()) -> MMCount:
    return MMCount(cfg)


def layer_table(model: MMCount):
    """Introspect the instantiated layers as (type, in, out, kernel, padding, stride) rows."""

    def row(m):
        if isinstance(m, nn.Conv2d):
            return ("Conv", m.in_channels, m.out_channels, m.kernel_size[0], m.padding[0],
                    m.stride[0])
        return ("Pool", m.kernel_size, m.stride)

    keep = (nn.Conv2d, nn.MaxPool2d)
    return {
        "rgb": [row(m) for m in model.rgb_branch if isinstance(m, keep)],
        "tir": [row(m) for m in model.tir_branch if isinstance(m, keep)],
        "fusion": row(model.fusion),
        "regressor": row(model.regressor),
    }


def forward(model: MMCount, rgb, tir, input_mode: Optional[str] = None):
    """Predicted density maps (B, 1, H/f, W/f); the unused branch sees zeros in monomodal modes."""
    mode = input_mode or model.cfg.input_mode
    if mode not in INPUT_MODES:
        raise ParameterError(f"unknown input_mode {mode!r}")
    if mode in ("rgb", "rgb+tir") and rgb is None:
        raise InputError(f"input_mode {mode!r} needs an RGB batch")
    if mode in ("tir", "rgb+tir") and tir is None:
        raise InputError(f"input_mode {mode!r} needs a TIR batch")
    ref = rgb if rgb is not None else tir
    b, _, h, w = ref.shape
    f = model.downsample_factor
    if h % f or w % f:
        raise DimensionError(f"input dims {h}x{w} must be divisible by {f}")
    if rgb is not None and tir is not None and rgb.shape[-2:] != tir.shape[-2:]:
        raise DimensionError(f"rgb {tuple(rgb.shape[-2:])} and tir {tuple(tir.shape[-2:])} differ")
    dtype = next(model.parameters()).dtype
    if mode == "tir":
        rgb = torch.zeros((b, 3, h, w), dtype=dtype)
    else:
        rgb = rgb.to(dtype)
    if mode == "rgb":
        tir = torch.zeros((b, 1, h, w), dtype=dtype)
    else:
        tir = tir.to(dtype)
    return model(rgb, tir)


def mse_density_loss(predicted, target):
    """Per-sample sum of squared pixel errors, averaged over samples."""
    p = predicted if torch.is_tensor(predicted) else torch.as_tensor(np.asarray(predicted), dtype=torch.float64)
    t = target if torch.is_tensor(target) else torch.as_tensor(np.asarray(target), dtype=torch.float64)
    if p.shape != t.shape:
        raise ParameterError(f"shape mismatch {tuple(p.shape)} vs {tuple(t.shape)}")
    if p.dim() < 2:
        raise ParameterError("expected a batch of maps")
    return ((p - t) ** 2).reshape(p.shape[0], -1).sum(dim=1).mean()


class EarlyStopping:
    """Stops after ``patience`` consecutive epochs without a strict MAE improvement."""

    def __init__(self, patience: int = 10):
        self.patience = patience
        self.best = math.inf
        self.best_epoch = 0
        self.bad_epochs = 0

    def step(self, value: float, epoch: int) -> bool:
        """Record one epoch; True means this epoch set a new best."""
        if value < self.best:
            self.best, self.best_epoch, self.bad_epochs = value, epoch, 0
            return True
        self.bad_epochs += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.bad_epochs >= self.patience


def parse_tir_source(tir_source):
    """Normalise ``"real" | "none" | "generated:<ckpt>"`` (or a loaded checkpoint)."""
    if isinstance(tir_source, ModelCheckpoint):
        return "generated", tir_source, None
    if tir_source in (None, "none"):
        return "none", None, None
    if tir_source == "real":
        return "real", None, None
    if isinstance(tir_source, str) and tir_source.startswith("generated:"):
        path = tir_source.split(":", 1)[1]
        return "generated", load_checkpoint(path), path
    raise ParameterError(f"tir_source must be real, none or generated:<ckpt>, got {tir_source!r}")


@dataclass
class _Split:
    ids: list
    rgb: torch.Tensor
    tir: Optional[torch.Tensor]
    targets: torch.Tensor
    counts: np.ndarray


def load_split(samples, sigma, factor, tir_kind, gan_ckpt=None, need_tir=True):
    """Images, TIR (real, generated or absent) and density targets for ``samples``."""
    if not samples:
        raise ParameterError("empty split")
    rgb = gan.images_to_tensor([load_image(s.rgb_path, channels=3) for s in samples], 3)
    h, w = rgb.shape[-2:]
    if h % factor or w % factor:
        raise DimensionError(f"image dims {h}x{w} must be divisible by {factor}")
    tir = None
    if need_tir:
        if tir_kind == "real":
            missing = [s.id for s in samples if s.tir_path is None]
            if missing:
                raise DataError(f"tir_source=real but samples lack TIR: {missing[:5]}")
            tir = gan.images_to_tensor([load_image(s.tir_path, channels=1) for s in samples], 1)
        elif tir_kind == "generated":
            G = gan.generator_from_checkpoint(gan_ckpt)
            step = 2 ** G.cfg.levels
            if h % step or w % step:
                raise DimensionError(
                    f"GAN checkpoint needs dims divisible by {step}, images are {h}x{w}")
            tir = gan.translate_tensor(rgb, G)
        else:
            raise InputError("the input mode needs TIR images but tir_source is none")
    spec = KernelSpec(sigma)
    targets = np.stack([target_at_scale(s.points, h, w, spec, factor).values for s in samples])
    counts = np.array([len(s.points) for s in samples], dtype=np.float64)
    return _Split([s.id for s in samples], rgb, tir,
                  torch.from_numpy(targets[:, None].astype(np.float32)), counts)


def _predict(model, data: _Split, mode, batch_size=16):
    model.eval()
    outs = []
    with torch.no_grad():
        for i in range(0, len(data.ids), batch_size):
            tir = None if data.tir is None else data.tir[i:i + batch_size]
            outs.append(forward(model, data.rgb[i:i + batch_size], tir, mode))
    return torch.cat(outs)


def _split_mae(model, data, mode):
    pred = _predict(model, data, mode).double()
    est = pred.sum(dim=(1, 2, 3)).numpy()
    return mae(est, data.targets.double().sum(dim=(1, 2, 3)).numpy())


def train_counter(manifest, model_cfg: MMCountConfig = MMCountConfig(),
                  train_cfg: CounterTrainConfig = CounterTrainConfig(),
                  tir_source: Union[str, ModelCheckpoint, None] = "real"):
    """Adam on the density MSE with validation-MAE early stopping.

    Returns ``(checkpoint, history)``. The checkpoint holds the best-validation
    weights; history has one record per epoch (train_loss, val_mae, and
    train_mae when tracked).
    """
    mode = model_cfg.input_mode
    tir_kind, gan_ckpt, gan_path = parse_tir_source(tir_source)
    need_tir = mode in ("tir", "rgb+tir")
    factor = model_cfg.downsample_factor

    train_samples = manifest.split("train")
    if not train_samples:
        raise DataError("manifest has no train samples")
    train = load_split(train_samples, manifest.sigma, factor, tir_kind, gan_ckpt, need_tir)
    val_samples = manifest.split(train_cfg.val_split)
    if val_samples:
        val = load_split(val_samples, manifest.sigma, factor, tir_kind, gan_ckpt, need_tir)
    else:
        log.warning("no %r samples; early stopping monitors the train split", train_cfg.val_split)
        val = train

    gen = gan.seed_everything(train_cfg.seed, train_cfg.deterministic)
    model = build_mmcount(model_cfg)
    opt = torch.optim.Adam(model.parameters(), lr=train_cfg.lr, betas=train_cfg.adam_betas)
    stopper = EarlyStopping(train_cfg.early_stop_patience)
    best_state = copy.deepcopy(model.state_dict())
    history = []
    n = len(train.ids)
    for epoch in range(1, train_cfg.epochs_max + 1):
        model.train()
        order = torch.randperm(n, generator=gen)
        total = 0.0
        for b in range(math.ceil(n / train_cfg.batch_size)):
            idx = order[b * train_cfg.batch_size:(b + 1) * train_cfg.batch_size]
            tir = None if train.tir is None else train.tir[idx]
            pred = forward(model, train.rgb[idx], tir, mode)
            loss = mse_density_loss(pred, train.targets[idx])
            if not torch.isfinite(loss):
                raise TrainingError(f"non-finite counter loss at epoch {epoch}, batch {b} "
                                    f"(samples {[train.ids[i] for i in idx.tolist()]})")
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            total += float(loss.detach()) * len(idx)
        record = {"epoch": epoch, "train_loss": total / n, "val_mae": _split_mae(model, val, mode)}
        if train_cfg.track_train_mae or train_cfg.target_train_mae is not None:
            record["train_mae"] = record["val_mae"] if val is train else _split_mae(model, train, mode)
        history.append(record)
        log.info("count epoch %d: %s", epoch,
                 " ".join(f"{k}={v:.4f}" for k, v in record.items() if k != "epoch"))
        if stopper.step(record["val_mae"], epoch):
            best_state = copy.deepcopy(model.state_dict())
        if stopper.should_stop:
            log.info("early stop at epoch %d (best val MAE %.4f at epoch %d)", epoch,
                     stopper.best, stopper.best_epoch)
            break
        if (train_cfg.target_train_mae is not None
                and record["train_mae"] <= train_cfg.target_train_mae):
            break

    model.load_state_dict(best_state)
    ckpt = ModelCheckpoint(
        kind="mmcount",
        config={"model": model_cfg.to_dict(), "train": asdict(train_cfg)},
        tensors=state_to_numpy(model),
        seed=train_cfg.seed,
        epoch=stopper.best_epoch,
        history=history,
        meta={"sigma": manifest.sigma, "factor": factor, "tir_source": tir_kind,
              "gan_checkpoint": gan_path, "epochs_run": len(history)},
    )
    return ckpt, history


def model_from_checkpoint(ckpt: ModelCheckpoint) -> MMCount:
    if ckpt.kind != "mmcount":
        raise ParameterError(f"expected an mmcount checkpoint, got {ckpt.kind!r}")
    model = build_mmcount(MMCountConfig.from_dict(ckpt.config["model"]))
    load_numpy_state(model, ckpt.tensors)
    model.eval()
    return model


def predict_maps(model, rgb, tir=None, input_mode=None) -> list[Grid2D]:
    out = _predict_tensors(model, rgb, tir, input_mode)
    return [Grid2D(m[0].astype(np.float64)) for m in out]


def _predict_tensors(model, rgb, tir, input_mode):
    model.eval()
    with torch.no_grad():
        return forward(model, rgb, tir, input_mode).numpy()


def evaluate(checkpoint, manifest, split="test", levels=(0, 1, 2), tir_source=None,
             model_name="MMCount", return_maps=False):
    """MetricsReport for ``split``; ground truth is built at the model's output resolution.

    ``tir_source`` defaults to the manifest's TIR files when present, otherwise
    to the GAN checkpoint recorded at training time.
    """
    model = model_from_checkpoint(checkpoint)
    mode = model.cfg.input_mode
    samples = manifest.split(split)
    if not samples:
        raise ParameterError(f"split {split!r} is empty")
    need_tir = mode in ("tir", "rgb+tir")
    if tir_source is None:
        if not need_tir or all(s.tir_path is not None for s in samples):
            tir_source = "real" if need_tir else "none"
        elif checkpoint.meta.get("gan_checkpoint"):
            tir_source = "generated:" + checkpoint.meta["gan_checkpoint"]
        else:
            raise DataError("manifest lacks TIR images and the checkpoint names no GAN")
    tir_kind, gan_ckpt, _ = parse_tir_source(tir_source)
    data = load_split(samples, manifest.sigma, model.downsample_factor, tir_kind, gan_ckpt,
                      need_tir)
    pred = _predict(model, data, mode).double().numpy()[:, 0]
    gt = data.targets.double().numpy()[:, 0]
    report = MetricsReport.from_maps(split, data.ids, list(pred), list(gt), levels,
                                     model=model_name, input_mode=mode)
    if return_maps:
        return report, pred, gt
    return report


def load_counter(path):
    return model_from_checkpoint(load_checkpoint(Path(path)))
