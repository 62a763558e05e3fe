"""Pix2Pix-style RGB -> TIR translation: U-shaped generator, patch discriminator, losses, training."""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .checkpoint import ModelCheckpoint, load_numpy_state, state_to_numpy
from .core import ImageBuffer, load_image
from .errors import DataError, DimensionError, ParameterError, TrainingError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class GeneratorConfig:
    levels: int = 4
    base_filters: int = 32
    skip_connections: bool = True

    def __post_init__(self):
        if self.levels < 1 or self.base_filters < 1:
            raise ParameterError("generator levels and base_filters must be >= 1")

    def filters(self, k: int) -> int:
        return self.base_filters * 2 ** min(k, 3)


@dataclass(frozen=True)
class DiscriminatorConfig:
    layers: int = 3
    base_filters: int = 32

    def __post_init__(self):
        if self.layers < 1 or self.base_filters < 1:
            raise ParameterError("discriminator layers and base_filters must be >= 1")


@dataclass(frozen=True)
class GanTrainConfig:
    epochs: int = 50
    batch_size: int = 4
    lr: float = 1e-3
    adam_betas: tuple = (0.5, 0.999)
    lambda_l1: float = 100.0
    seed: int = 0
    deterministic: bool = True
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    discriminator: DiscriminatorConfig = field(default_factory=DiscriminatorConfig)

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or not self.lr > 0:
            raise ParameterError("epochs, batch_size and lr must be positive")
        if self.lambda_l1 < 0:
            raise ParameterError("lambda_l1 must be >= 0")
        object.__setattr__(self, "adam_betas", tuple(self.adam_betas))


class UNetGenerator(nn.Module):
    """Encoder-decoder with stride-2 4x4 convs; decoder level k concatenates encoder level k."""

    def __init__(self, cfg: GeneratorConfig):
        super().__init__()
        self.cfg = cfg
        L = cfg.levels
        self.down = nn.ModuleList()
        c_in = 3
        for k in range(L):
            self.down.append(nn.Conv2d(c_in, cfg.filters(k), 4, 2, 1))
            c_in = cfg.filters(k)
        self.up = nn.ModuleList()
        for k in range(L):
            out_ch = 1 if k == 0 else cfg.filters(k - 1)
            if k == L - 1 or not cfg.skip_connections:
                in_ch = cfg.filters(k)
            else:
                in_ch = 2 * cfg.filters(k)
            self.up.append(nn.ConvTranspose2d(in_ch, out_ch, 4, 2, 1))

    def forward(self, x):
        step = 2 ** self.cfg.levels
        if x.shape[-2] % step or x.shape[-1] % step:
            raise DimensionError(
                f"generator with {self.cfg.levels} levels needs dims divisible by {step}, "
                f"got {tuple(x.shape[-2:])}")
        feats = []
        h = x
        for conv in self.down:
            h = F.leaky_relu(conv(h), 0.2)
            feats.append(h)
        L = self.cfg.levels
        for k in range(L - 1, -1, -1):
            if k < L - 1 and self.cfg.skip_connections:
                h = torch.cat([h, feats[k]], dim=1)
            h = self.up[k](h)
            if k > 0:
                h = F.relu(h)
        return (torch.tanh(h) + 1.0) * 0.5


class PatchDiscriminator(nn.Module):
    """Judges (RGB, TIR) pairs; emits one logit per receptive-field patch."""

    def __init__(self, cfg: DiscriminatorConfig):
        super().__init__()
        self.cfg = cfg
        blocks = []
        c_in = 4
        for i in range(cfg.layers):
            c_out = cfg.base_filters * 2 ** min(i, 3)
            blocks += [nn.Conv2d(c_in, c_out, 4, 2, 1), nn.LeakyReLU(0.2)]
            c_in = c_out
        self.features = nn.Sequential(*blocks)
        self.head = nn.Conv2d(c_in, 1, 3, 1, 1)

    def forward(self, rgb, tir):
        step = 2 ** self.cfg.layers
        if rgb.shape[-2] % step or rgb.shape[-1] % step:
            raise DimensionError(
                f"discriminator with {self.cfg.layers} layers needs dims divisible by {step}")
        return self.head(self.features(torch.cat([rgb, tir], dim=1)))


def build_generator(cfg: GeneratorConfig = GeneratorConfig()) -> UNetGenerator:
    return UNetGenerator(cfg)


def build_discriminator(cfg: DiscriminatorConfig = DiscriminatorConfig()) -> PatchDiscriminator:
    return PatchDiscriminator(cfg)


def _t(x):
    return x if torch.is_tensor(x) else torch.as_tensor(np.asarray(x), dtype=torch.float64)


def l1_loss(generated, target):
    generated, target = _t(generated), _t(target)
    if generated.shape != target.shape:
        raise ParameterError(f"shape mismatch {tuple(generated.shape)} vs {tuple(target.shape)}")
    return (generated - target).abs().mean()


def discriminator_loss(d_real_logits, d_fake_logits):
    """Mean patch BCE with real pairs labelled 1 and generated pairs 0, halved."""
    real, fake = _t(d_real_logits), _t(d_fake_logits)
    loss_real = F.binary_cross_entropy_with_logits(real, torch.ones_like(real))
    loss_fake = F.binary_cross_entropy_with_logits(fake, torch.zeros_like(fake))
    return (loss_real + loss_fake) * 0.5


def adversarial_loss(d_fake_logits):
    fake = _t(d_fake_logits)
    return F.binary_cross_entropy_with_logits(fake, torch.ones_like(fake))


def generator_loss(d_fake_logits, generated, target, lambda_l1: float = 100.0):
    return adversarial_loss(d_fake_logits) + lambda_l1 * l1_loss(generated, target)


def seed_everything(seed: int, deterministic: bool = True) -> torch.Generator:
    torch.manual_seed(seed)
    if deterministic:
        torch.use_deterministic_algorithms(True)
    gen = torch.Generator()
    gen.manual_seed(seed)
    return gen


def images_to_tensor(images, channels: int) -> torch.Tensor:
    arrs = []
    for im in images:
        if im.channels != channels:
            raise DimensionError(f"expected {channels}-channel images, got {im.channels}")
        arrs.append(im.to_chw())
    return torch.from_numpy(np.stack(arrs))


def load_pairs(samples):
    """(rgb, tir) float32 tensors for samples that all carry a TIR image."""
    for s in samples:
        if s.tir_path is None:
            raise DataError(f"sample {s.id} has no TIR image; pix2pix needs paired data")
    rgb = images_to_tensor([load_image(s.rgb_path, channels=3) for s in samples], 3)
    tir = images_to_tensor([load_image(s.tir_path, channels=1) for s in samples], 1)
    return rgb, tir


def discriminator_step(G, D, d_opt, rgb, tir):
    with torch.no_grad():
        fake = G(rgb)
    d_opt.zero_grad(set_to_none=True)
    loss = discriminator_loss(D(rgb, tir), D(rgb, fake))
    loss.backward()
    d_opt.step()
    return loss.detach()


def generator_step(G, D, g_opt, rgb, tir, lambda_l1):
    for p in D.parameters():
        p.requires_grad_(False)
    try:
        g_opt.zero_grad(set_to_none=True)
        fake = G(rgb)
        logits = D(rgb, fake)
        adv = adversarial_loss(logits)
        l1 = l1_loss(fake, tir)
        loss = adv + lambda_l1 * l1
        loss.backward()
        g_opt.step()
    finally:
        for p in D.parameters():
            p.requires_grad_(True)
    return adv.detach(), l1.detach()


def train_pix2pix(manifest, cfg: GanTrainConfig = GanTrainConfig(), split: str = "train"):
    """Alternating D/G training on the paired samples of ``split``.

    Returns ``(checkpoint, history)``; history has one dict per epoch with the
    mean generator L1, generator adversarial and discriminator losses.
    """
    samples = manifest.split(split)
    if not samples:
        raise DataError(f"split {split!r} has no samples")
    rgb_all, tir_all = load_pairs(samples)
    step = 2 ** max(cfg.generator.levels, cfg.discriminator.layers)
    h, w = rgb_all.shape[-2:]
    if h % step or w % step:
        raise DimensionError(f"image dims {h}x{w} must be divisible by {step}")

    gen = seed_everything(cfg.seed, cfg.deterministic)
    G = build_generator(cfg.generator)
    D = build_discriminator(cfg.discriminator)
    g_opt = torch.optim.Adam(G.parameters(), lr=cfg.lr, betas=cfg.adam_betas)
    d_opt = torch.optim.Adam(D.parameters(), lr=cfg.lr, betas=cfg.adam_betas)
    ids = [s.id for s in samples]
    n = len(samples)
    history = []
    for epoch in range(1, cfg.epochs + 1):
        G.train()
        D.train()
        order = torch.randperm(n, generator=gen)
        sums = {"l1": 0.0, "adv": 0.0, "d_loss": 0.0}
        for b in range(math.ceil(n / cfg.batch_size)):
            idx = order[b * cfg.batch_size:(b + 1) * cfg.batch_size]
            rgb, tir = rgb_all[idx], tir_all[idx]
            d_loss = discriminator_step(G, D, d_opt, rgb, tir)
            adv, l1 = generator_step(G, D, g_opt, rgb, tir, cfg.lambda_l1)
            if not all(torch.isfinite(v) for v in (d_loss, adv, l1)):
                raise TrainingError(
                    f"non-finite GAN loss at epoch {epoch}, batch {b} "
                    f"(samples {[ids[i] for i in idx.tolist()]})")
            k = len(idx)
            sums["l1"] += float(l1) * k
            sums["adv"] += float(adv) * k
            sums["d_loss"] += float(d_loss) * k
        record = {"epoch": epoch, **{key: v / n for key, v in sums.items()}}
        history.append(record)
        log.info("gan epoch %d: l1=%.4f adv=%.4f d=%.4f", epoch, record["l1"],
                 record["adv"], record["d_loss"])

    tensors = {**state_to_numpy(G, "generator"), **state_to_numpy(D, "discriminator")}
    ckpt = ModelCheckpoint(
        kind="pix2pix",
        config={"generator": asdict(cfg.generator), "discriminator": asdict(cfg.discriminator),
                "train": {k: v for k, v in asdict(cfg).items()
                          if k not in ("generator", "discriminator")}},
        tensors=tensors,
        seed=cfg.seed,
        epoch=cfg.epochs,
        history=history[-10:],
    )
    return ckpt, history


def generator_from_checkpoint(ckpt: ModelCheckpoint) -> UNetGenerator:
    if ckpt.kind != "pix2pix":
        raise ParameterError(f"expected a pix2pix checkpoint, got {ckpt.kind!r}")
    G = build_generator(GeneratorConfig(**ckpt.config["generator"]))
    load_numpy_state(G, ckpt.subset("generator"))
    G.eval()
    return G


def translate_tensor(rgb: torch.Tensor, G: UNetGenerator, batch_size: int = 8) -> torch.Tensor:
    G.eval()
    outs = []
    with torch.no_grad():
        for i in range(0, rgb.shape[0], batch_size):
            outs.append(G(rgb[i:i + batch_size].float()))
    return torch.cat(outs).clamp_(0.0, 1.0)


def translate(rgb_images, checkpoint) -> list[ImageBuffer]:
    """Generate 1-channel TIR images in [0, 1] for a batch of RGB images."""
    G = checkpoint if isinstance(checkpoint, UNetGenerator) else generator_from_checkpoint(checkpoint)
    rgb = images_to_tensor(rgb_images, 3)
    out = translate_tensor(rgb, G).numpy()
    return [ImageBuffer(o.transpose(1, 2, 0)) for o in out]
