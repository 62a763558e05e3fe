"""Command-line entry point: synth | train-gan | translate | train-count | eval | report.

Exit codes: 0 ok, 2 usage/config, 3 I/O, 4 data validation, 5 training failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import shutil
import sys
from pathlib import Path

from .config import RunConfig
from .errors import ConfigError, MMCountError, ParameterError

log = logging.getLogger("mmcount")

# flags default to SUPPRESS so only flags actually given override the config file
_S = argparse.SUPPRESS


def _common(p):
    p.add_argument("--config", help="JSON run config; command-line flags override its values")
    p.add_argument("--seed", type=int, default=_S, help="random seed (default: config, then $QMM_SEED, then 0)")
    p.add_argument("--deterministic", action=argparse.BooleanOptionalAction, default=_S,
                   help="enable deterministic torch algorithms (default on)")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mmcount", description="Crowd counting from RGB and real or generated thermal images.",
        epilog="Exit codes: 0 ok, 2 usage/config, 3 I/O, 4 data validation, 5 training failure.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic paired RGB/TIR dataset")
    _common(p)
    p.add_argument("--out-dir", default=_S, help="output directory for PNGs and manifest")
    p.add_argument("--n-images", type=int, default=_S, help="number of scenes")
    p.add_argument("--height", type=int, default=_S, help="image height in pixels")
    p.add_argument("--width", type=int, default=_S, help="image width in pixels")
    p.add_argument("--heads-min", type=int, default=_S, help="minimum heads per scene")
    p.add_argument("--heads-max", type=int, default=_S, help="maximum heads per scene")
    p.add_argument("--head-radius", type=int, default=_S, help="head disc radius in pixels")
    p.add_argument("--dark-fraction", type=float, default=_S,
                   help="probability a head is invisible in RGB (always visible in TIR)")
    p.add_argument("--sigma", type=float, default=_S, help="Gaussian sigma written to dataset.json")
    p.add_argument("--split-ratios", type=float, nargs=3, default=_S, metavar=("TRAIN", "VAL", "TEST"),
                   help="split fractions, must sum to 1")
    p.add_argument("--force", action="store_true", help="overwrite a non-empty output directory")

    p = sub.add_parser("train-gan", help="train the RGB->TIR pix2pix model")
    _common(p)
    p.add_argument("--manifest", default=_S, help="paired manifest.jsonl")
    p.add_argument("--out", default=_S, help="checkpoint path to write")
    p.add_argument("--epochs", type=int, default=_S, help="training epochs")
    p.add_argument("--batch-size", type=int, default=_S, help="batch size")
    p.add_argument("--lr", type=float, default=_S, help="Adam learning rate")
    p.add_argument("--lambda-l1", type=float, default=_S, help="weight of the L1 term")
    p.add_argument("--levels", type=int, default=_S, help="generator down/up-sampling stages")
    p.add_argument("--base-filters", type=int, default=_S, help="generator base filters")
    p.add_argument("--skip-connections", action=argparse.BooleanOptionalAction, default=_S,
                   help="use encoder-decoder skip connections")
    p.add_argument("--disc-layers", type=int, default=_S, help="discriminator stride-2 blocks")
    p.add_argument("--disc-base-filters", type=int, default=_S, help="discriminator base filters")
    p.add_argument("--force", action="store_true", help="overwrite an existing checkpoint")

    p = sub.add_parser("translate", help="generate TIR images for a manifest with a trained GAN")
    _common(p)
    p.add_argument("--manifest", default=_S, help="input manifest.jsonl (TIR optional)")
    p.add_argument("--checkpoint", default=_S, help="pix2pix checkpoint")
    p.add_argument("--out-dir", default=_S, help="directory for generated TIR PNGs and new manifest")
    p.add_argument("--force", action="store_true", help="overwrite a non-empty output directory")

    p = sub.add_parser("train-count", help="train MMCount")
    _common(p)
    p.add_argument("--manifest", default=_S, help="manifest.jsonl")
    p.add_argument("--out", default=_S, help="checkpoint path to write")
    p.add_argument("--input-mode", choices=("rgb", "tir", "rgb+tir"), default=_S, help="branches fed")
    p.add_argument("--tir-source", default=_S, help="real | none | generated:<gan checkpoint>")
    p.add_argument("--epochs-max", type=int, default=_S, help="maximum epochs")
    p.add_argument("--batch-size", type=int, default=_S, help="batch size")
    p.add_argument("--lr", type=float, default=_S, help="Adam learning rate")
    p.add_argument("--early-stop-patience", type=int, default=_S,
                   help="epochs without validation-MAE improvement before stopping")
    p.add_argument("--val-split", default=_S, help="split monitored for early stopping")
    p.add_argument("--force", action="store_true", help="overwrite an existing checkpoint")

    p = sub.add_parser("eval", help="evaluate a counter checkpoint (MAE, GAME)")
    _common(p)
    p.add_argument("--manifest", default=_S, help="manifest.jsonl")
    p.add_argument("--checkpoint", default=_S, help="mmcount checkpoint")
    p.add_argument("--out-dir", default=_S, help="directory for metrics.json / metrics.csv")
    p.add_argument("--split", default=_S, help="split to evaluate")
    p.add_argument("--levels", type=int, nargs="+", default=_S, help="GAME levels")
    p.add_argument("--tir-source", default=_S, help="override TIR source (real | generated:<ckpt>)")
    p.add_argument("--model-name", default=_S, help="model label in the report")
    p.add_argument("--n-maps", type=int, default=_S, help="density maps saved for plotting")
    p.add_argument("--force", action="store_true", help="overwrite existing outputs")

    p = sub.add_parser("report", help="render comparison tables and plots from metrics files")
    _common(p)
    p.add_argument("metrics", nargs="*", help="metrics.json files")
    p.add_argument("--out-dir", default=_S, help="report output directory")
    p.add_argument("--force", action="store_true", help="overwrite existing outputs")
    return parser


_SECTION_OF = {"synth": "synth", "train-gan": "train_gan", "translate": "translate",
               "train-count": "train_count", "eval": "eval", "report": "report"}
_GLOBAL = {"seed", "deterministic"}
_NON_CONFIG = {"command", "config", "verbose", "force", "metrics"}


def merge_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config)
    section = getattr(cfg, _SECTION_OF[args.command])
    for key, value in vars(args).items():
        if key in _NON_CONFIG:
            continue
        if key in _GLOBAL:
            setattr(cfg, key, value)
        else:
            setattr(section, key, value)
    return cfg


def _require(value, flag):
    if value in (None, ""):
        raise ConfigError(f"{flag} is required (flag or config file)")
    return value


def _prepare_file(path, force):
    path = Path(path)
    if path.exists() and not force:
        raise FileExistsError(f"{path} exists (use --force)")
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def cmd_synth(cfg: RunConfig, force=False) -> int:
    from .data import SynthParams, make_synth_dataset

    s = cfg.synth
    out_dir = _require(s.out_dir, "--out-dir")
    if not force and Path(out_dir).exists() and any(Path(out_dir).iterdir()):
        raise FileExistsError(f"output directory {out_dir} is not empty (use --force)")
    params = SynthParams(n_images=s.n_images, height=s.height, width=s.width,
                         heads_min=s.heads_min, heads_max=s.heads_max,
                         head_radius=s.head_radius, dark_fraction=s.dark_fraction, seed=cfg.seed)
    manifest = make_synth_dataset(params, out_dir, tuple(s.split_ratios), sigma=s.sigma,
                                  overwrite=force)
    counts = {name: len(manifest.split(name)) for name in ("train", "val", "test")}
    print(json.dumps({"manifest": str(Path(out_dir) / "manifest.jsonl"), **counts}))
    return 0


def cmd_train_gan(cfg: RunConfig, force=False) -> int:
    from .checkpoint import save_checkpoint
    from .data import load_manifest
    from .gan import DiscriminatorConfig, GanTrainConfig, GeneratorConfig, train_pix2pix

    s = cfg.train_gan
    manifest = load_manifest(_require(s.manifest, "--manifest"))
    out = _prepare_file(_require(s.out, "--out"), force)
    tcfg = GanTrainConfig(
        epochs=s.epochs, batch_size=s.batch_size, lr=s.lr, lambda_l1=s.lambda_l1, seed=cfg.seed,
        deterministic=cfg.deterministic,
        generator=GeneratorConfig(s.levels, s.base_filters, s.skip_connections),
        discriminator=DiscriminatorConfig(s.disc_layers, s.disc_base_filters))
    ckpt, history = train_pix2pix(manifest, tcfg)
    save_checkpoint(ckpt, out)
    print(json.dumps({"checkpoint": str(out), "epochs": len(history), "final": history[-1]}))
    return 0


def cmd_translate(cfg: RunConfig, force=False) -> int:
    from .checkpoint import load_checkpoint
    from .core import SampleRecord, load_image, save_image
    from .data import DatasetManifest, load_manifest, write_manifest
    from .gan import generator_from_checkpoint, translate

    s = cfg.translate
    manifest = load_manifest(_require(s.manifest, "--manifest"))
    G = generator_from_checkpoint(load_checkpoint(_require(s.checkpoint, "--checkpoint")))
    out_dir = Path(_require(s.out_dir, "--out-dir"))
    if out_dir.exists() and any(out_dir.iterdir()):
        if not force:
            raise FileExistsError(f"output directory {out_dir} is not empty (use --force)")
        shutil.rmtree(out_dir)
    (out_dir / "tir").mkdir(parents=True)
    records = []
    for rec in manifest.samples:
        tir = translate([load_image(rec.rgb_path, channels=3)], G)[0]
        tir_path = out_dir / "tir" / f"{rec.id}.png"
        save_image(tir, tir_path)
        records.append(SampleRecord(rec.id, rec.rgb_path, tir_path, rec.points, rec.split))
    new = DatasetManifest(root=out_dir, samples=tuple(records), sigma=manifest.sigma)
    path = write_manifest(new)
    print(json.dumps({"manifest": str(path), "translated": len(records)}))
    return 0


def cmd_train_count(cfg: RunConfig, force=False) -> int:
    from .checkpoint import save_checkpoint
    from .counter import CounterTrainConfig, MMCountConfig, train_counter
    from .data import load_manifest

    s = cfg.train_count
    manifest = load_manifest(_require(s.manifest, "--manifest"))
    out = _prepare_file(_require(s.out, "--out"), force)
    model_cfg = MMCountConfig(input_mode=s.input_mode)
    tcfg = CounterTrainConfig(epochs_max=s.epochs_max, batch_size=s.batch_size, lr=s.lr,
                              early_stop_patience=s.early_stop_patience, seed=cfg.seed,
                              deterministic=cfg.deterministic, val_split=s.val_split)
    ckpt, history = train_counter(manifest, model_cfg, tcfg, s.tir_source)
    save_checkpoint(ckpt, out)
    print(json.dumps({"checkpoint": str(out), "epochs": len(history),
                      "best_epoch": ckpt.epoch, "best_val_mae": min(h["val_mae"] for h in history)}))
    return 0


def cmd_eval(cfg: RunConfig, force=False) -> int:
    from .checkpoint import load_checkpoint
    from .core import write_grid
    from .counter import evaluate
    from .data import load_manifest
    from .metrics import reports_to_csv

    s = cfg.eval
    manifest = load_manifest(_require(s.manifest, "--manifest"))
    ckpt_path = _require(s.checkpoint, "--checkpoint")
    ckpt = load_checkpoint(ckpt_path)
    out_dir = Path(_require(s.out_dir, "--out-dir"))
    if (out_dir / "metrics.json").exists() and not force:
        raise FileExistsError(f"{out_dir / 'metrics.json'} exists (use --force)")
    (out_dir / "maps").mkdir(parents=True, exist_ok=True)
    report, pred, gt = evaluate(ckpt, manifest, s.split, s.levels, s.tir_source,
                                model_name=s.model_name, return_maps=True)
    maps = []
    for i, (sid, _, _) in enumerate(report.per_image[: s.n_maps]):
        write_grid(pred[i], out_dir / "maps" / f"{sid}_pred.fgrd")
        write_grid(gt[i], out_dir / "maps" / f"{sid}_gt.fgrd")
        maps.append({"id": sid, "pred": f"maps/{sid}_pred.fgrd", "gt": f"maps/{sid}_gt.fgrd"})
    report.extra = {"checkpoint": str(ckpt_path), "history": ckpt.history, "maps": maps}
    report.to_json(out_dir / "metrics.json")
    (out_dir / "metrics.csv").write_text(reports_to_csv([report], sorted(report.game)))
    print(json.dumps({"metrics": str(out_dir / "metrics.json"), "mae": report.mae,
                      "game": {str(k): v for k, v in report.game.items()}}))
    return 0


def cmd_report(cfg: RunConfig, metrics_files, force=False) -> int:
    from .errors import FormatError
    from .metrics import MetricsReport
    from .report import write_report

    if not metrics_files:
        raise ConfigError("report needs at least one metrics JSON file")
    for path in metrics_files:
        try:
            MetricsReport.from_json(path)
        except (FormatError, OSError) as exc:
            # a bad input list is a usage error for this command
            raise ConfigError(f"malformed metrics file {path}: {exc}") from exc
    out_dir = Path(_require(cfg.report.out_dir, "--out-dir"))
    if (out_dir / "report.md").exists() and not force:
        raise FileExistsError(f"{out_dir / 'report.md'} exists (use --force)")
    path = write_report(metrics_files, out_dir)
    print(json.dumps({"report": str(path)}))
    return 0


def _fail(exc, code):
    kind = getattr(exc, "kind", type(exc).__name__)
    msg = " ".join(str(exc).split())
    print(f"mmcount: error: kind={kind} exit={code}: {msg}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(levelname)s %(name)s %(message)s", stream=sys.stderr)
    try:
        cfg = merge_config(args)
        handlers = {"synth": cmd_synth, "train-gan": cmd_train_gan, "translate": cmd_translate,
                    "train-count": cmd_train_count, "eval": cmd_eval}
        if args.command == "report":
            return cmd_report(cfg, args.metrics, args.force)
        return handlers[args.command](cfg, args.force)
    except (ConfigError, ParameterError) as exc:
        return _fail(exc, 2)
    except MMCountError as exc:
        return _fail(exc, exc.exit_code)
    except (FileExistsError, FileNotFoundError, OSError) as exc:
        return _fail(exc, 3)
    except (TypeError, ValueError) as exc:
        # config values of the wrong type surface here
        return _fail(exc, 2)


if __name__ == "__main__":
    sys.exit(main())
