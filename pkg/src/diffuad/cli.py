"""Command-line entry point: phantoms / pretrain / train / reconstruct / evaluate / sweep / report."""

import argparse
import os
import sys
import time

from .config import ConfigError, ExperimentConfig


def _load_config(args, extra=None) -> ExperimentConfig:
    overrides = {}
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, _, val = item.partition("=")
        overrides[key.strip()] = val.strip()
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = str(args.seed)
    if getattr(args, "preset", None):
        overrides["model.preset"] = args.preset
    overrides.update(extra or {})
    if args.config:
        return ExperimentConfig.from_file(args.config, overrides)
    return ExperimentConfig(overrides)


def _add_common(p, config=True):
    if config:
        p.add_argument("--config", help="flat key=value config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a single config key (repeatable)")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out", required=True, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="diffuad",
        description="Context-conditioned diffusion models for unsupervised anomaly detection "
                    "on volumetric images, with the full evaluation pipeline.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantoms", help="generate a synthetic phantom dataset")
    _add_common(p)

    p = sub.add_parser("pretrain", help="masked-autoencoding pre-training of the context encoder")
    _add_common(p)
    p.add_argument("--data", required=True, help="dataset directory")

    p = sub.add_parser("train", help="train a denoising model on healthy volumes")
    _add_common(p)
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--preset", choices=("ddpm", "cddpm"), help="model preset")
    p.add_argument("--encoder-init", choices=("scratch", "pretrained"),
                   help="context encoder initialization")
    p.add_argument("--encoder-ckpt", help="pre-trained encoder checkpoint")

    p = sub.add_parser("reconstruct", help="reconstruct dataset volumes with a trained model")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--splits", default="unhealthy_val,unhealthy_test",
                   help="comma-separated split names")
    p.add_argument("--keep-levels", action="store_true",
                   help="also write per-noise-level reconstructions")

    p = sub.add_parser("evaluate", help="threshold search + metrics over reconstructions")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--recon", required=True, help="reconstruction directory")

    p = sub.add_parser("sweep", help="DICE vs test-time noise level, with the ensemble row")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--t-values", default="250,500,750")

    p = sub.add_parser("report", help="aggregate completed runs into comparison tables")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("runs", nargs="+", help="completed run directories")
    return parser


def run(args) -> int:
    if args.command == "phantoms":
        from .dataset import generate_dataset
        cfg = _load_config(args)
        os.makedirs(args.out, exist_ok=True)
        split = generate_dataset(cfg, args.out)
        cfg.echo(os.path.join(args.out, "config.txt"))
        print(f"wrote {len(split.all_ids())} volumes to {args.out}")
        return 0

    if args.command == "pretrain":
        from .dataset import Dataset
        from .training import run_pretraining
        cfg = _load_config(args)
        dataset = Dataset(args.data)
        ckpt, losses = run_pretraining(cfg, dataset.volumes("healthy_train"), args.out)
        cfg.echo(os.path.join(args.out, "config.txt"))
        print(f"encoder checkpoint {ckpt} (final loss {losses[-1]:.4f})")
        return 0

    if args.command == "train":
        from .dataset import Dataset
        from .experiment import write_kv
        from .training import train_model
        extra = {}
        if args.encoder_init:
            extra["encoder.init"] = args.encoder_init
        if args.encoder_ckpt:
            extra["encoder.checkpoint"] = args.encoder_ckpt
        cfg = _load_config(args, extra)
        if cfg.get("encoder.init") == "pretrained" and not cfg.get("encoder.checkpoint"):
            raise ConfigError("encoder.init=pretrained requires encoder.checkpoint")
        dataset = Dataset(args.data)
        t0 = time.time()
        result = train_model(
            cfg,
            dataset.volumes("healthy_train"),
            dataset.volumes("healthy_val"),
            args.out,
            preset=cfg.get("model.preset"),
            encoder_ckpt=cfg.get("encoder.checkpoint") or None,
        )
        cfg.echo(os.path.join(args.out, "config.txt"))
        write_kv(os.path.join(args.out, "manifest.txt"), {
            "config_hash": cfg.config_hash(),
            "seed": cfg.seed,
            "data_dir": args.data,
            "checkpoint": result.checkpoint_path,
            "best_epoch": result.best_epoch,
            "best_val_loss": "%.12g" % result.best_val_loss,
            "wall_seconds": "%.3f" % (time.time() - t0),
        })
        print(f"checkpoint {result.checkpoint_path} "
              f"(best epoch {result.best_epoch}, val loss {result.best_val_loss:.5f})")
        return 0

    if args.command == "reconstruct":
        from .experiment import cmd_reconstruct
        cfg = _load_config(args)
        splits = tuple(s for s in args.splits.split(",") if s)
        n = cmd_reconstruct(cfg, args.checkpoint, args.data, args.out,
                            splits=splits, keep_levels=args.keep_levels)
        print(f"reconstructed {n} volumes into {args.out}")
        return 0

    if args.command == "evaluate":
        from .experiment import cmd_evaluate
        cfg = _load_config(args)
        rows, summary = cmd_evaluate(cfg, args.data, args.recon, args.out)
        print(f"evaluated {len(rows)} volumes; "
              f"test DICE {summary.get('test_dice_mean', 'n/a')} "
              f"(threshold {summary.get('threshold')})")
        return 0

    if args.command == "sweep":
        from .experiment import sweep_noise_levels
        cfg = _load_config(args)
        t_values = [int(t) for t in args.t_values.split(",") if t]
        rows = sweep_noise_levels(cfg, args.checkpoint, args.data, args.out, t_values=t_values)
        for row in rows:
            print(f"t={row['setting']}: test DICE {row['test_mean_dice']:.4f}")
        return 0

    if args.command == "report":
        from .report import cmd_report
        table, pvals = cmd_report(args.runs, args.out, seed=args.seed or 0)
        print(f"report with {len(table)} aggregate rows "
              f"and {len(pvals)} significance tests in {args.out}")
        return 0

    raise RuntimeError(f"unhandled command {args.command}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return run(args)
    except Exception as exc:  # one-line diagnostic, nonzero exit
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
