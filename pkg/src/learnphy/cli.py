"""Command-line entry point: ``learnphy <verb> [options]``.

Exit codes: 0 success, 1 configuration error, 2 training divergence,
3 I/O or checkpoint error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .autodiff import ConfigurationError, InputError
from .config import ExperimentConfig, preset_names
from .graphs import CheckpointError
from .protocol import DivergenceError, ProtocolError

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_IO = 0, 1, 2, 3

log = logging.getLogger("learnphy")

VERB_KIND = {
    "train": "convergence",
    "cer-sweep": "cer_sweep",
    "jammer-retrain": "jammer_retrain",
}


def _run_options() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", required=True, help="TOML file, or the name of a bundled preset")
    p.add_argument("--seed", type=int, help="run a single seed instead of link.seeds")
    p.add_argument("--out", help="run directory (default: output.directory)")
    p.add_argument("--override", action="append", default=[], metavar="SECTION.KEY=VALUE", help="repeatable")
    p.add_argument("--max-epochs", type=int, help="shorthand for --override training.max_epochs=N")
    p.add_argument("--deterministic", action="store_true", help="lock-step: one process, fixed job order")
    p.add_argument("--workers", type=int, default=1, help="parallel seeds or sweep points")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="learnphy", description="Self-taught two-node PHY link simulator.")
    sub = parser.add_subparsers(dest="verb", required=True)
    run = _run_options()
    train = sub.add_parser("train", parents=[run], help="train links and record convergence")
    train.add_argument("--resume", action="store_true", help="continue from checkpoints in the run directory")
    sub.add_parser("cer-sweep", parents=[run], help="CER over a test-SNR grid after training")
    sub.add_parser("train-snr-study", parents=[run], help="convergence and CER across train SNRs")
    sub.add_parser("jammer-retrain", parents=[run], help="switch on a tone jammer and retrain")
    plot = sub.add_parser("plot", help="render SVG figures for a run directory")
    plot.add_argument("run_dir")
    ver = sub.add_parser("verify-checkpoint", help="bitwise save/load round trip of a checkpoint")
    ver.add_argument("checkpoint")
    sub.add_parser("presets", help="list bundled media presets")
    return parser


def load_config(args: argparse.Namespace) -> ExperimentConfig:
    src = args.config
    if Path(src).is_file():
        cfg = ExperimentConfig.load(src)
    elif src in preset_names():
        cfg = ExperimentConfig.preset(src)
    else:
        raise ConfigurationError(f"config {src!r} is neither a file nor a preset ({', '.join(preset_names())})")
    overrides = list(args.override)
    if args.max_epochs is not None:
        overrides.append(f"training.max_epochs={args.max_epochs}")
    if args.seed is not None:
        overrides.append(f"link.seeds=[{args.seed}]")
    if args.out is not None:
        overrides.append(f"output.directory={json.dumps(args.out)}")
    kind = VERB_KIND.get(args.verb)
    if kind is None and cfg.experiment["kind"] not in ("train_snr_convergence", "train_snr_sweep"):
        kind = "train_snr_sweep"
    if kind is not None and cfg.experiment["kind"] != kind:
        overrides.append(f'experiment.kind="{kind}"')
    return cfg.with_overrides(overrides) if overrides else cfg


def run(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    from . import experiments as ex
    from .plotting import render_run

    try:
        if args.verb == "presets":
            print("\n".join(preset_names()))
            return EXIT_OK
        if args.verb == "plot":
            print(json.dumps({"written": render_run(args.run_dir)}, indent=2))
            return EXIT_OK
        if args.verb == "verify-checkpoint":
            report = ex.cmd_checkpoint_roundtrip(args.checkpoint)
            print(json.dumps(report, indent=2))
            return EXIT_OK if report["bitwise_equal"] else EXIT_IO

        cfg = load_config(args)
        workers = 1 if args.deterministic else max(1, args.workers)
        if args.verb == "train":
            art = ex.cmd_train(cfg, workers=workers, resume=args.resume)
        elif args.verb == "cer-sweep":
            art = ex.cmd_cer_sweep(cfg, workers=workers)
        elif args.verb == "train-snr-study":
            art = ex.cmd_train_snr_study(cfg, workers=workers)
        else:
            art = ex.cmd_jammer_retrain(cfg, workers=workers)
        print(json.dumps({"run_dir": str(art.directory), "results": art.results}, indent=2, default=str))
        return EXIT_OK
    except (ConfigurationError, InputError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (CheckpointError, ProtocolError, OSError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
