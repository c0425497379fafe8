import argparse
import logging
import sys
from typing import List, Optional

from radsmith import __version__
from radsmith.cli import commands
from radsmith.core import config
from radsmith.core.errors import ArgumentError, RadSmithError
from radsmith.core.log import setup_logging

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2


def _common() -> argparse.ArgumentParser:
    """Flags shared by every subcommand"""
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="master seed (default from RADSMITH_SEED)")
    common.add_argument("--config", default=None, help="JSON document with 'model' and/or 'train' sections")
    common.add_argument("--profile", choices=sorted(config.PROFILES), default=config.DEFAULT_PROFILE,
                        help="degradation profile")
    common.add_argument("--verbose", "-v", action="store_true", help="debug logging")
    common.add_argument("--quiet", "-q", action="store_true", help="warnings only, no progress bars")
    return common


def _training_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("data", help="HR image directory or synthesized dataset directory")
    parser.add_argument("--run-dir", default=None, help="output directory (default RUNS_DIR/<stage>)")
    parser.add_argument("--steps", type=int, default=None, help="override the stage's step count")
    parser.add_argument("--lr-denoise", type=float, default=None, help="override the denoiser learning rate")
    parser.add_argument("--lr-sr", type=float, default=None, help="override the SR learning rate")
    parser.add_argument("--holdout", type=int, default=16, help="held-out patches for periodic eval")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="radsmith",
        description=config.PROJECT_NAME,
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="<command>")
    sub.required = True
    common = _common()

    p = sub.add_parser("synth", parents=[common], help="synthesize an HR/LRnoisy/LRclean dataset")
    p.add_argument("hr_dir")
    p.add_argument("out_dir")
    p.add_argument("--workers", type=int, default=None, help="worker threads (default RADSMITH_WORKERS)")
    p.set_defaults(handler=commands.synth)

    p = sub.add_parser("degrade", parents=[common], help="degrade one image and print its parameters")
    p.add_argument("image")
    p.add_argument("--out-noisy", default=None)
    p.add_argument("--out-clean", default=None)
    p.set_defaults(handler=commands.degrade)

    p = sub.add_parser("metrics", parents=[common], help="PSNR/SSIM between two images or directories")
    p.add_argument("restored")
    p.add_argument("reference")
    p.add_argument("--crop", type=int, default=0, help="border pixels excluded")
    p.add_argument("--space", choices=("luma", "rgb"), default="luma")
    p.set_defaults(handler=commands.metrics)

    p = sub.add_parser("train-denoise", parents=[common], help="pretrain the denoiser on (y, y')")
    _training_flags(p)
    p.set_defaults(handler=commands.train_denoise)

    p = sub.add_parser("train-sr", parents=[common], help="pretrain the SR network on (y', x)")
    _training_flags(p)
    p.add_argument("--direct", action="store_true", help="train on noisy inputs (no denoising head)")
    p.set_defaults(handler=commands.train_sr)

    p = sub.add_parser("train-joint", parents=[common], help="fine-tune sr(denoiser(y)) end to end")
    _training_flags(p)
    p.add_argument("--denoiser", required=True, help="checkpoint from train-denoise")
    p.add_argument("--sr", required=True, help="checkpoint from train-sr")
    p.add_argument("--adversarial", action="store_true", help="enable the discriminator term")
    p.set_defaults(handler=commands.train_joint)

    p = sub.add_parser("eval", parents=[common], help="score a model and the bicubic baseline")
    p.add_argument("dataset", help="synthesized dataset directory or manifest.json")
    p.add_argument("--checkpoint", action="append", default=[],
                   help="model checkpoint (repeatable; components merge, default: fresh model)")
    p.add_argument("--method", default="Ours")
    p.add_argument("--crop", type=int, default=None, help="border pixels excluded (default: scale)")
    p.add_argument("--out", default=None, help="write the reports and table as JSON")
    p.add_argument("--domain-shift", action="store_true", help="also score the SR net on clean vs degraded LR")
    p.set_defaults(handler=commands.evaluate)

    p = sub.add_parser("verify", parents=[common], help="replay a manifest and compare files")
    p.add_argument("manifest")
    p.set_defaults(handler=commands.verify)

    p = sub.add_parser("gradcheck", parents=[common], help="run the finite-difference gradient suite")
    p.add_argument("--tol", type=float, default=1e-4)
    p.set_defaults(handler=commands.gradcheck)

    p = sub.add_parser("fixture", parents=[common], help="write the synthetic radiograph fixture")
    p.add_argument("out_dir", nargs="?", default=None, help="output directory (default DATA_DIR/fixture)")
    p.add_argument("--count", type=int, default=64)
    p.add_argument("--size", type=int, default=96)
    p.set_defaults(handler=commands.fixture)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE

    if args.quiet:
        level = "WARNING"
    elif args.verbose:
        level = "DEBUG"
    else:
        level = config.LOG_LEVEL
    setup_logging(level)
    if args.seed is None:
        args.seed = config.DEFAULT_SEED

    try:
        return args.handler(args)
    except ArgumentError as e:
        logger.error("%s", e)
        return EXIT_USAGE
    except (RadSmithError, OSError) as e:
        logger.error("%s", e)
        return EXIT_FAILURE


def run() -> None:
    sys.exit(main())
