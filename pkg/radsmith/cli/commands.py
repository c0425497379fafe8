"""One handler per subcommand. Each resolves the full configuration, prints it, acts and returns an exit code."""
import json
import logging
import sys
from argparse import Namespace
from pathlib import Path
from typing import Any, Dict, List, Tuple

import numpy as np
from pydantic import ValidationError

from radsmith.core import config
from radsmith.core.errors import ArgumentError
from radsmith.core.log import progress_enabled
from radsmith.models.schemas import DegradationConfig, RunConfig, SplitProfile, TrainConfig
from radsmith.services.dataset import (
    MANIFEST_FILENAME,
    load_hr_images,
    load_test_set,
    prepare_hr,
    synth_dataset,
    verify_manifest,
)
from radsmith.services.degrade import degrade_pair
from radsmith.services.fixtures import write_fixture
from radsmith.services.imagecore import Image, load_image, save_image
from radsmith.services.metrics import evaluate_set, format_table, render_table
from radsmith.services.networks import build_state, load_state, merge_states
from radsmith.services.oracle import run_suite
from radsmith.services.training import (
    PatchSampler,
    TrainLog,
    TrainResult,
    evaluate_model,
    measure_domain_shift,
    train_denoise as run_train_denoise,
    train_direct as run_train_direct,
    train_joint as run_train_joint,
    train_sr as run_train_sr,
)
from radsmith.utils.file_utils import ensure_dir_exists, list_images

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

def _deep_merge(base: Dict[str, Any], update: Dict[str, Any]) -> Dict[str, Any]:
    merged = dict(base)
    for key, value in update.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def _describe(error: ValidationError) -> str:
    return "; ".join(
        f"{'.'.join(str(part) for part in err['loc']) or '<root>'}: {err['msg']}" for err in error.errors()
    )


def _read_user_config(path: str) -> Dict[str, Any]:
    try:
        user = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as e:
        raise ArgumentError(f"cannot read config {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ArgumentError(f"config {path} is not valid JSON: {e}") from e
    if not isinstance(user, dict):
        raise ArgumentError(f"config {path} must be a JSON object")
    return user


def resolve_config(args: Namespace) -> RunConfig:
    """Defaults, then the profile, then --config, then individual flags"""
    profile = config.PROFILES[args.profile]
    base = RunConfig(train=TrainConfig(degradation=profile.apply(DegradationConfig())))
    merged = base.model_dump()
    user = _read_user_config(args.config) if args.config else {}
    merged = _deep_merge(merged, user)
    for section in ("model", "train"):
        if not isinstance(merged[section], dict):
            raise ArgumentError(f"config section '{section}' must be a JSON object")
    user_model = user.get("model", {})
    user_train = user.get("train", {})

    train = merged["train"]
    sr = merged["model"].get("sr")
    degradation = train.get("degradation")
    sr_scale_given = isinstance(user_model.get("sr"), dict) and "scale" in user_model["sr"]
    if isinstance(sr, dict) and isinstance(degradation, dict) and not sr_scale_given:
        sr["scale"] = degradation.get("scale")
    if "dtype" not in user_train:
        train["dtype"] = config.DTYPE
    train["seed"] = args.seed
    if getattr(args, "steps", None) is not None:
        train["steps_separate"] = args.steps
        train["steps_joint"] = args.steps
    if getattr(args, "lr_denoise", None) is not None:
        train["lr_denoise"] = args.lr_denoise
    if getattr(args, "lr_sr", None) is not None:
        train["lr_sr"] = args.lr_sr
    if getattr(args, "adversarial", False) and isinstance(train.get("adversarial"), dict):
        train["adversarial"]["enabled"] = True

    try:
        resolved = RunConfig.model_validate(merged)
    except ValidationError as e:
        raise ArgumentError(f"invalid configuration: {_describe(e)}") from e
    # stdout is reserved for results; shown even under --quiet
    print(f"resolved config: {resolved.model_dump_json()}", file=sys.stderr)
    return resolved


def _emit(payload: Any) -> None:
    print(json.dumps(payload, indent=2, sort_keys=True))


# ---------------------------------------------------------------------------
# Data commands
# ---------------------------------------------------------------------------

def synth(args: Namespace) -> int:
    cfg = resolve_config(args)
    deg = cfg.train.degradation
    profile = SplitProfile(name=args.profile, kernel_size_choices=deg.kernel_size_choices,
                           jpeg_quality=deg.jpeg_quality, scale=deg.scale)
    manifest = synth_dataset(args.hr_dir, args.out_dir, profile, args.seed, base_config=deg,
                             workers=args.workers or config.WORKERS, progress=progress_enabled(args.quiet))
    _emit({
        "manifest": (Path(args.out_dir) / MANIFEST_FILENAME).as_posix(),
        "profile": manifest.profile,
        "entries": len(manifest.entries),
    })
    return 0


def degrade(args: Namespace) -> int:
    cfg = resolve_config(args)
    deg = cfg.train.degradation
    x = prepare_hr(load_image(args.image), deg.scale)
    pair = degrade_pair(x, deg, args.seed)
    if args.out_noisy:
        save_image(pair.y, args.out_noisy)
    if args.out_clean:
        save_image(pair.y_clean, args.out_clean)
    print(pair.params.model_dump_json(indent=2))
    return 0


def _metric_pairs(restored: Path, reference: Path) -> Tuple[List[Tuple[Image, Image]], List[str]]:
    if restored.is_file() and reference.is_file():
        return [(load_image(restored), load_image(reference))], [restored.stem]
    if restored.is_dir() and reference.is_dir():
        references = {p.stem: p for p in list_images(reference)}
        pairs, ids = [], []
        for path in list_images(restored):
            if path.stem not in references:
                raise ArgumentError(f"{path.name} has no counterpart in {reference}")
            pairs.append((load_image(path), load_image(references[path.stem])))
            ids.append(path.stem)
        if not pairs:
            raise ArgumentError(f"no images in {restored}")
        return pairs, ids
    raise ArgumentError("metrics expects two image files or two directories")


def metrics(args: Namespace) -> int:
    resolve_config(args)
    pairs, ids = _metric_pairs(Path(args.restored), Path(args.reference))
    report = evaluate_set(pairs, crop_border=args.crop, ids=ids, space=args.space)
    print(report.model_dump_json(indent=2))
    return 0


def verify(args: Namespace) -> int:
    resolve_config(args)
    report = verify_manifest(args.manifest)
    print(report.model_dump_json(indent=2))
    return 0 if report.ok else 1


def fixture(args: Namespace) -> int:
    resolve_config(args)
    out_dir = Path(args.out_dir) if args.out_dir else config.DATA_DIR / "fixture"
    paths = write_fixture(out_dir, count=args.count, size=args.size, seed=args.seed)
    _emit({"out_dir": out_dir.as_posix(), "count": len(paths), "size": args.size})
    return 0


def gradcheck(args: Namespace) -> int:
    resolve_config(args)
    reports = run_suite(seed=args.seed, tol=args.tol)
    for report in reports:
        print(f"{report.name:<24} {report.max_rel_error:.3e}  {'ok' if report.passed else 'FAILED'}")
    failed = [r.name for r in reports if not r.passed]
    if failed:
        logger.error("Gradient check failed for: %s", ", ".join(failed))
        return 1
    return 0


# ---------------------------------------------------------------------------
# Training commands
# ---------------------------------------------------------------------------

def _prepare_run(args: Namespace, stage: str, cfg: RunConfig) -> Tuple[Path, TrainLog]:
    run_dir = ensure_dir_exists(args.run_dir or config.RUNS_DIR / stage)
    (run_dir / "config.json").write_text(cfg.model_dump_json(indent=2) + "\n", encoding="utf-8")
    log_path = run_dir / "train_log.jsonl"
    log_path.unlink(missing_ok=True)
    return run_dir, TrainLog(log_path)


def _sampler(args: Namespace, cfg: RunConfig) -> PatchSampler:
    return PatchSampler(load_hr_images(args.data), cfg.train, workers=config.WORKERS)


def _finish(result: TrainResult, run_dir: Path, checkpoint: str) -> int:
    path = run_dir / checkpoint
    result.state.save(path)
    summary = result.log.summary()
    if not summary.empty:
        logger.info("Loss summary:\n%s", summary.to_string())
    losses = result.log.losses()
    _emit({
        "checkpoint": path.as_posix(),
        "log": (run_dir / "train_log.jsonl").as_posix(),
        "steps": len(losses),
        "final_loss": losses[-1] if losses else None,
    })
    return 0


def train_denoise(args: Namespace) -> int:
    cfg = resolve_config(args)
    run_dir, log = _prepare_run(args, "denoise", cfg)
    sampler = _sampler(args, cfg)
    eval_batch = sampler.holdout(args.holdout) if args.holdout else None
    result = run_train_denoise(sampler, cfg.model, cfg.train, log=log, eval_batch=eval_batch,
                               progress=progress_enabled(args.quiet))
    return _finish(result, run_dir, "denoise.ckpt")


def train_sr(args: Namespace) -> int:
    cfg = resolve_config(args)
    stage = "direct" if args.direct else "sr"
    run_dir, log = _prepare_run(args, stage, cfg)
    sampler = _sampler(args, cfg)
    eval_batch = sampler.holdout(args.holdout) if args.holdout else None
    trainer = run_train_direct if args.direct else run_train_sr
    result = trainer(sampler, cfg.model, cfg.train, log=log, eval_batch=eval_batch,
                     progress=progress_enabled(args.quiet))
    return _finish(result, run_dir, f"{stage}.ckpt")


def train_joint(args: Namespace) -> int:
    cfg = resolve_config(args)
    state = merge_states(load_state(args.denoiser), load_state(args.sr))
    if state.sr is None or state.denoiser is None:
        raise ArgumentError("--denoiser and --sr must point at denoiser and SR checkpoints")
    if state.sr.spec.scale != cfg.train.degradation.scale:
        raise ArgumentError(
            f"SR checkpoint is x{state.sr.spec.scale} but the configuration degrades by x{cfg.train.degradation.scale}"
        )
    run_dir, log = _prepare_run(args, "joint", cfg)
    sampler = _sampler(args, cfg)
    eval_batch = sampler.holdout(args.holdout) if args.holdout else None
    result = run_train_joint(sampler, state, cfg.train, log=log, eval_batch=eval_batch,
                             progress=progress_enabled(args.quiet))
    return _finish(result, run_dir, "joint.ckpt")


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

def _json_table(table) -> List[Dict[str, Any]]:
    if table.empty:
        return []
    cells = table.astype(object).where(np.isfinite(table.astype(float)), "inf")
    return cells.reset_index().to_dict(orient="records")


def evaluate(args: Namespace) -> int:
    cfg = resolve_config(args)
    manifest, items = load_test_set(args.dataset)
    scale = manifest.config.scale
    if args.checkpoint:
        state = merge_states(*[load_state(path) for path in args.checkpoint])
    else:
        spec = cfg.model.model_copy(update={"sr": cfg.model.sr.model_copy(update={"scale": scale})})
        state = build_state(spec, args.seed, components=("denoiser", "sr"))
        logger.info("No checkpoint given; evaluating a freshly initialized model")

    report = evaluate_model(state, items, scale, crop=args.crop, dataset=manifest.profile, method=args.method)
    table = format_table([report])
    print(render_table(table))

    payload: Dict[str, Any] = {
        "reports": [report.model_dump(mode="json")],
        "table": _json_table(table),
    }
    if args.domain_shift:
        shift = measure_domain_shift(state, items, scale, crop=args.crop, dataset=manifest.profile)
        print(f"domain shift: clean {shift.clean.model.mean_psnr_db:.2f} dB, "
              f"degraded {shift.degraded.model.mean_psnr_db:.2f} dB, gap {shift.psnr_gap_db:.2f} dB")
        payload["domain_shift"] = shift.model_dump(mode="json")
    if args.out:
        Path(args.out).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        logger.info("Wrote evaluation to %s", args.out)
    return 0
