"""Dataset synthesis (HR/, LRnoisy/, LRclean/ + manifest.json) and manifest replay."""
import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np
from pydantic import ValidationError
from tqdm import tqdm

from radsmith.core.errors import ArgumentError, DecodeError, ManifestError
from radsmith.models.schemas import (
    DatasetManifest,
    DegradationConfig,
    ManifestEntry,
    Mismatch,
    SplitProfile,
    VerifyReport,
)
from radsmith.services.degrade import degrade_pair, replay
from radsmith.services.imagecore import Image, load_image, save_image, to_bytes, to_luma
from radsmith.services.training import TestItem
from radsmith.utils.file_utils import ensure_dir_exists, list_images, relative_to
from radsmith.utils.rng import mix_seed

logger = logging.getLogger(__name__)

MANIFEST_FILENAME = "manifest.json"
HR_DIR = "HR"
LR_NOISY_DIR = "LRnoisy"
LR_CLEAN_DIR = "LRclean"

PathLike = Union[str, Path]


def prepare_hr(img: Image, scale: int) -> Image:
    """Luma, center crop to a multiple of `scale`, snapped to the 8-bit grid it is stored on"""
    x = to_luma(img).center_crop_to_multiple(scale)
    return Image(to_bytes(x) / 255.0)


def write_manifest(out_dir: PathLike, manifest: DatasetManifest) -> Path:
    path = Path(out_dir) / MANIFEST_FILENAME
    try:
        path.write_text(manifest.model_dump_json(indent=2) + "\n", encoding="utf-8")
    except OSError as e:
        raise ManifestError(f"Failed to write manifest: {path}") from e
    return path


def read_manifest(path: PathLike) -> DatasetManifest:
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_FILENAME
    try:
        raw = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ManifestError(f"Manifest not found or unreadable: {path}") from e
    try:
        return DatasetManifest.model_validate_json(raw)
    except ValidationError as e:
        raise ManifestError(f"Manifest is invalid: {path}: {e}") from e


def synth_dataset(hr_dir: PathLike, out_dir: PathLike, profile: SplitProfile, master_seed: int,
                  base_config: Optional[DegradationConfig] = None, workers: int = 1,
                  progress: bool = False) -> DatasetManifest:
    """Degrade every image of `hr_dir` once and record the parameters.

    Image i uses seed mix_seed(master_seed, i) in name order, so the output
    does not depend on the number of workers.
    """
    sources = list_images(hr_dir)
    if not sources:
        raise ArgumentError(f"no readable images (.png, .pgm) in {hr_dir}")
    stems = [p.stem for p in sources]
    if len(set(stems)) != len(stems):
        raise ArgumentError(f"image names in {hr_dir} are not unique once extensions are dropped")

    cfg = profile.apply(base_config)
    out_dir = ensure_dir_exists(out_dir)
    dirs = {name: ensure_dir_exists(out_dir / name) for name in (HR_DIR, LR_NOISY_DIR, LR_CLEAN_DIR)}

    def process(job: Tuple[int, Path]) -> ManifestEntry:
        index, source = job
        x = prepare_hr(load_image(source), cfg.scale)
        pair = degrade_pair(x, cfg, mix_seed(master_seed, index))
        name = f"{source.stem}.png"
        paths = {d: dirs[d] / name for d in dirs}
        save_image(x, paths[HR_DIR])
        save_image(pair.y, paths[LR_NOISY_DIR])
        save_image(pair.y_clean, paths[LR_CLEAN_DIR])
        return ManifestEntry(
            id=source.stem,
            hr_path=relative_to(paths[HR_DIR], out_dir),
            lr_noisy_path=relative_to(paths[LR_NOISY_DIR], out_dir),
            lr_clean_path=relative_to(paths[LR_CLEAN_DIR], out_dir),
            params=pair.params,
        )

    jobs = list(enumerate(sources))
    with ThreadPoolExecutor(max_workers=max(1, workers)) as executor:
        entries = list(tqdm(executor.map(process, jobs), total=len(jobs), desc="synth", disable=not progress))

    manifest = DatasetManifest(profile=profile.name, config=cfg, master_seed=master_seed, entries=entries)
    path = write_manifest(out_dir, manifest)
    logger.info("Synthesized %d pairs with profile %s into %s", len(entries), profile.name, path)
    return manifest


def _compare(expected: Image, path: Path) -> Optional[float]:
    """Max absolute difference in [0, 1] units between the 8-bit encodings, None when equal"""
    stored = to_bytes(load_image(path))
    wanted = to_bytes(expected)
    if stored.shape != wanted.shape:
        return float("inf")
    diff = np.abs(stored.astype(np.int32) - wanted.astype(np.int32)).max()
    return None if diff == 0 else float(diff) / 255.0


def verify_manifest(manifest_path: PathLike) -> VerifyReport:
    """Replay every entry from its stored parameters and compare with the files on disk"""
    manifest_path = Path(manifest_path)
    if manifest_path.is_dir():
        manifest_path = manifest_path / MANIFEST_FILENAME
    manifest = read_manifest(manifest_path)
    root = manifest_path.parent

    mismatches: List[Mismatch] = []
    missing: List[str] = []
    for entry in manifest.entries:
        files = {
            "hr": root / entry.hr_path,
            "lr_noisy": root / entry.lr_noisy_path,
            "lr_clean": root / entry.lr_clean_path,
        }
        absent = [str(p.relative_to(root).as_posix()) for p in files.values() if not p.is_file()]
        if absent:
            missing.extend(absent)
            continue
        try:
            hr = load_image(files["hr"])
            pair = replay(hr, entry.params)
        except (DecodeError, ArgumentError) as e:
            mismatches.append(Mismatch(id=entry.id, file=entry.hr_path, reason=str(e)))
            continue
        for label, image, rel in (("lr_noisy", pair.y, entry.lr_noisy_path),
                                  ("lr_clean", pair.y_clean, entry.lr_clean_path)):
            try:
                diff = _compare(image, files[label])
            except DecodeError as e:
                mismatches.append(Mismatch(id=entry.id, file=rel, reason=str(e)))
                continue
            if diff is not None:
                reason = "dimensions differ" if np.isinf(diff) else "pixel values differ"
                mismatches.append(Mismatch(
                    id=entry.id, file=rel, reason=reason, max_abs_diff=None if np.isinf(diff) else diff,
                ))

    report = VerifyReport(manifest=str(manifest_path), checked=len(manifest.entries),
                          mismatches=mismatches, missing=missing)
    if report.ok:
        logger.info("Verified %d entries of %s: no mismatches", report.checked, manifest_path)
    else:
        logger.warning("Verification of %s found %d mismatches and %d missing files",
                       manifest_path, len(mismatches), len(missing))
    return report


def load_test_set(manifest_path: PathLike) -> Tuple[DatasetManifest, List[TestItem]]:
    """Fixed LR test inputs (noisy and clean) with their HR references"""
    manifest_path = Path(manifest_path)
    if manifest_path.is_dir():
        manifest_path = manifest_path / MANIFEST_FILENAME
    manifest = read_manifest(manifest_path)
    root = manifest_path.parent
    items = [
        TestItem(
            id=entry.id,
            y=load_image(root / entry.lr_noisy_path),
            x=load_image(root / entry.hr_path),
            y_clean=load_image(root / entry.lr_clean_path),
        )
        for entry in manifest.entries
    ]
    return manifest, items


def load_hr_images(path: PathLike) -> List[Image]:
    """Grayscale HR images from a manifest directory (HR/) or a plain image directory"""
    path = Path(path)
    directory = path / HR_DIR if (path / MANIFEST_FILENAME).is_file() else path
    files = list_images(directory)
    if not files:
        raise ArgumentError(f"no readable images in {directory}")
    return [to_luma(load_image(f)) for f in files]
