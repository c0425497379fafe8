"""Separate-then-joint training of the denoiser and SR network, plus evaluation.

Stages:
    train_denoise   (y, y')  -> denoiser, lr_denoise
    train_sr        (y', x)  -> SR net,   lr_sr
    train_joint     (y, x)   -> both, end to end, per-group rates lr_denoise / lr_sr
    train_direct    (y, x)   -> SR net alone on noisy inputs (no denoising head)
"""
import json
import logging
import math
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Deque, Dict, Iterator, List, Optional, Sequence, Union

import numpy as np
import pandas as pd
from tqdm import tqdm

from radsmith.core.errors import ArgumentError, RadSmithError
from radsmith.models.schemas import (
    DomainShiftReport,
    EvaluationReport,
    LossWeights,
    ModelSpec,
    TrainConfig,
)
from radsmith.services import autodiff as ad
from radsmith.services.autodiff import Adam, Tensor
from radsmith.services.degrade import bicubic_resize, degrade_pair
from radsmith.services.imagecore import Image
from radsmith.services.metrics import evaluate_set, psnr
from radsmith.services.networks import ModelState, build_state, gan_value
from radsmith.utils.rng import generator, mix_seed

logger = logging.getLogger(__name__)

CROP_STREAM = 2
HOLDOUT_OFFSET = 2 ** 40


def composite_loss(pred: Tensor, target: Tensor, w: LossWeights) -> Tensor:
    """w_l1 * L1 + w_ssim * (1 - SSIM)"""
    if pred.shape != target.shape:
        raise ArgumentError(f"composite_loss: shape mismatch {pred.shape} vs {target.shape}")
    loss = ad.scale(ad.l1_loss(pred, target), w.w_l1)
    if w.w_ssim:
        loss = ad.add(loss, ad.scale(ad.ssim_loss(pred, target), w.w_ssim))
    return loss


# ---------------------------------------------------------------------------
# Data
# ---------------------------------------------------------------------------

@dataclass
class Batch:
    """Stacked NCHW patches: noisy LR y, clean LR y', HR x"""
    y: np.ndarray
    y_clean: np.ndarray
    x: np.ndarray

    def __len__(self) -> int:
        return self.x.shape[0]


class PatchSampler:
    """Random HR crops degraded on the fly.

    Item k of the stream uses seed mix_seed(cfg.seed, k); batch `step` holds
    items step*B .. step*B + B - 1, so the data order depends only on the
    seed. With `pregenerated`, a fixed pool of items is built once and cycled.
    """

    def __init__(self, images: Sequence[Image], cfg: TrainConfig, workers: int = 1):
        if not images:
            raise ArgumentError("training needs at least one HR image")
        for img in images:
            if img.channels != 1:
                raise ArgumentError("training images must be grayscale")
            if min(img.height, img.width) < cfg.patch_size:
                raise ArgumentError(
                    f"image {img.height}x{img.width} is smaller than patch size {cfg.patch_size}"
                )
        self.images = list(images)
        self.cfg = cfg
        self.workers = max(1, workers)
        self._pool: Optional[List[Batch]] = None
        if cfg.pregenerated:
            self._pool = [self._item(k) for k in range(cfg.pregenerated_count)]
            logger.info("Pregenerated %d training patches", len(self._pool))

    def _item(self, index: int) -> Batch:
        seed = mix_seed(self.cfg.seed, index)
        rng = generator(seed, CROP_STREAM)
        img = self.images[int(rng.integers(len(self.images)))]
        p = self.cfg.patch_size
        top = int(rng.integers(img.height - p + 1))
        left = int(rng.integers(img.width - p + 1))
        patch = img.crop(top, left, p, p)
        pair = degrade_pair(patch, self.cfg.degradation, seed)
        return Batch(y=pair.y.data[np.newaxis], y_clean=pair.y_clean.data[np.newaxis], x=patch.data[np.newaxis])

    def _get(self, index: int) -> Batch:
        if self._pool is not None:
            return self._pool[index % len(self._pool)]
        return self._item(index)

    def batch(self, step: int) -> Batch:
        b = self.cfg.batch_size
        items = [self._get(step * b + i) for i in range(b)]
        return _stack(items)

    def holdout(self, count: int) -> Batch:
        """Patches from an index range the training stream never reaches"""
        return _stack([self._item(HOLDOUT_OFFSET + i) for i in range(count)])

    def batches(self, start: int, steps: int) -> Iterator[Batch]:
        """Batches start .. start + steps - 1, prefetched on worker threads when configured"""
        if self.workers == 1:
            for step in range(start, start + steps):
                yield self.batch(step)
            return
        with ThreadPoolExecutor(max_workers=self.workers) as executor:
            pending: Deque = deque()
            next_step = start
            end = start + steps
            while next_step < end or pending:
                while next_step < end and len(pending) < 2 * self.workers:
                    pending.append(executor.submit(self.batch, next_step))
                    next_step += 1
                yield pending.popleft().result()


def _stack(items: Sequence[Batch]) -> Batch:
    return Batch(
        y=np.concatenate([it.y for it in items]),
        y_clean=np.concatenate([it.y_clean for it in items]),
        x=np.concatenate([it.x for it in items]),
    )


# ---------------------------------------------------------------------------
# Log
# ---------------------------------------------------------------------------

class TrainLog:
    """Per-step records, mirrored to a JSON-lines file when a path is given"""

    def __init__(self, path: Optional[Union[str, Path]] = None):
        self.records: List[Dict] = []
        self.path = Path(path) if path else None

    def write(self, record: Dict) -> None:
        self.records.append(record)
        if self.path is not None:
            with open(self.path, "a", encoding="utf-8") as f:
                f.write(json.dumps(record, sort_keys=True) + "\n")

    def losses(self, stage: Optional[str] = None) -> List[float]:
        return [r["loss"] for r in self.records if "loss" in r and (stage is None or r["stage"] == stage)]

    def frame(self) -> pd.DataFrame:
        return pd.json_normalize(self.records)

    def summary(self) -> pd.DataFrame:
        """First, last and minimum loss per stage"""
        frame = self.frame()
        if frame.empty or "loss" not in frame:
            return pd.DataFrame()
        steps = frame.dropna(subset=["loss"])
        return steps.groupby("stage", sort=False)["loss"].agg(["first", "last", "min", "count"])


@dataclass
class TrainResult:
    state: ModelState
    log: TrainLog


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------

def _as_tensor(array: np.ndarray) -> Tensor:
    return Tensor(array)


def batch_psnr(pred: np.ndarray, target: np.ndarray) -> float:
    """Mean PSNR over the items of a batch, predictions clamped to [0, 1]"""
    values = [
        psnr(Image.from_array(p, clamp=True), Image.from_array(t, clamp=True))
        for p, t in zip(pred, target)
    ]
    finite = [v for v in values if math.isfinite(v)]
    return float(np.mean(finite)) if finite else math.inf


def _predict(state: ModelState, y: np.ndarray, use_denoiser: bool = True, use_sr: bool = True) -> np.ndarray:
    state.eval()
    try:
        with ad.no_grad():
            t = _as_tensor(y)
            if use_denoiser and state.denoiser is not None:
                t = state.denoiser(t)
            if use_sr and state.sr is not None:
                t = state.sr(t)
        return t.data
    finally:
        state.train()


def _run(stage: str, steps: int, optimizer: Adam, step_fn: Callable[[Batch], Dict[str, float]],
         sampler: PatchSampler, cfg: TrainConfig, log: TrainLog, progress: bool,
         eval_fn: Optional[Callable[[], Dict[str, float]]] = None) -> None:
    if steps and eval_fn is not None:
        log.write({"stage": stage, "step": 0, "eval": eval_fn()})
    bar = tqdm(total=steps, desc=stage, disable=not progress, leave=False)
    for step, batch in enumerate(sampler.batches(0, steps), start=1):
        values = step_fn(batch)
        optimizer.step()
        record = {"stage": stage, "step": step, "lr": optimizer.lrs(), **values}
        if eval_fn is not None and cfg.eval_every and (step % cfg.eval_every == 0 or step == steps):
            record["eval"] = eval_fn()
            logger.info("%s step %d: loss %.5f eval %s", stage, step, values["loss"], record["eval"])
        log.write(record)
        bar.update(1)
        bar.set_postfix(loss=f"{values['loss']:.4f}")
    bar.close()
    if not all(np.all(np.isfinite(p.data)) for g in optimizer.groups for p in g.params):
        raise RadSmithError(f"{stage}: parameters became non-finite; lower the learning rate")


def _supervised_step(forward: Callable[[Tensor], Tensor], inputs: str, targets: str,
                     weights: LossWeights) -> Callable[[Batch], Dict[str, float]]:
    def step(batch: Batch) -> Dict[str, float]:
        loss = composite_loss(forward(_as_tensor(getattr(batch, inputs))), _as_tensor(getattr(batch, targets)), weights)
        ad.backward(loss)
        return {"loss": loss.item()}
    return step


def _setup(cfg: TrainConfig, log: Optional[TrainLog]) -> TrainLog:
    ad.set_default_dtype(cfg.dtype)
    return log or TrainLog()


def train_denoise(sampler: PatchSampler, spec: ModelSpec, cfg: TrainConfig, state: Optional[ModelState] = None,
                  log: Optional[TrainLog] = None, eval_batch: Optional[Batch] = None,
                  progress: bool = False) -> TrainResult:
    """Fit the denoiser on (y, y') with Adam at lr_denoise for steps_separate iterations"""
    log = _setup(cfg, log)
    state = state or build_state(spec, cfg.seed, components=("denoiser",))
    if state.denoiser is None:
        raise ArgumentError("train_denoise needs a state with a denoiser")
    state.astype(ad.get_default_dtype())
    optimizer = Adam({"denoiser": (state.denoiser.parameters(), cfg.lr_denoise)})
    eval_fn = None
    if eval_batch is not None:
        def eval_fn():
            pred = _predict(state, eval_batch.y, use_sr=False)
            return {"psnr_db": batch_psnr(pred, eval_batch.y_clean),
                    "input_psnr_db": batch_psnr(eval_batch.y, eval_batch.y_clean)}
    step_fn = _supervised_step(state.denoiser, "y", "y_clean", cfg.loss_weights)
    _run("denoise", cfg.steps_separate, optimizer, step_fn, sampler, cfg, log, progress, eval_fn)
    return TrainResult(state=state, log=log)


def _train_sr_on(stage: str, inputs: str, sampler: PatchSampler, spec: ModelSpec, cfg: TrainConfig,
                 state: Optional[ModelState], log: Optional[TrainLog], eval_batch: Optional[Batch],
                 progress: bool) -> TrainResult:
    log = _setup(cfg, log)
    state = state or build_state(spec, cfg.seed, components=("sr",))
    if state.sr is None:
        raise ArgumentError(f"{stage} needs a state with an SR network")
    state.astype(ad.get_default_dtype())
    optimizer = Adam({"sr": (state.sr.parameters(), cfg.lr_sr)})
    eval_fn = None
    if eval_batch is not None:
        def eval_fn():
            source = getattr(eval_batch, inputs)
            pred = _predict(state, source, use_denoiser=False)
            n, c, h, w = eval_batch.x.shape
            bicubic = np.stack([bicubic_resize(Image(s), w, h).data for s in source])
            return {"psnr_db": batch_psnr(pred, eval_batch.x), "bicubic_psnr_db": batch_psnr(bicubic, eval_batch.x)}
    step_fn = _supervised_step(state.sr, inputs, "x", cfg.loss_weights)
    _run(stage, cfg.steps_separate, optimizer, step_fn, sampler, cfg, log, progress, eval_fn)
    return TrainResult(state=state, log=log)


def train_sr(sampler: PatchSampler, spec: ModelSpec, cfg: TrainConfig, state: Optional[ModelState] = None,
             log: Optional[TrainLog] = None, eval_batch: Optional[Batch] = None,
             progress: bool = False) -> TrainResult:
    """Fit the SR network on (y', x) with Adam at lr_sr for steps_separate iterations"""
    return _train_sr_on("sr", "y_clean", sampler, spec, cfg, state, log, eval_batch, progress)


def train_direct(sampler: PatchSampler, spec: ModelSpec, cfg: TrainConfig, state: Optional[ModelState] = None,
                 log: Optional[TrainLog] = None, eval_batch: Optional[Batch] = None,
                 progress: bool = False) -> TrainResult:
    """Fit the SR network alone on noisy (y, x) pairs"""
    return _train_sr_on("direct", "y", sampler, spec, cfg, state, log, eval_batch, progress)


def train_joint(sampler: PatchSampler, state: ModelState, cfg: TrainConfig, log: Optional[TrainLog] = None,
                eval_batch: Optional[Batch] = None, progress: bool = False) -> TrainResult:
    """End-to-end fine-tuning of sr(denoiser(y)) against x.

    The denoiser group trains at lr_denoise and the SR group at lr_sr; a rate
    of 0 freezes that group. With adversarial training enabled, a discriminator
    step (at d_lr) precedes every generator step and the generator loss gains
    weight * g_loss.
    """
    log = _setup(cfg, log)
    if state is None or state.denoiser is None or state.sr is None:
        raise ArgumentError("train_joint needs pretrained denoiser and SR states")
    state.astype(ad.get_default_dtype())
    optimizer = Adam({
        "denoiser": (state.denoiser.parameters(), cfg.lr_denoise),
        "sr": (state.sr.parameters(), cfg.lr_sr),
    })
    adv = cfg.adversarial
    d_optimizer = None
    if adv.enabled:
        if state.discriminator is None:
            state.discriminator = build_state(state.spec, cfg.seed, components=("discriminator",)).discriminator
        d_optimizer = Adam({"discriminator": (state.discriminator.parameters(), adv.d_lr)})

    def generate(y: Tensor) -> Tensor:
        return state.sr(state.denoiser(y))

    def step_fn(batch: Batch) -> Dict[str, float]:
        y, x = _as_tensor(batch.y), _as_tensor(batch.x)
        values: Dict[str, float] = {}
        if d_optimizer is not None:
            with ad.no_grad():
                fake = generate(y)
            d_value = _gan_terms(state, x, Tensor(fake.data))
            ad.backward(d_value.d_loss)
            d_optimizer.step()
            values["d_loss"] = d_value.d_loss.item()
        pred = generate(y)
        loss = composite_loss(pred, x, cfg.loss_weights)
        values["supervised_loss"] = loss.item()
        if d_optimizer is not None:
            g_loss = _gan_terms(state, x, pred).g_loss
            values["g_loss"] = g_loss.item()
            loss = ad.add(loss, ad.scale(g_loss, adv.weight))
        ad.backward(loss)
        if d_optimizer is not None:
            state.discriminator.zero_grad()
        values["loss"] = loss.item()
        return values

    eval_fn = None
    if eval_batch is not None:
        def eval_fn():
            return {"psnr_db": batch_psnr(_predict(state, eval_batch.y), eval_batch.x)}
    _run("joint", cfg.steps_joint, optimizer, step_fn, sampler, cfg, log, progress, eval_fn)
    return TrainResult(state=state, log=log)


def _gan_terms(state: ModelState, real: Tensor, fake: Tensor):
    return gan_value(state.discriminator(real), state.discriminator(fake))


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TestItem:
    """One full test image: degraded LR input, clean LR, HR reference"""
    __test__ = False

    id: str
    y: Image
    x: Image
    y_clean: Optional[Image] = None


def restore(state: ModelState, y: Image) -> Image:
    """Whole-image inference sr(denoiser(y)) (denoiser skipped when absent), clamped"""
    if state.sr is None:
        raise ArgumentError("evaluation needs a state with an SR network")
    if y.channels != 1:
        raise ArgumentError("evaluation inputs must be grayscale")
    out = _predict(state, y.data[np.newaxis])
    return Image(np.clip(out[0], 0.0, 1.0))


def evaluate_model(state: ModelState, test_set: Sequence[TestItem], scale: int, crop: Optional[int] = None,
                   dataset: str = "test", method: str = "Ours", inputs: str = "y") -> EvaluationReport:
    """Model column and bicubic baseline column on full images (crop defaults to scale)"""
    if not test_set:
        raise ArgumentError("evaluate_model needs a non-empty test set")
    if state.sr is not None and state.sr.spec.scale != scale:
        raise ArgumentError(f"model scale {state.sr.spec.scale} differs from requested scale {scale}")
    crop = scale if crop is None else crop
    model_pairs, baseline_pairs, ids = [], [], []
    for item in test_set:
        source = getattr(item, inputs)
        if source is None:
            raise ArgumentError(f"test item {item.id} has no '{inputs}' image")
        if (source.height * scale, source.width * scale) != (item.x.height, item.x.width):
            raise ArgumentError(
                f"test item {item.id}: LR {source.height}x{source.width} x{scale} != HR {item.x.height}x{item.x.width}"
            )
        model_pairs.append((restore(state, source), item.x))
        baseline_pairs.append((bicubic_resize(source, item.x.width, item.x.height), item.x))
        ids.append(item.id)
    report = EvaluationReport(
        dataset=dataset,
        scale=scale,
        method=method,
        model=evaluate_set(model_pairs, crop_border=crop, ids=ids),
        baseline=evaluate_set(baseline_pairs, crop_border=crop, ids=ids),
    )
    logger.info("%s x%d %s: PSNR %.2f / %.2f (bicubic), SSIM %.4f / %.4f", dataset, scale, method,
                report.model.mean_psnr_db, report.baseline.mean_psnr_db,
                report.model.mean_ssim, report.baseline.mean_ssim)
    return report


def measure_domain_shift(state: ModelState, test_set: Sequence[TestItem], scale: int,
                         crop: Optional[int] = None, dataset: str = "test") -> DomainShiftReport:
    """Score an SR-only model on clean LR inputs and on composite-degraded inputs"""
    sr_only = ModelState(spec=state.spec, sr=state.sr)
    clean = evaluate_model(sr_only, test_set, scale, crop, dataset=dataset, method="clean", inputs="y_clean")
    degraded = evaluate_model(sr_only, test_set, scale, crop, dataset=dataset, method="degraded", inputs="y")
    return DomainShiftReport(
        clean=clean,
        degraded=degraded,
        psnr_gap_db=clean.model.mean_psnr_db - degraded.model.mean_psnr_db,
    )


def make_test_set(images: Sequence[Image], cfg: TrainConfig, master_seed: int,
                  ids: Optional[Sequence[str]] = None) -> List[TestItem]:
    """Degrade full HR images once (fixed LR test inputs)"""
    ids = ids or [f"{i:04d}" for i in range(len(images))]
    items = []
    for index, (image_id, img) in enumerate(zip(ids, images)):
        x = img.center_crop_to_multiple(cfg.degradation.scale)
        pair = degrade_pair(x, cfg.degradation, mix_seed(master_seed, index))
        items.append(TestItem(id=image_id, y=pair.y, x=x, y_clean=pair.y_clean))
    return items
