"""Cross-validated training and stitched inference.

Scans split into k folds by case (all mask variants of a scan stay in
one fold). Each fold trains its own model; the checkpoint tracks the
best validation loss seen so far, updating only on strict improvement.
Every random choice derives from the global seed, so a rerun reproduces
the loss curves bit for bit.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import Tensor
from .checkpoint import save_checkpoint
from .errors import ConfigError, DataError, NumericError
from .losses import LossWeights, SsimParams, composite_loss
from .masks import TrainingSample, void_image
from .optim import Adam
from .unet import UNet, UNetConfig, build_unet
from .util import make_rng
from .volume import MaskVolume, Volume, crop_center, crop_mask, make_crop_spec, stitch

TRAIN_DATA_RANGE = 2.0  # signed-unit span


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 500
    folds: int = 5
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    lambda_mae: float = 1.0
    lambda_ssim: float = 1.0
    batch_size: int = 1
    seed: int = 0
    crop_dims: tuple[int, int, int] = (208, 208, 144)
    base_channels: int = 32
    dropout_rate: float = 0.2
    mae_region: str = "non_tumor"   # or "healthy_only"

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.folds < 2:
            raise ConfigError(f"folds must be >= 2, got {self.folds}")
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ConfigError(f"betas must lie in [0, 1), got ({self.beta1}, {self.beta2})")
        if self.lambda_mae < 0 or self.lambda_ssim < 0:
            raise ConfigError(f"loss weights must be >= 0, got "
                              f"({self.lambda_mae}, {self.lambda_ssim})")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if any(e % 8 for e in self.crop_dims):
            raise ConfigError(f"crop_dims {self.crop_dims} must be divisible by 8")
        if self.mae_region not in ("non_tumor", "healthy_only"):
            raise ConfigError(f"mae_region must be non_tumor or healthy_only, got {self.mae_region!r}")

    def weights(self) -> LossWeights:
        return LossWeights(mae=self.lambda_mae, ssim=self.lambda_ssim)

    def ssim_params(self) -> SsimParams:
        return SsimParams(data_range=TRAIN_DATA_RANGE)


@dataclass(frozen=True)
class FoldPlan:
    folds: tuple[tuple[str, ...], ...]


@dataclass
class FoldResult:
    fold: int
    best_epoch: int
    best_val_loss: float
    checkpoint_path: str
    history: list[dict] = field(default_factory=list)


def kfold_split(case_ids: list[str], k: int, seed: int) -> FoldPlan:
    """Deterministic k folds: sort, seeded shuffle, round-robin deal.

    Fold sizes differ by at most one. Duplicate ids or k larger than the
    case count are rejected.
    """
    ids = sorted(case_ids)
    if len(set(ids)) != len(ids):
        raise DataError("case ids contain duplicates")
    if k < 2 or k > len(ids):
        raise DataError(f"need 2 <= k <= {len(ids)} cases, got k={k}")
    order = make_rng(seed, "kfold").permutation(len(ids))
    shuffled = [ids[i] for i in order]
    return FoldPlan(folds=tuple(tuple(shuffled[i::k]) for i in range(k)))


# -- normalization -------------------------------------------------------------


def normalize_two_stage(volume: Volume) -> tuple[Volume, float]:
    """Map raw intensities to [-1, 1]: divide by the max, then 2v - 1.

    Zero maps to -1 and the maximum voxel to +1. The recorded max
    inverts the mapping later.
    """
    vmax = float(volume.voxels.max())
    if vmax <= 0:
        raise DataError(f"volume max {vmax} must be positive to normalize")
    scaled = volume.voxels * np.float32(1.0 / vmax)
    signed = scaled * np.float32(2.0) - np.float32(1.0)
    return Volume(signed, domain="signed-unit", max_intensity=vmax,
                  affine_bytes=volume.affine_bytes), vmax


def denormalize(voxels: np.ndarray, vmax: float) -> np.ndarray:
    """Invert normalize_two_stage: (v + 1) / 2 * max."""
    return ((voxels + np.float32(1.0)) * np.float32(0.5) * np.float32(vmax)).astype(np.float32)


# -- sample preprocessing --------------------------------------------------------


@dataclass
class PreparedSample:
    """Cropped, normalized arrays ready to feed the network."""

    case_id: str
    voided: np.ndarray      # [1,1,D,H,W] float32, signed-unit
    mask: np.ndarray        # [1,1,D,H,W] float32 in {0,1}
    gt: np.ndarray          # [1,1,D,H,W] float32, signed-unit
    region: np.ndarray      # [1,1,D,H,W] bool, MAE region


def prepare_sample(sample: TrainingSample, crop_dims, mae_region: str = "non_tumor") -> PreparedSample:
    """Normalize both volumes by their own maxima, then center-crop."""
    gt_n, _ = normalize_two_stage(sample.t1n)
    voided_n, _ = normalize_two_stage(sample.t1n_voided)
    gt_c, spec = crop_center(gt_n, crop_dims)
    voided_c, _ = crop_center(voided_n, crop_dims)
    combined_c = crop_mask(sample.combined, spec)
    unhealthy_c = crop_mask(sample.unhealthy, spec)
    if mae_region == "healthy_only":
        region = combined_c.bits & ~unhealthy_c.bits
    else:
        region = ~unhealthy_c.bits
    if not region.any():
        raise DataError(f"{sample.case_id}: empty MAE region after cropping")
    return PreparedSample(
        case_id=sample.case_id,
        voided=voided_c.voxels[None, None].astype(np.float32),
        mask=combined_c.bits[None, None].astype(np.float32),
        gt=gt_c.voxels[None, None].astype(np.float32),
        region=region[None, None],
    )


# -- training --------------------------------------------------------------------


def _loss_for(model: UNet, batch: list[PreparedSample], config: TrainConfig,
              training: bool, rng: np.random.Generator | None) -> Tensor:
    voided = Tensor(np.concatenate([s.voided for s in batch], axis=0))
    mask = Tensor(np.concatenate([s.mask for s in batch], axis=0))
    gt = np.concatenate([s.gt for s in batch], axis=0)
    region = np.concatenate([s.region for s in batch], axis=0)
    pred = model.forward(voided, mask, training=training, rng=rng)
    return composite_loss(pred, gt, region, config.weights(), config.ssim_params())


def validation_loss(model: UNet, samples: list[PreparedSample], config: TrainConfig) -> float:
    if not samples:
        raise DataError("validation fold is empty")
    total = 0.0
    for s in samples:
        total += _loss_for(model, [s], config, training=False, rng=None).item()
    return total / len(samples)


def train_fold(samples: list[tuple[str, PreparedSample]], config: TrainConfig,
               fold_index: int, out_dir, log_fh=None) -> FoldResult:
    """Train one fold to completion and keep the best-validation checkpoint.

    ``samples`` pairs each prepared sample with its source case id; the
    fold plan splits by case so variants never straddle folds.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    case_ids = sorted({cid for cid, _ in samples})
    plan = kfold_split(case_ids, config.folds, config.seed)
    if not 0 <= fold_index < config.folds:
        raise ConfigError(f"fold_index {fold_index} out of range for {config.folds} folds")
    val_cases = set(plan.folds[fold_index])
    train_set = [s for cid, s in samples if cid not in val_cases]
    val_set = [s for cid, s in samples if cid in val_cases]
    if not train_set or not val_set:
        raise DataError(f"fold {fold_index} leaves an empty split "
                        f"({len(train_set)} train / {len(val_set)} val)")

    model = build_unet(
        UNetConfig(base_channels=config.base_channels, dropout_rate=config.dropout_rate),
        make_rng(config.seed, "init", fold_index))
    opt = Adam(model.param_tensors(), lr=config.lr, betas=(config.beta1, config.beta2))

    ckpt_path = out_dir / f"fold{fold_index}-best.vxpt"
    best = float("inf")
    best_epoch = -1
    history: list[dict] = []

    for epoch in range(config.epochs):
        started = time.monotonic()
        order = make_rng(config.seed, "shuffle", fold_index, epoch).permutation(len(train_set))
        epoch_total = 0.0
        for step_index, start in enumerate(range(0, len(order), config.batch_size)):
            batch = [train_set[i] for i in order[start:start + config.batch_size]]
            drng = make_rng(config.seed, "dropout", fold_index, epoch, step_index)
            loss = _loss_for(model, batch, config, training=True, rng=drng)
            value = loss.item()
            if not np.isfinite(value):
                raise NumericError(
                    f"fold {fold_index} epoch {epoch}: non-finite loss {value} "
                    f"on case(s) {[s.case_id for s in batch]}")
            model.zero_grad()
            loss.backward()
            opt.step()
            epoch_total += value * len(batch)
        train_loss = epoch_total / len(train_set)
        val_loss = validation_loss(model, val_set, config)
        if not np.isfinite(val_loss):
            raise NumericError(f"fold {fold_index} epoch {epoch}: non-finite validation loss")

        record = {"fold": fold_index, "epoch": epoch, "train_loss": train_loss,
                  "val_loss": val_loss, "seconds": round(time.monotonic() - started, 3)}
        history.append(record)
        if log_fh is not None:
            log_fh.write(json.dumps(record) + "\n")
            log_fh.flush()

        if val_loss < best:  # strict: ties keep the earlier checkpoint
            best = val_loss
            best_epoch = epoch
            save_checkpoint(model, {"epoch": epoch, "fold": fold_index,
                                    "val_loss": val_loss, "seed": config.seed}, ckpt_path)

    return FoldResult(fold=fold_index, best_epoch=best_epoch, best_val_loss=best,
                      checkpoint_path=str(ckpt_path), history=history)


# -- inference ---------------------------------------------------------------------


def infer_case(models: UNet | list[UNet], volume: Volume, combined: MaskVolume,
               crop_dims) -> Volume:
    """Predict the masked region and stitch it into the given volume.

    Accepts the ground-truth scan or an already-voided one: voiding is
    idempotent, so it is always applied first. With several models the
    signed-unit predictions are averaged before denormalization. Voxels
    outside the mask pass through bit for bit.
    """
    if isinstance(models, UNet):
        models = [models]
    if not models:
        raise DataError("infer_case needs at least one model")
    if volume.dims != combined.dims:
        raise DataError(f"volume dims {volume.dims} and mask dims {combined.dims} disagree")

    voided = void_image(volume, combined)
    normalized, vmax = normalize_two_stage(voided)
    spec = make_crop_spec(volume.dims, crop_dims)
    cropped, _ = crop_center(normalized, crop_dims)
    mask_c = crop_mask(combined, spec)

    x = Tensor(cropped.voxels[None, None])
    m = Tensor(mask_c.bits[None, None].astype(np.float32))
    acc: np.ndarray | None = None
    for model in models:
        pred = model.forward(x, m, training=False).data[0, 0]
        acc = pred if acc is None else acc + pred
    mean_pred = acc / np.float32(len(models))
    clipped = np.clip(mean_pred, -1.0, 1.0)
    raw = denormalize(clipped, vmax)
    return stitch(volume, Volume(raw), mask_c, spec)
