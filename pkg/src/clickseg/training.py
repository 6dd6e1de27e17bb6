"""Training loop: curriculum-driven click guidance, FG-biased patch
sampling, a reduced augmentation set (flips, 90-degree rotations, Gaussian
noise, gamma), SGD with polynomial LR decay, and per-epoch loss logging."""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .data import LoadedCase
from .guidance import (
    BG,
    FG,
    ClickList,
    GuidanceConfig,
    SamplingDistribution,
    preset_distribution,
    render_clicks,
    sample_click_count,
    simulate_clicks,
    take_first_k,
)
from .losses import dice_ce_loss
from .network import LossWeights, save_checkpoint
from .volumes import (
    DatasetFingerprint,
    normalize_ct,
    zscore_array,
    zscore_normalize,
)


class TrainingDivergedError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int
    initial_lr: float = 1e-2
    curriculum: SamplingDistribution = field(
        default_factory=lambda: preset_distribution("V4_BALANCED"))
    seed: int = 0
    batch_size: int = 2
    steps_per_epoch: int = 40
    momentum: float = 0.99
    weight_decay: float = 3e-5
    poly_power: float = 0.9
    fg_patch_bias: float = 0.5
    loss_weights: LossWeights = field(default_factory=LossWeights)
    guidance: GuidanceConfig = field(default_factory=GuidanceConfig)
    augment: bool = True
    flip_prob: float = 0.5
    rot90: bool = True
    noise_prob: float = 0.3
    noise_sigma: float = 0.1
    gamma_prob: float = 0.3
    gamma_range: tuple[float, float] = (0.8, 1.25)

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.initial_lr <= 0:
            raise ValueError("initial_lr must be > 0")


@dataclass
class TrainingCase:
    """A case preprocessed for the loop: normalized channels plus the full
    10/10 simulated click budget to truncate per sample."""

    case_id: str
    ct_norm: np.ndarray
    pet_norm: np.ndarray
    lesion: np.ndarray  # binary uint8
    organs: np.ndarray  # int labels
    clicks: ClickList
    grid: object


def prepare_training_case(case: LoadedCase, fp: DatasetFingerprint,
                          guidance_cfg: GuidanceConfig) -> TrainingCase:
    if case.lesion_gt is None or case.organ_gt is None:
        raise ValueError(f"case {case.case_id} lacks lesion or organ labels")
    clicks = simulate_clicks(case.lesion_gt, None, 10, 10, cfg=guidance_cfg)
    return TrainingCase(
        case_id=case.case_id,
        ct_norm=normalize_ct(case.ct, fp).values,
        pet_norm=zscore_normalize(case.pet).values,
        lesion=(case.lesion_gt.labels > 0).astype(np.uint8),
        organs=case.organ_gt.labels.astype(np.int64),
        clicks=clicks,
        grid=case.grid,
    )


def assemble_training_sample(case: TrainingCase, k: int,
                             guidance_cfg: GuidanceConfig):
    """Full-volume 4-channel stack for the first k clicks of each kind.

    Returns (channels (4,z,y,x) float32, lesion uint8, organs int64). The
    guidance channels are z-scored after rendering.
    """
    kept = take_first_k(case.clicks, k)
    fg_map = render_clicks(kept, FG, guidance_cfg).values
    bg_map = render_clicks(kept, BG, guidance_cfg).values
    channels = np.stack([
        case.ct_norm,
        case.pet_norm,
        zscore_array(fg_map),
        zscore_array(bg_map),
    ]).astype(np.float32)
    return channels, case.lesion, case.organs


def _crop_patch(channels, lesion, organs, patch, fg_bias, rng):
    shape = lesion.shape
    pads = [max(0, patch[a] - shape[a]) for a in range(3)]
    if any(pads):
        pad_spec = [(0, 0)] + [(0, p) for p in pads]
        channels = np.pad(channels, pad_spec, mode="edge")
        lesion = np.pad(lesion, [(0, p) for p in pads])
        organs = np.pad(organs, [(0, p) for p in pads])
        shape = lesion.shape

    fg_idx = np.argwhere(lesion > 0)
    if len(fg_idx) > 0 and rng.random() < fg_bias:
        center = fg_idx[rng.integers(len(fg_idx))]
    else:
        center = np.array([rng.integers(s) for s in shape])
    los = [int(np.clip(center[a] - patch[a] // 2, 0, shape[a] - patch[a]))
           for a in range(3)]
    sl = tuple(slice(lo, lo + p) for lo, p in zip(los, patch))
    return (channels[(slice(None),) + sl].copy(), lesion[sl].copy(),
            organs[sl].copy())


def _augment(channels, lesion, organs, tc: TrainConfig, rng):
    for axis in range(3):
        if rng.random() < tc.flip_prob:
            channels = np.flip(channels, axis=axis + 1)
            lesion = np.flip(lesion, axis=axis)
            organs = np.flip(organs, axis=axis)
    if tc.rot90:
        k = int(rng.integers(4))
        if k:
            channels = np.rot90(channels, k=k, axes=(2, 3))
            lesion = np.rot90(lesion, k=k, axes=(1, 2))
            organs = np.rot90(organs, k=k, axes=(1, 2))
    channels = np.ascontiguousarray(channels).copy()
    lesion = np.ascontiguousarray(lesion)
    organs = np.ascontiguousarray(organs)
    # intensity augmentations touch only the image channels, never guidance
    for c in (0, 1):
        if rng.random() < tc.noise_prob:
            channels[c] += rng.normal(0.0, tc.noise_sigma,
                                      channels[c].shape).astype(np.float32)
        if rng.random() < tc.gamma_prob:
            gamma = rng.uniform(*tc.gamma_range)
            lo, hi = channels[c].min(), channels[c].max()
            if hi > lo:
                v = (channels[c] - lo) / (hi - lo)
                channels[c] = (v**gamma * (hi - lo) + lo).astype(np.float32)
    return channels, lesion, organs


@dataclass
class TrainResult:
    epoch_rows: list[dict]
    checkpoint_path: Path | None
    wall_seconds: float
    first_step_lr: float

    def save_loss_curve(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as f:
            w = csv.DictWriter(
                f, fieldnames=["epoch", "lesion_loss", "organ_loss", "total"])
            w.writeheader()
            for row in self.epoch_rows:
                w.writerow(row)


def train(cases: list[TrainingCase], net, tc: TrainConfig,
          out_dir=None) -> TrainResult:
    """Train the dual-head network on prepared cases.

    Per sample: draw k from the curriculum, render first-k guidance, crop an
    FG-biased patch, augment, step SGD under polynomial LR decay. Aborts
    with diagnostics if the loss goes non-finite.
    """
    if not cases:
        raise ValueError("empty training dataset")
    rng = np.random.default_rng(tc.seed)
    torch.manual_seed(tc.seed)
    net.train()
    patch = net.cfg.patch_size
    optimizer = torch.optim.SGD(net.parameters(), lr=tc.initial_lr,
                                momentum=tc.momentum, nesterov=True,
                                weight_decay=tc.weight_decay)
    total_steps = tc.epochs * tc.steps_per_epoch
    started = time.time()
    first_step_lr = tc.initial_lr
    epoch_rows = []
    global_step = 0
    for epoch in range(tc.epochs):
        sums = {"lesion": 0.0, "organ": 0.0, "total": 0.0}
        for _ in range(tc.steps_per_epoch):
            lr = tc.initial_lr * (1.0 - global_step / total_steps) ** tc.poly_power
            if global_step == 0:
                first_step_lr = lr
            for group in optimizer.param_groups:
                group["lr"] = lr

            batch_channels, batch_lesion, batch_organs = [], [], []
            for _ in range(tc.batch_size):
                case = cases[rng.integers(len(cases))]
                k = sample_click_count(tc.curriculum, rng)
                channels, lesion, organs = assemble_training_sample(
                    case, k, tc.guidance)
                channels, lesion, organs = _crop_patch(
                    channels, lesion, organs, patch, tc.fg_patch_bias, rng)
                if tc.augment:
                    channels, lesion, organs = _augment(
                        channels, lesion, organs, tc, rng)
                batch_channels.append(channels)
                batch_lesion.append(lesion.astype(np.int64))
                batch_organs.append(organs)

            x = torch.from_numpy(np.stack(batch_channels))
            lesion_t = torch.from_numpy(np.stack(batch_lesion))
            organ_t = torch.from_numpy(np.stack(batch_organs))

            optimizer.zero_grad()
            out = net(x)
            loss = dice_ce_loss(out, lesion_t, organ_t, tc.loss_weights)
            if not torch.isfinite(loss.total):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch} step {global_step} "
                    f"(lr={lr:.2e}, "
                    f"lesion_ce={float(loss.lesion_ce.detach()):.4g}, "
                    f"organ_ce={float(loss.organ_ce.detach()):.4g})")
            loss.total.backward()
            optimizer.step()
            global_step += 1

            lw = tc.loss_weights
            sums["lesion"] += float(lw.dice_w * loss.lesion_dice.detach()
                                    + lw.ce_w * loss.lesion_ce.detach())
            sums["organ"] += float(lw.dice_w * loss.organ_dice.detach()
                                   + lw.ce_w * loss.organ_ce.detach())
            sums["total"] += float(loss.total.detach())

        n = tc.steps_per_epoch
        epoch_rows.append({
            "epoch": epoch,
            "lesion_loss": sums["lesion"] / n,
            "organ_loss": sums["organ"] / n,
            "total": sums["total"] / n,
        })

    checkpoint_path = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        checkpoint_path = out_dir / "checkpoint_final.npz"
        save_checkpoint(net, checkpoint_path,
                        extra={"epochs": tc.epochs, "seed": tc.seed})
        TrainResult(epoch_rows, checkpoint_path, 0.0,
                    first_step_lr).save_loss_curve(out_dir / "loss_curve.csv")
    return TrainResult(epoch_rows, checkpoint_path,
                       time.time() - started, first_step_lr)
