"""Tracer classification (FDG vs PSMA) from PET maximum-intensity
projections: one small residual conv encoder per view (coronal, sagittal),
then a two-layer perceptron on the concatenated features. Trained in two
phases; the perceptron phase keeps the backbones frozen."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .network import CheckpointError, read_checkpoint, save_checkpoint
from .volumes import ImageGrid, Modality, ScalarVolume

MIP_SIZE = (128, 64)  # (z, lateral) input resolution fed to the encoders

FDG = "FDG"
PSMA = "PSMA"
_LABEL_TO_INT = {PSMA: 0, FDG: 1}


@dataclass(frozen=True, eq=False)
class MIPPair:
    """Coronal (max over y -> (z, x)) and sagittal (max over x -> (z, y))
    projections of one PET volume."""

    coronal: np.ndarray
    sagittal: np.ndarray
    source_grid: ImageGrid

    def __post_init__(self):
        nz, ny, nx = self.source_grid.shape
        if self.coronal.shape != (nz, nx):
            raise ValueError(f"coronal shape {self.coronal.shape} != ({nz},{nx})")
        if self.sagittal.shape != (nz, ny):
            raise ValueError(f"sagittal shape {self.sagittal.shape} != ({nz},{ny})")


@dataclass(frozen=True)
class TracerPrediction:
    label: str
    confidence: float  # sigmoid output, P(FDG)

    def __post_init__(self):
        if self.label not in (FDG, PSMA):
            raise ValueError(f"label must be FDG or PSMA, got {self.label!r}")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError("confidence must be in [0, 1]")


def compute_mip(pet: ScalarVolume, axis: str) -> np.ndarray:
    """Per-pixel maximum along the projection axis."""
    if pet.modality != Modality.PET_SUV:
        warnings.warn(f"computing MIP of a {pet.modality.value} volume",
                      stacklevel=2)
    if axis == "coronal":
        return pet.values.max(axis=1)
    if axis == "sagittal":
        return pet.values.max(axis=2)
    raise ValueError(f"axis must be 'coronal' or 'sagittal', got {axis!r}")


def mip_pair(pet: ScalarVolume) -> MIPPair:
    return MIPPair(compute_mip(pet, "coronal"), compute_mip(pet, "sagittal"),
                   pet.grid)


def _prepare_view(img: np.ndarray) -> torch.Tensor:
    """Min-max scale to [0,1] and bilinearly resize to the fixed input."""
    t = torch.from_numpy(np.ascontiguousarray(img, dtype=np.float32))
    lo, hi = float(t.min()), float(t.max())
    if hi > lo:
        t = (t - lo) / (hi - lo)
    else:
        t = torch.zeros_like(t)
    t = F.interpolate(t[None, None], size=MIP_SIZE, mode="bilinear",
                      align_corners=False)
    return t[0]


class _ResBlock2d(nn.Module):
    def __init__(self, in_ch, out_ch, stride):
        super().__init__()
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, stride=stride, padding=1)
        self.norm1 = nn.InstanceNorm2d(out_ch, affine=True)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.norm2 = nn.InstanceNorm2d(out_ch, affine=True)
        self.skip = nn.Sequential(nn.Conv2d(in_ch, out_ch, 1, stride=stride),
                                  nn.InstanceNorm2d(out_ch, affine=True))
        self.act = nn.LeakyReLU(0.01, inplace=True)

    def forward(self, x):
        h = self.act(self.norm1(self.conv1(x)))
        h = self.norm2(self.conv2(h))
        return self.act(h + self.skip(x))


class _ViewEncoder(nn.Module):
    """Tiny residual encoder: 1 -> 8 -> 16 -> 32 features, global pooling."""

    feature_dim = 32

    def __init__(self):
        super().__init__()
        self.blocks = nn.Sequential(
            _ResBlock2d(1, 8, stride=2),
            _ResBlock2d(8, 16, stride=2),
            _ResBlock2d(16, 32, stride=2),
        )
        self.pool = nn.AdaptiveAvgPool2d(1)

    def forward(self, x):
        return self.pool(self.blocks(x)).flatten(1)


class TracerClassifier(nn.Module):
    """Two per-view encoders with auxiliary heads (phase 1) and a fusion
    perceptron on the concatenated features (phase 2)."""

    def __init__(self):
        super().__init__()
        self.coronal_encoder = _ViewEncoder()
        self.sagittal_encoder = _ViewEncoder()
        dim = _ViewEncoder.feature_dim
        self.coronal_aux = nn.Linear(dim, 1)
        self.sagittal_aux = nn.Linear(dim, 1)
        self.mlp = nn.Sequential(nn.Linear(2 * dim, 32), nn.LeakyReLU(0.01),
                                 nn.Linear(32, 1))
        # minimal config so the shared checkpoint container stays self-describing
        self.cfg = _ClassifierCfg()

    def features(self, coronal, sagittal):
        return self.coronal_encoder(coronal), self.sagittal_encoder(sagittal)

    def forward(self, coronal, sagittal) -> torch.Tensor:
        fc, fs = self.features(coronal, sagittal)
        return self.mlp(torch.cat([fc, fs], dim=1)).squeeze(-1)


class _ClassifierCfg:
    def to_dict(self):
        return {"kind": "tracer-classifier", "mip_size": list(MIP_SIZE)}


def classify_tracer(mips: MIPPair, model: TracerClassifier) -> TracerPrediction:
    """Sigmoid confidence = P(FDG); label is FDG iff confidence >= 0.5."""
    model.eval()
    with torch.no_grad():
        cor = _prepare_view(mips.coronal)[None]
        sag = _prepare_view(mips.sagittal)[None]
        logit = model(cor, sag)
        conf = float(torch.sigmoid(logit)[0])
    if not np.isfinite(conf):
        raise ValueError("classifier produced a non-finite confidence")
    return TracerPrediction(FDG if conf >= 0.5 else PSMA, conf)


@dataclass
class ClassifierTrainResult:
    model: TracerClassifier
    val_accuracy: float | None
    epoch_losses: list[float]


def _batches(tensors, labels, batch_size, rng):
    order = rng.permutation(len(labels))
    for start in range(0, len(order), batch_size):
        idx = order[start:start + batch_size]
        yield (tensors[0][idx], tensors[1][idx], labels[idx])


def train_classifier(dataset, epochs: int = 30, seed: int = 0,
                     val_fraction: float = 0.0, two_phase: bool = True,
                     batch_size: int = 8,
                     lr: float = 3e-3) -> ClassifierTrainResult:
    """Train on (MIPPair, label) pairs, label in {"FDG", "PSMA"}.

    two_phase: backbones train with per-view auxiliary heads first, then the
    perceptron trains alone on frozen backbones. val_fraction > 0 holds out
    a tail split and reports its accuracy.
    """
    pairs = [(m, label) for m, label in dataset]
    labels_present = {label for _, label in pairs}
    if labels_present != {FDG, PSMA}:
        raise ValueError(f"need both tracer classes, got {sorted(labels_present)}")

    rng = np.random.default_rng(seed)
    torch.manual_seed(seed)
    order = rng.permutation(len(pairs))
    n_val = int(round(len(pairs) * val_fraction))
    val_idx = set(order[:n_val].tolist()) if n_val else set()

    cor = torch.stack([_prepare_view(m.coronal) for m, _ in pairs])
    sag = torch.stack([_prepare_view(m.sagittal) for m, _ in pairs])
    y = torch.tensor([float(_LABEL_TO_INT[label]) for _, label in pairs])

    train_sel = np.array([i for i in range(len(pairs)) if i not in val_idx])
    tensors = (cor[train_sel], sag[train_sel])
    y_train = y[train_sel]

    model = TracerClassifier()
    epoch_losses = []

    def run_phase(params, n_epochs, loss_fn):
        opt = torch.optim.Adam(params, lr=lr)
        for _ in range(n_epochs):
            total, count = 0.0, 0
            for bc, bs, by in _batches(tensors, y_train, batch_size, rng):
                opt.zero_grad()
                loss = loss_fn(bc, bs, by)
                loss.backward()
                opt.step()
                total += float(loss.detach())
                count += 1
            epoch_losses.append(total / max(count, 1))

    bce = nn.BCEWithLogitsLoss()
    if two_phase:
        def aux_loss(bc, bs, by):
            fc, fs = model.features(bc, bs)
            return (bce(model.coronal_aux(fc).squeeze(-1), by)
                    + bce(model.sagittal_aux(fs).squeeze(-1), by))

        phase1 = max(1, epochs // 2)
        run_phase(list(model.coronal_encoder.parameters())
                  + list(model.sagittal_encoder.parameters())
                  + list(model.coronal_aux.parameters())
                  + list(model.sagittal_aux.parameters()),
                  phase1, aux_loss)
        for p in (*model.coronal_encoder.parameters(),
                  *model.sagittal_encoder.parameters()):
            p.requires_grad_(False)
        model.coronal_encoder.eval()
        model.sagittal_encoder.eval()
        run_phase(model.mlp.parameters(), epochs - phase1,
                  lambda bc, bs, by: bce(model(bc, bs), by))
        for p in (*model.coronal_encoder.parameters(),
                  *model.sagittal_encoder.parameters()):
            p.requires_grad_(True)
    else:
        run_phase(model.parameters(), epochs,
                  lambda bc, bs, by: bce(model(bc, bs), by))

    val_accuracy = None
    if val_idx:
        model.eval()
        sel = sorted(val_idx)
        with torch.no_grad():
            logits = model(cor[sel], sag[sel])
            pred = (torch.sigmoid(logits) >= 0.5).float()
        val_accuracy = float((pred == y[sel]).float().mean())
    return ClassifierTrainResult(model=model, val_accuracy=val_accuracy,
                                 epoch_losses=epoch_losses)


def save_classifier(model: TracerClassifier, path) -> None:
    save_checkpoint(model, path, config=model.cfg.to_dict())


def load_classifier(path) -> TracerClassifier:
    meta, state = read_checkpoint(path)
    if meta.get("config", {}).get("kind") != "tracer-classifier":
        raise CheckpointError(f"{path} is not a tracer-classifier checkpoint")
    model = TracerClassifier()
    model.load_state_dict({k: torch.from_numpy(np.ascontiguousarray(v))
                           for k, v in state.items()})
    model.eval()
    return model
