"""Desk-scale residual-encoder 3D U-Net with parallel lesion and organ
heads, plus the checkpoint container and single-channel stem expansion used
when starting from anatomical-prior weights."""

from __future__ import annotations

import json
import zipfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .organs import ORGAN_SCHEMA

CHECKPOINT_FORMAT = "clickseg-checkpoint-v1"


@dataclass(frozen=True)
class NetworkConfig:
    in_channels: int = 4
    n_stages: int = 4
    features_per_stage: tuple[int, ...] = (16, 32, 64, 128)
    patch_size: tuple[int, int, int] = (64, 64, 64)
    lesion_classes: int = 2
    organ_classes: int = len(ORGAN_SCHEMA) + 1

    def __post_init__(self):
        object.__setattr__(self, "features_per_stage",
                           tuple(int(f) for f in self.features_per_stage))
        object.__setattr__(self, "patch_size",
                           tuple(int(p) for p in self.patch_size))
        if self.in_channels != 4:
            raise ValueError("input is always the 4-channel CT/PET/FG/BG stack")
        if len(self.features_per_stage) != self.n_stages:
            raise ValueError("features_per_stage must have n_stages entries")
        divisor = 2 ** (self.n_stages - 1)
        if any(p % divisor != 0 for p in self.patch_size):
            raise ValueError(
                f"patch size {self.patch_size} must be divisible by {divisor}")
        if self.organ_classes != len(ORGAN_SCHEMA) + 1:
            raise ValueError("organ_classes must equal the organ schema + background")

    def to_dict(self) -> dict:
        return {
            "in_channels": self.in_channels,
            "n_stages": self.n_stages,
            "features_per_stage": list(self.features_per_stage),
            "patch_size": list(self.patch_size),
            "lesion_classes": self.lesion_classes,
            "organ_classes": self.organ_classes,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        return cls(
            in_channels=int(d["in_channels"]),
            n_stages=int(d["n_stages"]),
            features_per_stage=tuple(d["features_per_stage"]),
            patch_size=tuple(d["patch_size"]),
            lesion_classes=int(d["lesion_classes"]),
            organ_classes=int(d["organ_classes"]),
        )


@dataclass
class DualHeadOutput:
    lesion_logits: torch.Tensor  # (B, lesion_classes, z, y, x)
    organ_logits: torch.Tensor  # (B, organ_classes, z, y, x)

    def __post_init__(self):
        if self.lesion_logits.shape[2:] != self.organ_logits.shape[2:]:
            raise ValueError("heads must share the spatial shape")


@dataclass(frozen=True)
class LossWeights:
    dice_w: float = 2.0
    ce_w: float = 1.0
    lesion_head_w: float = 1.0
    organ_head_w: float = 1.0

    def __post_init__(self):
        ws = (self.dice_w, self.ce_w, self.lesion_head_w, self.organ_head_w)
        if any(w < 0 for w in ws):
            raise ValueError("loss weights must be >= 0")
        if all(w == 0 for w in ws):
            raise ValueError("loss weights cannot all be zero")


def _conv_norm_act(in_ch: int, out_ch: int, stride: int = 1) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv3d(in_ch, out_ch, 3, stride=stride, padding=1, bias=True),
        nn.InstanceNorm3d(out_ch, affine=True),
        nn.LeakyReLU(0.01, inplace=True),
    )


class ResidualBlock(nn.Module):
    """Two conv-IN-lrelu layers with an additive skip (1x1x1 projection when
    channel counts differ); the first conv may downsample."""

    def __init__(self, in_ch: int, out_ch: int, stride: int = 1):
        super().__init__()
        self.conv1 = nn.Conv3d(in_ch, out_ch, 3, stride=stride, padding=1)
        self.norm1 = nn.InstanceNorm3d(out_ch, affine=True)
        self.conv2 = nn.Conv3d(out_ch, out_ch, 3, padding=1)
        self.norm2 = nn.InstanceNorm3d(out_ch, affine=True)
        self.act = nn.LeakyReLU(0.01, inplace=True)
        if stride != 1 or in_ch != out_ch:
            self.skip = nn.Sequential(
                nn.Conv3d(in_ch, out_ch, 1, stride=stride),
                nn.InstanceNorm3d(out_ch, affine=True),
            )
        else:
            self.skip = nn.Identity()

    def forward(self, x):
        out = self.act(self.norm1(self.conv1(x)))
        out = self.norm2(self.conv2(out))
        return self.act(out + self.skip(x))


class DualHeadResUNet(nn.Module):
    """Residual encoder, skip-connected decoder, two 1x1x1 output heads."""

    def __init__(self, cfg: NetworkConfig):
        super().__init__()
        self.cfg = cfg
        feats = cfg.features_per_stage

        self.stem = _conv_norm_act(cfg.in_channels, feats[0])
        self.encoder = nn.ModuleList(
            [ResidualBlock(feats[0], feats[0])] +
            [ResidualBlock(feats[i - 1], feats[i], stride=2)
             for i in range(1, cfg.n_stages)]
        )
        self.upsamples = nn.ModuleList(
            [nn.ConvTranspose3d(feats[i], feats[i - 1], 2, stride=2)
             for i in range(cfg.n_stages - 1, 0, -1)]
        )
        self.decoder = nn.ModuleList(
            [ResidualBlock(feats[i - 1] * 2, feats[i - 1])
             for i in range(cfg.n_stages - 1, 0, -1)]
        )
        self.lesion_head = nn.Conv3d(feats[0], cfg.lesion_classes, 1)
        self.organ_head = nn.Conv3d(feats[0], cfg.organ_classes, 1)

    def forward(self, x: torch.Tensor) -> DualHeadOutput:
        skips = []
        h = self.stem(x)
        for i, block in enumerate(self.encoder):
            h = block(h)
            if i < len(self.encoder) - 1:
                skips.append(h)
        for up, dec, skip in zip(self.upsamples, self.decoder,
                                 reversed(skips)):
            h = up(h)
            h = dec(torch.cat([h, skip], dim=1))
        return DualHeadOutput(self.lesion_head(h), self.organ_head(h))


def build_network(cfg: NetworkConfig) -> DualHeadResUNet:
    return DualHeadResUNet(cfg)


def parameter_count(net: nn.Module) -> int:
    return sum(p.numel() for p in net.parameters())


def _find_stem_key(state: dict) -> str:
    for key, value in state.items():
        if key.endswith("weight") and value.ndim == 5:
            return key
    raise ValueError("no 3D conv weight found in state dict")


def expand_pretrained_channels(state: dict) -> dict:
    """Adapt a single-channel stem to the 4-channel input: duplicate the
    kernel into the CT and PET slots, zero the two click-guidance slots.
    All other entries are copied unchanged."""
    stem_key = _find_stem_key(state)
    stem = state[stem_key]
    if stem.shape[1] != 1:
        raise ValueError(
            f"expected a 1-input-channel stem, got {stem.shape[1]} channels")
    if isinstance(stem, torch.Tensor):
        stem_np = stem.detach().cpu().numpy()
    else:
        stem_np = np.asarray(stem)
    out = dict(state)
    expanded = np.zeros((stem_np.shape[0], 4) + stem_np.shape[2:],
                        dtype=stem_np.dtype)
    expanded[:, 0] = stem_np[:, 0]
    expanded[:, 1] = stem_np[:, 0]
    out[stem_key] = torch.from_numpy(expanded) if isinstance(
        stem, torch.Tensor) else expanded
    return out


class CheckpointError(RuntimeError):
    pass


def save_checkpoint(net: nn.Module, path, config: dict | None = None,
                    extra: dict | None = None) -> None:
    """Write a self-describing .npz container: `__meta__` JSON plus one
    float array per state-dict entry."""
    if config is None and hasattr(net, "cfg"):
        config = net.cfg.to_dict()
    meta = {"format": CHECKPOINT_FORMAT, "config": config,
            "extra": extra or {}}
    arrays = {k: v.detach().cpu().numpy()
              for k, v in net.state_dict().items()}
    arrays["__meta__"] = np.frombuffer(
        json.dumps(meta).encode("utf-8"), dtype=np.uint8)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    # write via a handle so numpy does not append its own .npz suffix
    with open(path, "wb") as f:
        np.savez(f, **arrays)


def read_checkpoint(path) -> tuple[dict, dict]:
    """Return (meta, state_dict-of-arrays) from a checkpoint file."""
    try:
        with np.load(path, allow_pickle=False) as npz:
            if "__meta__" not in npz:
                raise CheckpointError(f"{path}: missing checkpoint metadata")
            meta = json.loads(bytes(npz["__meta__"]).decode("utf-8"))
            state = {k: npz[k] for k in npz.files if k != "__meta__"}
    except (zipfile.BadZipFile, ValueError, KeyError, OSError,
            json.JSONDecodeError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if meta.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(
            f"{path}: unsupported checkpoint format {meta.get('format')!r}")
    return meta, state


def load_checkpoint(path, net: nn.Module | None = None):
    """Load a checkpoint. With `net` given, its weights are restored in
    place (expanding a 1-channel stem to 4 channels when needed) and the net
    is returned; otherwise a network is built from the stored config."""
    meta, state = read_checkpoint(path)
    if net is None:
        cfg = NetworkConfig.from_dict(meta["config"])
        net = build_network(cfg)
    stem_key = _find_stem_key(state)
    target_state = net.state_dict()
    if stem_key in target_state:
        want = target_state[stem_key].shape[1]
        have = state[stem_key].shape[1]
        if have == 1 and want == 4:
            state = expand_pretrained_channels(state)
    tensors = {k: torch.from_numpy(np.ascontiguousarray(v))
               for k, v in state.items()}
    missing = set(target_state) - set(tensors)
    if missing:
        raise CheckpointError(f"checkpoint missing parameters: {sorted(missing)[:5]}")
    net.load_state_dict(tensors)
    return net
