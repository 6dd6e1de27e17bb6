"""Volume data model: grids, scalar/label volumes, normalization, resampling,
and the 4-channel network input assembly.

All arrays use (z, y, x) index order with z the cranio-caudal axis. Volumes
are immutable once constructed (arrays are marked read-only), so they can be
shared freely across threads; every operation here returns a new volume.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
from scipy import ndimage

from .nifti import read_nifti, write_nifti

# HU threshold separating body from surrounding air when pooling CT
# foreground statistics.
BODY_THRESHOLD_HU = -500.0

CHANNEL_NAMES = ("CT", "PET", "FG_CLICKS", "BG_CLICKS")


class Modality(str, Enum):
    CT_HU = "CT_HU"
    PET_SUV = "PET_SUV"
    GUIDANCE = "GUIDANCE"
    NORMALIZED = "NORMALIZED"


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class ImageGrid:
    """Voxel lattice geometry: shape in voxels, spacing and origin in mm."""

    shape: tuple[int, int, int]
    spacing: tuple[float, float, float]
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "shape", tuple(int(s) for s in self.shape))
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))
        object.__setattr__(self, "origin", tuple(float(o) for o in self.origin))
        if len(self.shape) != 3 or any(s < 1 for s in self.shape):
            raise ValueError(f"shape must be 3 positive ints, got {self.shape}")
        if len(self.spacing) != 3 or any(s <= 0 for s in self.spacing):
            raise ValueError(f"spacing must be 3 positive reals, got {self.spacing}")
        if len(self.origin) != 3:
            raise ValueError(f"origin must have 3 entries, got {self.origin}")

    @property
    def voxel_volume_ml(self) -> float:
        sz, sy, sx = self.spacing
        return sz * sy * sx / 1000.0

    def contains(self, pos) -> bool:
        return all(0 <= int(p) < s for p, s in zip(pos, self.shape))


@dataclass(frozen=True, eq=False)
class ScalarVolume:
    """A real-valued volume tagged with its acquisition/processing modality."""

    grid: ImageGrid
    values: np.ndarray
    modality: Modality

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float32)
        if values.shape != self.grid.shape:
            raise ValueError(
                f"values shape {values.shape} != grid shape {self.grid.shape}"
            )
        if not np.all(np.isfinite(values)):
            raise ValueError("volume contains non-finite values")
        if self.modality == Modality.PET_SUV and values.min() < 0:
            raise ValueError("PET_SUV values must be >= 0")
        if self.modality == Modality.GUIDANCE and (
            values.min() < 0 or values.max() > 1
        ):
            raise ValueError("GUIDANCE values must lie in [0, 1]")
        object.__setattr__(self, "values", _freeze(values))


@dataclass(frozen=True, eq=False)
class LabelVolume:
    """Integer label volume with a label-id -> name schema; 0 is background."""

    grid: ImageGrid
    labels: np.ndarray
    schema: dict[int, str] = field(default_factory=dict)

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if not np.issubdtype(labels.dtype, np.integer):
            if not np.all(labels == np.round(labels)):
                raise ValueError("labels must be integers")
            labels = labels.astype(np.int32)
        labels = labels.astype(np.int32, copy=False)
        if labels.shape != self.grid.shape:
            raise ValueError(
                f"labels shape {labels.shape} != grid shape {self.grid.shape}"
            )
        if labels.min() < 0:
            raise ValueError("labels must be non-negative")
        schema = dict(self.schema)
        schema.setdefault(0, "background")
        if schema[0] != "background":
            raise ValueError("label 0 must map to 'background'")
        present = np.unique(labels)
        missing = [int(v) for v in present if int(v) not in schema]
        if missing:
            raise ValueError(f"labels {missing} missing from schema")
        object.__setattr__(self, "schema", schema)
        object.__setattr__(self, "labels", _freeze(labels))

    def foreground(self) -> np.ndarray:
        return self.labels > 0


@dataclass(frozen=True, eq=False)
class MultiChannelVolume:
    """The fixed-order [CT, PET, FG_CLICKS, BG_CLICKS] network input."""

    grid: ImageGrid
    channels: tuple[np.ndarray, ...]
    channel_names: tuple[str, ...] = CHANNEL_NAMES

    def __post_init__(self):
        if tuple(self.channel_names) != CHANNEL_NAMES:
            raise ValueError(f"channel order must be {CHANNEL_NAMES}")
        if len(self.channels) != 4:
            raise ValueError(f"expected 4 channels, got {len(self.channels)}")
        frozen = []
        for name, ch in zip(CHANNEL_NAMES, self.channels):
            ch = np.asarray(ch, dtype=np.float32)
            if ch.shape != self.grid.shape:
                raise ValueError(f"channel {name} shape {ch.shape} != grid shape")
            frozen.append(_freeze(ch))
        object.__setattr__(self, "channels", tuple(frozen))
        object.__setattr__(self, "channel_names", CHANNEL_NAMES)

    def channel(self, name: str) -> np.ndarray:
        return self.channels[CHANNEL_NAMES.index(name)]

    def as_array(self) -> np.ndarray:
        """Stack to a (4, z, y, x) float32 array (copies)."""
        return np.stack(self.channels).astype(np.float32)


@dataclass(frozen=True)
class DatasetFingerprint:
    """Pooled CT intensity statistics used for clip-then-normalize."""

    ct_clip_low: float
    ct_clip_high: float
    ct_mean: float
    ct_std: float

    def __post_init__(self):
        if not self.ct_clip_low < self.ct_clip_high:
            raise ValueError("ct_clip_low must be < ct_clip_high")
        if self.ct_std <= 0:
            raise ValueError("degenerate std: ct_std must be > 0")

    def to_dict(self) -> dict:
        return {
            "ct_clip_low": self.ct_clip_low,
            "ct_clip_high": self.ct_clip_high,
            "ct_mean": self.ct_mean,
            "ct_std": self.ct_std,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetFingerprint":
        return cls(**{k: float(d[k]) for k in
                      ("ct_clip_low", "ct_clip_high", "ct_mean", "ct_std")})


def load_volume(path, modality: Modality | None = None,
                schema: dict[int, str] | None = None):
    """Load a NIfTI volume as ScalarVolume (modality given) or LabelVolume.

    The file carries no modality, so the caller states its intent: pass a
    Modality for scalar data, or None to interpret the voxels as integer
    labels (a schema is synthesized when not supplied).
    """
    values, spacing, origin = read_nifti(path)
    grid = ImageGrid(values.shape, spacing, origin)
    if not np.all(np.isfinite(values)):
        raise ValueError(f"{path}: volume contains non-finite values")
    if modality is not None:
        return ScalarVolume(grid, values.astype(np.float32), Modality(modality))
    labels = np.asarray(values)
    if not np.issubdtype(labels.dtype, np.integer):
        if not np.all(labels == np.round(labels)):
            raise ValueError(f"{path}: label volume has non-integer voxels")
        labels = labels.astype(np.int32)
    if schema is None:
        schema = {int(v): ("background" if v == 0 else f"label_{int(v)}")
                  for v in np.unique(labels)}
    return LabelVolume(grid, labels, schema)


def save_volume(vol, path) -> None:
    """Write a ScalarVolume (float32) or LabelVolume (int32) to NIfTI."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(vol, LabelVolume):
        write_nifti(path, vol.labels.astype(np.int32), vol.grid.spacing,
                    vol.grid.origin)
    elif isinstance(vol, ScalarVolume):
        write_nifti(path, vol.values.astype(np.float32), vol.grid.spacing,
                    vol.grid.origin)
    else:
        raise TypeError(f"cannot save {type(vol).__name__}")


def compute_fingerprint(ct_volumes, low_pct: float = 0.5,
                        high_pct: float = 99.5) -> DatasetFingerprint:
    """Pool body-foreground CT voxels (> -500 HU) across volumes and compute
    percentile clip bounds plus mean/std of the clipped pool."""
    if not ct_volumes:
        raise ValueError("need at least one CT volume")
    pooled = []
    for vol in ct_volumes:
        vals = vol.values
        pooled.append(vals[vals > BODY_THRESHOLD_HU])
    pooled = np.concatenate(pooled)
    if pooled.size == 0:
        raise ValueError("empty foreground: no voxels above body threshold")
    low = float(np.percentile(pooled, low_pct))
    high = float(np.percentile(pooled, high_pct))
    clipped = np.clip(pooled, low, high)
    mean = float(clipped.mean())
    std = float(clipped.std())
    if std <= 0:
        raise ValueError("degenerate std: pooled CT foreground is constant")
    return DatasetFingerprint(low, high, mean, std)


def normalize_ct(vol: ScalarVolume, fp: DatasetFingerprint) -> ScalarVolume:
    """Clip to the fingerprint bounds, then (x - mean) / std."""
    if vol.modality != Modality.CT_HU:
        raise ValueError(f"normalize_ct expects CT_HU, got {vol.modality}")
    if fp.ct_std <= 0:
        raise ValueError("degenerate std in fingerprint")
    out = np.clip(vol.values, fp.ct_clip_low, fp.ct_clip_high)
    out = (out - fp.ct_mean) / fp.ct_std
    return ScalarVolume(vol.grid, out, Modality.NORMALIZED)


def zscore_array(arr: np.ndarray) -> np.ndarray:
    """(x - mean) / std over all entries; constant input -> zeros.

    The degenerate rule matters: an all-zero click channel is a legal
    0-click input and must stay all-zero.
    """
    vals = np.asarray(arr, dtype=np.float64)
    std = float(vals.std())
    if std == 0.0:
        return np.zeros(vals.shape, dtype=np.float32)
    return ((vals - vals.mean()) / std).astype(np.float32)


def zscore_normalize(vol: ScalarVolume) -> ScalarVolume:
    """Per-volume z-score over all voxels; constant input -> all zeros."""
    return ScalarVolume(vol.grid, zscore_array(vol.values), Modality.NORMALIZED)


def resample_to_grid(vol, target: ImageGrid, mode: str = "trilinear"):
    """Resample a volume onto a target grid via physical coordinates.

    mode 'trilinear' for scalars, 'nearest' required for labels. An identity
    target returns a value-identical copy.
    """
    if mode not in ("trilinear", "nearest"):
        raise ValueError(f"unknown resample mode {mode!r}")
    if isinstance(vol, LabelVolume):
        if mode != "nearest":
            raise ValueError("label volumes must use nearest resampling")
        source = vol.labels
        source_grid = vol.grid
    else:
        source = vol.values
        source_grid = vol.grid

    if (target.shape == source_grid.shape
            and np.allclose(target.spacing, source_grid.spacing)
            and np.allclose(target.origin, source_grid.origin)):
        out = source.copy()
    else:
        coords = []
        for ax in range(3):
            idx = np.arange(target.shape[ax], dtype=np.float64)
            phys = target.origin[ax] + idx * target.spacing[ax]
            coords.append((phys - source_grid.origin[ax]) / source_grid.spacing[ax])
        zz, yy, xx = np.meshgrid(*coords, indexing="ij")
        order = 0 if mode == "nearest" else 1
        out = ndimage.map_coordinates(
            source.astype(np.float32 if order else source.dtype),
            np.stack([zz, yy, xx]), order=order, mode="nearest")

    if isinstance(vol, LabelVolume):
        return LabelVolume(target, out.astype(np.int32), vol.schema)
    return ScalarVolume(target, out, vol.modality)


def stack_channels(ct_norm: ScalarVolume, pet_norm: ScalarVolume,
                   fg_map: ScalarVolume, bg_map: ScalarVolume) -> MultiChannelVolume:
    """Assemble the fixed-order 4-channel input; all inputs share one grid."""
    grid = ct_norm.grid
    for name, vol in (("PET", pet_norm), ("FG_CLICKS", fg_map),
                      ("BG_CLICKS", bg_map)):
        if vol.grid != grid:
            raise ValueError(f"channel {name} grid mismatch: "
                             f"{vol.grid.shape} vs {grid.shape}")
    return MultiChannelVolume(
        grid, (ct_norm.values, pet_norm.values, fg_map.values, bg_map.values))
