"""Click guidance: simulated expert clicks, Gaussian heatmap rendering, and
the click-count sampling curricula used during training.

Clicks live in voxel coordinates on a specific grid. Foreground clicks mark
missed lesion tissue, background clicks mark false-positive regions; at most
10 of each kind per case.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .volumes import ImageGrid, LabelVolume, Modality, ScalarVolume

MAX_CLICKS_PER_KIND = 10

# Background-shell bounds (mm from the lesion boundary) used when clicks are
# simulated without a prediction to correct.
SHELL_INNER_MM = 5.0
SHELL_OUTER_MM = 15.0

FG = "FG"
BG = "BG"
_KINDS = (FG, BG)


@dataclass(frozen=True)
class Click:
    position: tuple[int, int, int]  # (z, y, x) voxel index
    kind: str
    ordinal: int

    def __post_init__(self):
        object.__setattr__(self, "position", tuple(int(p) for p in self.position))
        if self.kind not in _KINDS:
            raise ValueError(f"click kind must be FG or BG, got {self.kind!r}")
        if self.ordinal < 0:
            raise ValueError("ordinal must be >= 0")

    def to_json(self) -> dict:
        return {"pos": list(self.position), "kind": self.kind,
                "ordinal": self.ordinal}

    @classmethod
    def from_json(cls, d: dict) -> "Click":
        return cls(tuple(d["pos"]), d["kind"], int(d["ordinal"]))


@dataclass
class ClickList:
    """Ordered FG/BG clicks on one grid, plus simulation warnings."""

    clicks: list[Click]
    grid: ImageGrid
    warnings: list[str] = field(default_factory=list)

    def __post_init__(self):
        for kind in _KINDS:
            ordinals = [c.ordinal for c in self.clicks if c.kind == kind]
            if len(ordinals) > MAX_CLICKS_PER_KIND:
                raise ValueError(f"more than {MAX_CLICKS_PER_KIND} {kind} clicks")
            if sorted(ordinals) != list(range(len(ordinals))):
                raise ValueError(f"{kind} ordinals must be contiguous from 0, "
                                 f"got {sorted(ordinals)}")
        for c in self.clicks:
            if not self.grid.contains(c.position):
                raise ValueError(f"click {c.position} outside grid "
                                 f"{self.grid.shape}")

    def of_kind(self, kind: str) -> list[Click]:
        return sorted((c for c in self.clicks if c.kind == kind),
                      key=lambda c: c.ordinal)

    def count(self, kind: str) -> int:
        return sum(1 for c in self.clicks if c.kind == kind)

    def to_json(self) -> list[dict]:
        return [c.to_json() for c in self.clicks]

    def to_json_str(self) -> str:
        return json.dumps(self.to_json())

    @classmethod
    def from_json(cls, items, grid: ImageGrid) -> "ClickList":
        if isinstance(items, str):
            items = json.loads(items)
        return cls([Click.from_json(d) for d in items], grid)


@dataclass(frozen=True)
class GuidanceConfig:
    """Gaussian rendering parameters; sigma is physical (mm), so maps are
    anisotropy-aware."""

    sigma_mm: float = 4.0
    truncation_radius_sigmas: float = 3.0

    def __post_init__(self):
        if self.sigma_mm <= 0:
            raise ValueError("sigma_mm must be > 0")
        if self.truncation_radius_sigmas < 1:
            raise ValueError("truncation_radius_sigmas must be >= 1")

    @property
    def support_radius_mm(self) -> float:
        return self.sigma_mm * self.truncation_radius_sigmas


@dataclass(frozen=True)
class SamplingDistribution:
    """Categorical distribution over click counts k = 0..10."""

    probs: tuple[float, ...]
    name: str = ""

    def __post_init__(self):
        probs = tuple(float(p) for p in self.probs)
        if len(probs) != 11:
            raise ValueError(f"need 11 probabilities, got {len(probs)}")
        if any(p < 0 for p in probs):
            raise ValueError("probabilities must be >= 0")
        if abs(sum(probs) - 1.0) > 1e-9:
            raise ValueError(f"probabilities must sum to 1, got {sum(probs)}")
        object.__setattr__(self, "probs", probs)


# The balanced curriculum's published 11-vector (k = 0..10).
V4_BALANCED_PROBS = (0.10, 0.10, 0.10, 0.08, 0.04, 0.04, 0.04, 0.04,
                     0.08, 0.08, 0.30)
# Sparse fine-tuning curriculum: only the first two masses are pinned
# (0 -> 40%, 1 -> 20%); the tail spreads the rest uniformly over 2..9.
V1_SPARSE_PROBS = (0.40, 0.20, 0.05, 0.05, 0.05, 0.05, 0.05, 0.05,
                   0.05, 0.05, 0.00)
FULL_PROBS = (0.0,) * 10 + (1.0,)

_PRESETS = {
    "FULL": FULL_PROBS,
    "V1_SPARSE": V1_SPARSE_PROBS,
    "V4_BALANCED": V4_BALANCED_PROBS,
}


def preset_distribution(name: str) -> SamplingDistribution:
    try:
        return SamplingDistribution(_PRESETS[name], name=name)
    except KeyError:
        raise ValueError(f"unknown curriculum preset {name!r}; "
                         f"choose from {sorted(_PRESETS)}") from None


def sample_click_count(dist: SamplingDistribution, rng: np.random.Generator) -> int:
    return int(rng.choice(11, p=np.asarray(dist.probs)))


def take_first_k(clicks: ClickList, k: int) -> ClickList:
    """Keep clicks with ordinal < k of each kind, order preserved."""
    if not 0 <= k <= MAX_CLICKS_PER_KIND:
        raise ValueError(f"k must be in 0..{MAX_CLICKS_PER_KIND}, got {k}")
    kept = [c for c in clicks.clicks if c.ordinal < k]
    return ClickList(kept, clicks.grid, list(clicks.warnings))


def render_clicks(clicks: ClickList, kind: str,
                  cfg: GuidanceConfig | None = None) -> ScalarVolume:
    """Render clicks of one kind as truncated 3D Gaussians, peak exactly 1.0
    at each click voxel, combined by voxelwise maximum."""
    if kind not in _KINDS:
        raise ValueError(f"kind must be FG or BG, got {kind!r}")
    cfg = cfg or GuidanceConfig()
    grid = clicks.grid
    out = np.zeros(grid.shape, dtype=np.float32)
    spacing = np.asarray(grid.spacing)
    radius_mm = cfg.support_radius_mm
    radius_vox = np.ceil(radius_mm / spacing).astype(int)

    for click in clicks.of_kind(kind):
        pos = click.position
        if not grid.contains(pos):
            raise ValueError(f"click {pos} outside grid {grid.shape}")
        los = [max(0, pos[a] - radius_vox[a]) for a in range(3)]
        his = [min(grid.shape[a], pos[a] + radius_vox[a] + 1) for a in range(3)]
        offsets = [
            (np.arange(los[a], his[a]) - pos[a]) * spacing[a] for a in range(3)
        ]
        dz, dy, dx = np.meshgrid(*offsets, indexing="ij")
        d2 = dz * dz + dy * dy + dx * dx
        g = np.exp(-d2 / (2.0 * cfg.sigma_mm**2)).astype(np.float32)
        g[d2 > radius_mm**2] = 0.0
        window = (slice(los[0], his[0]), slice(los[1], his[1]),
                  slice(los[2], his[2]))
        np.maximum(out[window], g, out=out[window])
    return ScalarVolume(grid, out, Modality.GUIDANCE)


def _largest_component(mask: np.ndarray) -> np.ndarray | None:
    """26-connected component of maximal size; size ties resolved by the
    component whose first voxel (C order) comes first."""
    structure = ndimage.generate_binary_structure(3, 3)
    lab, n = ndimage.label(mask, structure=structure)
    if n == 0:
        return None
    flat = lab.ravel()
    counts = np.bincount(flat)
    counts[0] = 0
    best_size = counts.max()
    candidates = np.flatnonzero(counts == best_size)
    if len(candidates) == 1:
        return lab == candidates[0]
    firsts = {int(c): np.argmax(flat == c) for c in candidates}
    winner = min(firsts, key=lambda c: firsts[c])
    return lab == winner


def _deepest_voxel(region: np.ndarray, spacing) -> tuple[int, int, int]:
    """EDT-maximal voxel of a boolean region, physical distances; ties break
    to the lowest (z, y, x) index.

    The region is zero-padded by one voxel so the transform measures the
    distance to the region's true complement rather than being inflated
    where the region touches the array border.
    """
    padded = np.pad(region, 1)
    edt = ndimage.distance_transform_edt(padded, sampling=spacing)
    edt = edt[1:-1, 1:-1, 1:-1]
    best = edt.max()
    idx = int(np.argmax(edt.ravel() >= best - 1e-12))
    return tuple(int(v) for v in np.unravel_index(idx, region.shape))


def _support_ball(center, radius_mm, grid: ImageGrid, out: np.ndarray) -> None:
    spacing = np.asarray(grid.spacing)
    radius_vox = np.ceil(radius_mm / spacing).astype(int)
    los = [max(0, center[a] - radius_vox[a]) for a in range(3)]
    his = [min(grid.shape[a], center[a] + radius_vox[a] + 1) for a in range(3)]
    offsets = [(np.arange(los[a], his[a]) - center[a]) * spacing[a]
               for a in range(3)]
    dz, dy, dx = np.meshgrid(*offsets, indexing="ij")
    ball = dz * dz + dy * dy + dx * dx <= radius_mm**2
    window = (slice(los[0], his[0]), slice(los[1], his[1]),
              slice(los[2], his[2]))
    out[window] |= ball


def simulate_clicks(gt: LabelVolume, prediction: LabelVolume | None,
                    n_fg: int, n_bg: int, rng_seed: int = 0,
                    cfg: GuidanceConfig | None = None) -> ClickList:
    """Simulate expert clicks against ground truth (and optionally a current
    prediction).

    FG clicks target the largest connected component of the remaining error
    foreground (GT minus prediction minus already-clicked Gaussian support),
    placed at its EDT-deepest voxel. BG clicks mirror this on the largest
    false-positive component when a prediction exists, otherwise on a 5-15 mm
    background shell around the lesion boundary. The procedure is
    deterministic (ties break lexicographically); rng_seed is part of the
    contract but does not currently influence placement.
    """
    if not (0 <= n_fg <= MAX_CLICKS_PER_KIND
            and 0 <= n_bg <= MAX_CLICKS_PER_KIND):
        raise ValueError("click counts must be in 0..10")
    cfg = cfg or GuidanceConfig()
    grid = gt.grid
    spacing = grid.spacing
    fg_mask = gt.foreground()
    pred_mask = None
    if prediction is not None:
        if prediction.grid.shape != grid.shape:
            raise ValueError("prediction grid mismatch")
        pred_mask = prediction.foreground()

    clicks: list[Click] = []
    warnings: list[str] = []

    support = np.zeros(grid.shape, dtype=bool)
    for ordinal in range(n_fg):
        if not fg_mask.any():
            warnings.append(f"requested {n_fg} FG clicks but GT is empty")
            break
        region = fg_mask & ~support
        if pred_mask is not None:
            error = region & ~pred_mask
            if error.any():
                region = error
        if not region.any():
            region = fg_mask  # all interior clicked: keep sweeps well defined
        comp = _largest_component(region)
        pos = _deepest_voxel(comp, spacing)
        clicks.append(Click(pos, FG, ordinal))
        _support_ball(pos, cfg.support_radius_mm, grid, support)

    if n_bg > 0:
        # Distance from background voxels to the GT lesion boundary.
        shell = None
        if fg_mask.any():
            dist_to_gt = ndimage.distance_transform_edt(~fg_mask,
                                                        sampling=spacing)
            shell = (dist_to_gt >= SHELL_INNER_MM) & (dist_to_gt <= SHELL_OUTER_MM)
        support_bg = np.zeros(grid.shape, dtype=bool)
        for ordinal in range(n_bg):
            region = None
            if pred_mask is not None:
                fp = pred_mask & ~fg_mask & ~support_bg
                if fp.any():
                    region = fp
            if region is None and shell is not None:
                candidate = shell & ~support_bg
                region = candidate if candidate.any() else shell
            if region is None or not region.any():
                warnings.append(
                    f"requested {n_bg} BG clicks but no background target "
                    f"(no false positives and no boundary shell)")
                break
            comp = _largest_component(region)
            pos = _deepest_voxel(comp, spacing)
            clicks.append(Click(pos, BG, ordinal))
            _support_ball(pos, cfg.support_radius_mm, grid, support_bg)

    return ClickList(clicks, grid, warnings)


def half_maximum_distance_mm(sigma_mm: float) -> float:
    """Physical distance at which a rendered Gaussian falls to 0.5."""
    return sigma_mm * math.sqrt(2.0 * math.log(2.0))
