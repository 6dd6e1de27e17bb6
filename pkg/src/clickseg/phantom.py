"""Synthetic multi-tracer PET/CT phantom generator.

Produces paired CT (HU) and PET (SUV) volumes with spherical lesions,
organ pseudo-labels, and tracer-characteristic uptake patterns: FDG lights
up the brain analog, PSMA the head-gland analog, kidneys and bladder are
warm-to-hot under both. Everything is deterministic under PhantomSpec.seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .organs import ORGAN_IDS, organ_label_schema
from .volumes import (
    DatasetFingerprint,
    ImageGrid,
    LabelVolume,
    Modality,
    ScalarVolume,
    compute_fingerprint,
    save_volume,
)

AIR_HU = -1000.0
SOFT_TISSUE_HU = 40.0
# Lesions are iso-dense on CT: detection must come from PET uptake and
# clicks, which is what keeps the interactive sweep informative.
LESION_HU_DELTA = 0.0
BODY_BACKGROUND_SUV = 0.7

# Ellipsoid half-axes as fractions of the physical extent per axis.
BODY_HALF_AXES = (0.48, 0.42, 0.38)

# name -> (center frac (z,y,x), half-axes frac, HU)
_ORGAN_GEOMETRY = {
    "brain": ((0.86, 0.50, 0.50), (0.080, 0.080, 0.080), 35.0),
    "head_glands_l": ((0.76, 0.50, 0.38), (0.035, 0.035, 0.035), 45.0),
    "head_glands_r": ((0.76, 0.50, 0.62), (0.035, 0.035, 0.035), 45.0),
    "heart": ((0.62, 0.44, 0.46), (0.070, 0.070, 0.070), 40.0),
    "liver": ((0.50, 0.54, 0.36), (0.060, 0.100, 0.110), 55.0),
    "kidney_l": ((0.42, 0.62, 0.36), (0.040, 0.040, 0.040), 42.0),
    "kidney_r": ((0.42, 0.62, 0.64), (0.040, 0.040, 0.040), 42.0),
    "urinary_bladder": ((0.18, 0.55, 0.50), (0.050, 0.050, 0.050), 25.0),
}
_ORGAN_LABEL_OF = {
    "brain": ORGAN_IDS["brain"],
    "head_glands_l": ORGAN_IDS["head_glands"],
    "head_glands_r": ORGAN_IDS["head_glands"],
    "heart": ORGAN_IDS["heart"],
    "liver": ORGAN_IDS["liver"],
    "kidney_l": ORGAN_IDS["kidneys"],
    "kidney_r": ORGAN_IDS["kidneys"],
    "urinary_bladder": ORGAN_IDS["urinary_bladder"],
}

# Tracer-characteristic uptake (SUV) per structure. Kidney/bladder uptake
# overlaps across tracers on purpose so the classifier problem is learnable
# but not trivial.
_ORGAN_SUV = {
    "FDG": {"brain": 6.0, "head_glands_l": 1.0, "head_glands_r": 1.0,
            "heart": 3.5, "liver": 2.0, "kidney_l": 2.5, "kidney_r": 2.5,
            "urinary_bladder": 3.5},
    "PSMA": {"brain": 0.3, "head_glands_l": 8.0, "head_glands_r": 8.0,
             "heart": 1.0, "liver": 4.0, "kidney_l": 7.0, "kidney_r": 7.0,
             "urinary_bladder": 6.0},
}

TRACERS = ("FDG", "PSMA")


@dataclass(frozen=True)
class PhantomSpec:
    grid: ImageGrid = field(
        default_factory=lambda: ImageGrid((64, 64, 64), (3.0, 3.0, 3.0)))
    tracer: str = "FDG"
    n_lesions: int = 3
    lesion_radius_mm: tuple[float, float] = (5.0, 10.0)
    lesion_suv: tuple[float, float] = (2.5, 6.0)
    noise_sigma: float = 0.15  # PET noise, SUV units
    ct_noise_hu: float = 20.0
    seed: int = 0

    def __post_init__(self):
        if self.tracer not in TRACERS:
            raise ValueError(f"tracer must be one of {TRACERS}")
        if self.n_lesions < 0:
            raise ValueError("n_lesions must be >= 0")
        if self.lesion_radius_mm[0] <= 0:
            raise ValueError("lesion radii must be > 0")
        if self.lesion_suv[0] <= 0:
            raise ValueError("lesion SUV range must be positive")


@dataclass
class PhantomCase:
    case_id: str
    ct: ScalarVolume
    pet: ScalarVolume
    lesion_gt: LabelVolume
    organ_gt: LabelVolume
    tracer: str
    flags: list[str] = field(default_factory=list)


def _axis_coords(grid: ImageGrid):
    """Normalized [0, 1) voxel-center coordinates per axis."""
    return [
        (np.arange(grid.shape[a]) + 0.5) / grid.shape[a] for a in range(3)
    ]


def _ellipsoid_mask(grid: ImageGrid, center_frac, half_axes_frac) -> np.ndarray:
    z, y, x = _axis_coords(grid)
    zz = ((z - center_frac[0]) / half_axes_frac[0]) ** 2
    yy = ((y - center_frac[1]) / half_axes_frac[1]) ** 2
    xx = ((x - center_frac[2]) / half_axes_frac[2]) ** 2
    return (zz[:, None, None] + yy[None, :, None] + xx[None, None, :]) <= 1.0


def _sphere_mask(grid: ImageGrid, center_vox, radius_mm) -> np.ndarray:
    spacing = np.asarray(grid.spacing)
    coords = [
        (np.arange(grid.shape[a]) - center_vox[a]) * spacing[a]
        for a in range(3)
    ]
    zz, yy, xx = np.meshgrid(*coords, indexing="ij")
    return zz * zz + yy * yy + xx * xx <= radius_mm**2


def generate_phantom(spec: PhantomSpec, case_id: str = "phantom") -> PhantomCase:
    """Build one phantom case: body ellipsoid, organ analogs, non-overlapping
    spherical lesions, Gaussian noise on both modalities."""
    rng = np.random.default_rng(spec.seed)
    grid = spec.grid
    extent_mm = np.asarray(grid.shape) * np.asarray(grid.spacing)
    flags: list[str] = []

    body = _ellipsoid_mask(grid, (0.5, 0.5, 0.5), BODY_HALF_AXES)
    ct = np.full(grid.shape, AIR_HU, dtype=np.float32)
    ct[body] = SOFT_TISSUE_HU
    pet = np.zeros(grid.shape, dtype=np.float32)
    pet[body] = BODY_BACKGROUND_SUV
    organ_labels = np.zeros(grid.shape, dtype=np.int32)

    suv_of = _ORGAN_SUV[spec.tracer]
    for name, (center, half_axes, hu) in _ORGAN_GEOMETRY.items():
        mask = _ellipsoid_mask(grid, center, half_axes) & body
        ct[mask] = hu
        pet[mask] = suv_of[name]
        organ_labels[mask] = _ORGAN_LABEL_OF[name]

    # Lesions: spheres inside the body, pairwise non-overlapping, brighter
    # than their local background on PET.
    lesion_labels = np.zeros(grid.shape, dtype=np.int32)
    placed: list[tuple[np.ndarray, float]] = []
    placed_count = 0
    max_attempts = 200
    for i in range(spec.n_lesions):
        radius = float(rng.uniform(*spec.lesion_radius_mm))
        suv = float(rng.uniform(*spec.lesion_suv))
        for _ in range(max_attempts):
            frac = rng.uniform(0.12, 0.88, size=3)
            center_mm = frac * extent_mm
            center_vox = center_mm / np.asarray(grid.spacing)
            idx = tuple(int(round(c)) for c in center_vox)
            if not grid.contains(idx) or not body[idx]:
                continue
            if any(np.linalg.norm(center_mm - prev_mm) < radius + prev_r + 2.0
                   for prev_mm, prev_r in placed):
                continue
            mask = _sphere_mask(grid, center_vox, radius) & body
            if not mask.any():
                continue
            placed_count += 1
            placed.append((center_mm, radius))
            lesion_labels[mask] = placed_count
            if (organ_labels[mask] > 0).any():
                flags.append(f"lesion_{placed_count}_overlaps_organ")
            ct[mask] = SOFT_TISSUE_HU + LESION_HU_DELTA
            pet[mask] = suv
            break
        else:
            flags.append(f"lesion_{i + 1}_placement_failed")

    ct = ct + rng.normal(0.0, spec.ct_noise_hu, grid.shape).astype(np.float32)
    pet = pet + rng.normal(0.0, spec.noise_sigma, grid.shape).astype(np.float32)
    pet = np.maximum(pet, 0.0)

    lesion_schema = {0: "background"}
    lesion_schema.update({i: f"lesion_{i}" for i in range(1, placed_count + 1)})
    return PhantomCase(
        case_id=case_id,
        ct=ScalarVolume(grid, ct, Modality.CT_HU),
        pet=ScalarVolume(grid, pet, Modality.PET_SUV),
        lesion_gt=LabelVolume(grid, lesion_labels, lesion_schema),
        organ_gt=LabelVolume(grid, organ_labels, organ_label_schema()),
        tracer=spec.tracer,
        flags=flags,
    )


def generate_dataset(n_cases: int, tracer_mix: float, template: PhantomSpec,
                     out_dir, master_seed: int = 0,
                     negative_fraction: float = 0.15,
                     lesion_count_range: tuple[int, int] = (2, 5)) -> dict:
    """Generate a dataset of phantoms, write NIfTI files + manifest JSON +
    dataset fingerprint, and return the manifest dict.

    `tracer_mix` is the FDG fraction; `negative_fraction` of cases get zero
    lesions (negative controls). Per-case seeds derive from the master seed.
    """
    if n_cases < 1:
        raise ValueError("n_cases must be >= 1")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(master_seed)
    case_seeds = rng.integers(0, 2**31 - 1, size=n_cases)

    n_fdg = int(round(n_cases * tracer_mix))
    tracers = ["FDG"] * n_fdg + ["PSMA"] * (n_cases - n_fdg)
    rng.shuffle(tracers)
    n_negative = int(round(n_cases * negative_fraction))
    negative = np.zeros(n_cases, dtype=bool)
    negative[rng.choice(n_cases, size=n_negative, replace=False)] = True

    cases = []
    ct_volumes = []
    for i in range(n_cases):
        case_id = f"case_{i:04d}"
        n_lesions = 0 if negative[i] else int(
            rng.integers(lesion_count_range[0], lesion_count_range[1] + 1))
        spec = replace(template, tracer=tracers[i], n_lesions=n_lesions,
                       seed=int(case_seeds[i]))
        case = generate_phantom(spec, case_id=case_id)
        case_dir = out_dir / case_id
        paths = {
            "ct": case_dir / "ct.nii.gz",
            "pet": case_dir / "pet.nii.gz",
            "lesion_gt": case_dir / "lesion_gt.nii.gz",
            "organ_gt": case_dir / "organ_gt.nii.gz",
        }
        save_volume(case.ct, paths["ct"])
        save_volume(case.pet, paths["pet"])
        save_volume(case.lesion_gt, paths["lesion_gt"])
        save_volume(case.organ_gt, paths["organ_gt"])
        ct_volumes.append(case.ct)
        cases.append({
            "case_id": case_id,
            "tracer": case.tracer,
            "ct": str(paths["ct"].relative_to(out_dir)),
            "pet": str(paths["pet"].relative_to(out_dir)),
            "lesion_gt": str(paths["lesion_gt"].relative_to(out_dir)),
            "organ_gt": str(paths["organ_gt"].relative_to(out_dir)),
            "n_lesions": int(case.lesion_gt.labels.max()),
            "flags": case.flags,
        })

    fingerprint = compute_fingerprint(ct_volumes)
    manifest = {
        "n_cases": n_cases,
        "master_seed": master_seed,
        "tracer_mix": tracer_mix,
        "negative_fraction": negative_fraction,
        "grid": {"shape": list(template.grid.shape),
                 "spacing": list(template.grid.spacing)},
        "fingerprint": fingerprint.to_dict(),
        "cases": cases,
    }
    with open(out_dir / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=2)
    return manifest


def load_fingerprint(manifest: dict) -> DatasetFingerprint:
    return DatasetFingerprint.from_dict(manifest["fingerprint"])
