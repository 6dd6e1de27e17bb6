"""Dataset manifests and case loading shared by training, sweeps, and the
session service."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .volumes import (
    DatasetFingerprint,
    LabelVolume,
    Modality,
    ScalarVolume,
    load_volume,
)


@dataclass
class CaseRecord:
    case_id: str
    tracer: str
    ct_path: Path
    pet_path: Path
    lesion_gt_path: Path | None = None
    organ_gt_path: Path | None = None
    n_lesions: int | None = None


@dataclass
class LoadedCase:
    case_id: str
    tracer: str
    ct: ScalarVolume
    pet: ScalarVolume
    lesion_gt: LabelVolume | None = None
    organ_gt: LabelVolume | None = None

    @property
    def grid(self):
        return self.ct.grid


@dataclass
class Dataset:
    root: Path
    fingerprint: DatasetFingerprint
    records: list[CaseRecord]
    manifest: dict = field(default_factory=dict)

    def record(self, case_id: str) -> CaseRecord:
        for r in self.records:
            if r.case_id == case_id:
                return r
        raise KeyError(f"unknown case {case_id!r}")

    def case_ids(self) -> list[str]:
        return [r.case_id for r in self.records]


def load_manifest(path) -> Dataset:
    """Read a dataset manifest (manifest.json or the directory holding it)."""
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    if not path.exists():
        raise FileNotFoundError(f"no manifest at {path}")
    with open(path) as f:
        manifest = json.load(f)
    root = path.parent
    records = []
    for c in manifest["cases"]:
        records.append(CaseRecord(
            case_id=c["case_id"],
            tracer=c["tracer"],
            ct_path=root / c["ct"],
            pet_path=root / c["pet"],
            lesion_gt_path=root / c["lesion_gt"] if c.get("lesion_gt") else None,
            organ_gt_path=root / c["organ_gt"] if c.get("organ_gt") else None,
            n_lesions=c.get("n_lesions"),
        ))
    fingerprint = DatasetFingerprint.from_dict(manifest["fingerprint"])
    return Dataset(root=root, fingerprint=fingerprint, records=records,
                   manifest=manifest)


def load_case(record: CaseRecord) -> LoadedCase:
    ct = load_volume(record.ct_path, Modality.CT_HU)
    pet = load_volume(record.pet_path, Modality.PET_SUV)
    lesion_gt = (load_volume(record.lesion_gt_path)
                 if record.lesion_gt_path else None)
    organ_gt = (load_volume(record.organ_gt_path)
                if record.organ_gt_path else None)
    return LoadedCase(case_id=record.case_id, tracer=record.tracer, ct=ct,
                      pet=pet, lesion_gt=lesion_gt, organ_gt=organ_gt)


def split_records(records, val_fraction: float = 0.2, seed: int = 0):
    """Deterministic train/val split by shuffled case order."""
    import numpy as np

    idx = np.arange(len(records))
    np.random.default_rng(seed).shuffle(idx)
    n_val = max(1, int(round(len(records) * val_fraction)))
    val_idx = set(idx[:n_val].tolist())
    train = [r for i, r in enumerate(records) if i not in val_idx]
    val = [r for i, r in enumerate(records) if i in val_idx]
    return train, val
