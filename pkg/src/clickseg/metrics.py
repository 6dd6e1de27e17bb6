"""Segmentation evaluation: Dice, false-positive / false-negative volume in
ml, and the 0..10-click interactive sweep report.

FPV counts predicted components with zero ground-truth overlap; FNV counts
ground-truth components entirely missed. Both use one shared notion of
connected component (26-connectivity by default).
"""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .guidance import ClickList, GuidanceConfig, simulate_clicks, take_first_k
from .volumes import ImageGrid, LabelVolume

_STRUCTURES = {
    6: ndimage.generate_binary_structure(3, 1),
    18: ndimage.generate_binary_structure(3, 2),
    26: ndimage.generate_binary_structure(3, 3),
}


@dataclass(frozen=True)
class SegMetrics:
    dice: float
    fpv_ml: float
    fnv_ml: float

    def __post_init__(self):
        if not 0.0 <= self.dice <= 1.0:
            raise ValueError(f"dice must be in [0,1], got {self.dice}")
        if self.fpv_ml < 0 or self.fnv_ml < 0:
            raise ValueError("volumes must be >= 0")

    def to_dict(self) -> dict:
        return {"dice": self.dice, "fpv_ml": self.fpv_ml, "fnv_ml": self.fnv_ml}


def _as_mask(x) -> np.ndarray:
    if isinstance(x, LabelVolume):
        return x.labels > 0
    arr = np.asarray(x)
    return arr > 0 if arr.dtype != bool else arr


def _check_same_shape(pred: np.ndarray, gt: np.ndarray) -> None:
    if pred.shape != gt.shape:
        raise ValueError(f"grid mismatch: {pred.shape} vs {gt.shape}")


def dice(pred, gt) -> float:
    """2|P∩G| / (|P|+|G|); both masks empty scores 1.0 so negative-control
    cases stay scorable."""
    p = _as_mask(pred)
    g = _as_mask(gt)
    _check_same_shape(p, g)
    denom = int(p.sum()) + int(g.sum())
    if denom == 0:
        return 1.0
    return 2.0 * int((p & g).sum()) / denom


def connected_components(mask, connectivity: int = 26):
    """Label maximal connected regions 1..n, deterministically ordered by
    each component's first voxel in C (z, y, x) order.

    Accepts a boolean array (returns an int32 array) or a LabelVolume
    (returns a LabelVolume on the same grid).
    """
    if connectivity not in _STRUCTURES:
        raise ValueError(f"connectivity must be one of {sorted(_STRUCTURES)}")
    as_volume = isinstance(mask, LabelVolume)
    m = _as_mask(mask)
    lab, n = ndimage.label(m, structure=_STRUCTURES[connectivity])
    if n > 1:
        flat = lab.ravel()
        nz = np.flatnonzero(flat)
        # order of first appearance in C order
        _, first_idx = np.unique(flat[nz], return_index=True)
        order = flat[nz[np.sort(first_idx)]]
        remap = np.zeros(n + 1, dtype=np.int32)
        remap[order] = np.arange(1, n + 1, dtype=np.int32)
        lab = remap[lab]
    lab = lab.astype(np.int32)
    if as_volume:
        schema = {0: "background"}
        schema.update({i: f"component_{i}" for i in range(1, n + 1)})
        return LabelVolume(mask.grid, lab, schema)
    return lab


def false_positive_volume(pred, gt, grid: ImageGrid,
                          connectivity: int = 26) -> float:
    """Total ml of predicted components with zero ground-truth overlap."""
    p = _as_mask(pred)
    g = _as_mask(gt)
    _check_same_shape(p, g)
    lab = connected_components(p, connectivity)
    n = lab.max()
    if n == 0:
        return 0.0
    counts = np.bincount(lab.ravel(), minlength=n + 1)
    overlap = np.bincount(lab.ravel(), weights=g.ravel().astype(np.float64),
                          minlength=n + 1)
    false_ids = (overlap[1:] == 0)
    return float(counts[1:][false_ids].sum()) * grid.voxel_volume_ml


def false_negative_volume(pred, gt, grid: ImageGrid,
                          connectivity: int = 26) -> float:
    """Total ml of ground-truth components entirely missed (role-swapped
    FPV)."""
    return false_positive_volume(gt, pred, grid, connectivity)


def evaluate(pred, gt, grid: ImageGrid, connectivity: int = 26) -> SegMetrics:
    return SegMetrics(
        dice=dice(pred, gt),
        fpv_ml=false_positive_volume(pred, gt, grid, connectivity),
        fnv_ml=false_negative_volume(pred, gt, grid, connectivity),
    )


@dataclass
class SweepReport:
    """Mean metrics per click count k = 0..10 over a case set."""

    rows: list[tuple[int, SegMetrics]]
    model_id: str
    n_cases: int

    def __post_init__(self):
        ks = [k for k, _ in self.rows]
        if ks != sorted(ks) or len(set(ks)) != len(ks):
            raise ValueError("k values must be strictly increasing")

    def dice_by_k(self) -> list[float]:
        return [m.dice for _, m in self.rows]

    def fnv_by_k(self) -> list[float]:
        return [m.fnv_ml for _, m in self.rows]

    def to_csv(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["k", "dice", "fpv_ml", "fnv_ml", "n_cases", "model_id"])
            for k, m in self.rows:
                w.writerow([k, f"{m.dice:.6f}", f"{m.fpv_ml:.6f}",
                            f"{m.fnv_ml:.6f}", self.n_cases, self.model_id])


class SweepCaseError(RuntimeError):
    def __init__(self, case_id: str, cause: Exception):
        super().__init__(f"sweep failed on case {case_id!r}: {cause}")
        self.case_id = case_id


def case_seed(case_id: str, master_seed: int = 0) -> int:
    """Stable per-case seed (not Python's salted hash) so sweep reports are
    byte-reproducible across runs."""
    digest = hashlib.sha256(case_id.encode("utf-8")).digest()
    return (int.from_bytes(digest[:8], "little") ^ master_seed) % (2**63)


def interactive_sweep(predict_fn, cases, k_range=range(0, 11),
                      model_id: str = "model", master_seed: int = 0,
                      guidance_cfg: GuidanceConfig | None = None,
                      connectivity: int = 26) -> SweepReport:
    """Run the 0..10-click interactive evaluation.

    `cases` yields objects with `.case_id`, `.lesion_gt` (LabelVolume) and
    whatever `predict_fn` needs; `predict_fn(case, clicks, k)` returns a
    binary mask on the GT grid. Clicks are simulated once per case from GT
    (seeded by case id) and truncated to each k.
    """
    cases = list(cases)
    if not cases:
        raise ValueError("need at least one case")
    ks = list(k_range)
    per_k: dict[int, list[SegMetrics]] = {k: [] for k in ks}
    for case in cases:
        try:
            gt = case.lesion_gt
            clicks = simulate_clicks(
                gt, None, n_fg=max(ks), n_bg=max(ks),
                rng_seed=case_seed(case.case_id, master_seed),
                cfg=guidance_cfg)
            for k in ks:
                mask = predict_fn(case, take_first_k(clicks, k), k)
                per_k[k].append(evaluate(mask, gt.foreground(), gt.grid,
                                         connectivity))
        except Exception as exc:  # noqa: BLE001 - re-raised with case id
            raise SweepCaseError(case.case_id, exc) from exc

    rows = []
    for k in ks:
        ms = per_k[k]
        rows.append((k, SegMetrics(
            dice=float(np.mean([m.dice for m in ms])),
            fpv_ml=float(np.mean([m.fpv_ml for m in ms])),
            fnv_ml=float(np.mean([m.fnv_ml for m in ms])),
        )))
    return SweepReport(rows=rows, model_id=model_id, n_cases=len(cases))
