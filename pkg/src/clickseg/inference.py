"""Prediction path: sliding-window dual-head inference with Gaussian
center weighting, budgeted mirroring TTA, click-count-based hybrid model
dispatch, and tracer-specific SUV threshold post-processing."""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .classifier import TracerClassifier, classify_tracer, mip_pair
from .data import LoadedCase
from .guidance import (
    BG,
    FG,
    ClickList,
    GuidanceConfig,
    render_clicks,
    simulate_clicks,
    take_first_k,
)
from .metrics import connected_components
from .network import NetworkConfig, build_network, load_checkpoint
from .volumes import (
    DatasetFingerprint,
    LabelVolume,
    Modality,
    MultiChannelVolume,
    ScalarVolume,
    normalize_ct,
    stack_channels,
    zscore_array,
    zscore_normalize,
)

SUV_THRESHOLDS = {"FDG": 1.5, "PSMA": 1.0}

# Array axis per mirror-axis name; volumes are (z, y, x).
_AXIS_INDEX = {"x": 2, "y": 1, "z": 0}
_MIRROR_ORDER = ("x", "y", "z")

TTA_BUDGET_SECONDS = 40.0


class PipelineError(RuntimeError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"predict_case failed at stage {stage!r}: {cause}")
        self.stage = stage


@dataclass(frozen=True)
class TTAPlan:
    mirror_axes: tuple[str, ...]
    n_passes: int
    est_total_seconds: float
    over_budget: bool = False

    def __post_init__(self):
        if self.n_passes != 2 ** len(self.mirror_axes):
            raise ValueError("n_passes must be 2^len(mirror_axes)")


def plan_tta(base_seconds: float,
             budget_seconds: float = TTA_BUDGET_SECONDS) -> TTAPlan:
    """Largest m in 0..3 with base_seconds * 2^m <= budget; axes picked in
    the fixed order x, y, z. m = 0 with a flag when even one pass exceeds
    the budget."""
    if base_seconds <= 0:
        raise ValueError("base_seconds must be > 0")
    m = 0
    for candidate in range(3, -1, -1):
        if base_seconds * 2**candidate <= budget_seconds:
            m = candidate
            break
    over_budget = base_seconds > budget_seconds
    return TTAPlan(mirror_axes=_MIRROR_ORDER[:m], n_passes=2**m,
                   est_total_seconds=base_seconds * 2**m,
                   over_budget=over_budget)


def _tile_starts(size: int, patch: int, overlap: float) -> list[int]:
    if size <= patch:
        return [0]
    step = patch * (1.0 - overlap)
    n = int(np.ceil((size - patch) / step)) + 1
    actual = (size - patch) / (n - 1)
    return [int(round(i * actual)) for i in range(n)]


def _gaussian_weight(patch) -> np.ndarray:
    w = np.ones(patch, dtype=np.float32)
    for ax, p in enumerate(patch):
        coords = np.arange(p, dtype=np.float32) - (p - 1) / 2.0
        sigma = p / 8.0
        g = np.exp(-(coords**2) / (2 * sigma**2))
        shape = [1, 1, 1]
        shape[ax] = p
        w = w * g.reshape(shape)
    return (w / w.max()).clip(min=1e-8).astype(np.float32)


def sliding_window_predict(net, mcv: MultiChannelVolume,
                           patch: tuple[int, int, int] | None = None,
                           overlap: float = 0.5) -> np.ndarray:
    """Per-voxel foreground probability from tiled patch inference.

    Tiles cover the volume with the requested overlap; each patch softmax is
    blended with a Gaussian center weight. A volume smaller than the patch
    runs as a single padded pass and is cropped back.
    """
    if not 0.0 <= overlap < 1.0:
        raise ValueError("overlap must be in [0, 1)")
    patch = tuple(patch or net.cfg.patch_size)
    data = mcv.as_array()
    shape = data.shape[1:]

    pads = [max(0, patch[a] - shape[a]) for a in range(3)]
    if any(pads):
        data = np.pad(data, [(0, 0)] + [(0, p) for p in pads], mode="edge")
    padded_shape = data.shape[1:]

    starts = [_tile_starts(padded_shape[a], patch[a], overlap)
              for a in range(3)]
    tiles = list(itertools.product(*starts))

    net.eval()
    with torch.no_grad():
        if len(tiles) == 1:
            # single covering tile: return the softmax directly, bit-exact
            x = torch.from_numpy(data[None])
            probs = torch.softmax(net(x).lesion_logits, dim=1)[0, 1].numpy()
        else:
            weight = _gaussian_weight(patch)
            acc = np.zeros(padded_shape, dtype=np.float32)
            norm = np.zeros(padded_shape, dtype=np.float32)
            for zs, ys, xs in tiles:
                sl = (slice(zs, zs + patch[0]), slice(ys, ys + patch[1]),
                      slice(xs, xs + patch[2]))
                x = torch.from_numpy(data[(slice(None),) + sl][None].copy())
                p = torch.softmax(net(x).lesion_logits, dim=1)[0, 1].numpy()
                acc[sl] += p * weight
                norm[sl] += weight
            probs = acc / norm
    probs = probs[:shape[0], :shape[1], :shape[2]]
    return probs.astype(np.float32)


def estimate_base_seconds(net, mcv: MultiChannelVolume,
                          patch=None, overlap: float = 0.5) -> float:
    """Time one window pass after an untimed warm-up and scale by the tile
    count."""
    patch = tuple(patch or net.cfg.patch_size)
    shape = mcv.grid.shape
    padded = [max(shape[a], patch[a]) for a in range(3)]
    n_tiles = int(np.prod([len(_tile_starts(padded[a], patch[a], overlap))
                           for a in range(3)]))
    x = torch.zeros((1, 4) + patch)
    net.eval()
    with torch.no_grad():
        net(x)  # warm-up
        t0 = time.perf_counter()
        net(x)
        per_pass = time.perf_counter() - t0
    return max(per_pass, 1e-6) * n_tiles


def tta_predict(net, mcv: MultiChannelVolume, plan: TTAPlan,
                patch=None, overlap: float = 0.5) -> np.ndarray:
    """Mean probability over all 2^m flip combinations of the plan's axes
    (flip input, predict, un-flip)."""
    axes = [_AXIS_INDEX[a] for a in plan.mirror_axes]
    data = mcv.as_array()
    total = None
    count = 0
    for flips in itertools.product([False, True], repeat=len(axes)):
        chosen = [ax for ax, f in zip(axes, flips) if f]
        if chosen:
            flipped = np.flip(data, axis=[ax + 1 for ax in chosen]).copy()
            flipped_mcv = MultiChannelVolume(mcv.grid, tuple(flipped))
            p = sliding_window_predict(net, flipped_mcv, patch, overlap)
            p = np.flip(p, axis=chosen)
        else:
            p = sliding_window_predict(net, mcv, patch, overlap)
        total = p.astype(np.float64) if total is None else total + p
        count += 1
    return (total / count).astype(np.float32)


@dataclass(frozen=True)
class HybridPolicy:
    """Click-count-based model dispatch: FDG uses the balanced-curriculum
    model for sparse guidance and the full-guidance model once clicks are
    dense; PSMA always uses its fine-tuned model."""

    fdg_early_model: str = "V4"
    fdg_dense_model: str = "V3"
    fdg_early_max_k: int = 4
    psma_model: str = "V2"


def select_model(tracer: str, k_clicks: int, policy: HybridPolicy,
                 registry: "ModelRegistry") -> str:
    if not 0 <= k_clicks <= 10:
        raise ValueError(f"k_clicks must be in 0..10, got {k_clicks}")
    if tracer == "PSMA":
        model_id = policy.psma_model
    elif tracer == "FDG":
        model_id = (policy.fdg_early_model if k_clicks <= policy.fdg_early_max_k
                    else policy.fdg_dense_model)
    else:
        raise ValueError(f"unknown tracer {tracer!r}")
    if model_id not in registry:
        raise KeyError(f"model {model_id!r} not in registry "
                       f"({sorted(registry.ids())})")
    return model_id


@dataclass
class RegistryEntry:
    checkpoint_path: Path
    tracer_scope: str = "ANY"  # FDG, PSMA, or ANY
    config: NetworkConfig | None = None


class ModelRegistry:
    """id -> checkpoint mapping with lazy, cached network loading."""

    def __init__(self, entries: dict[str, RegistryEntry] | None = None):
        self._entries: dict[str, RegistryEntry] = {}
        self._cache: dict[str, torch.nn.Module] = {}
        for model_id, entry in (entries or {}).items():
            self.register(model_id, entry)

    def register(self, model_id: str, entry: RegistryEntry) -> None:
        if model_id in self._entries:
            raise ValueError(f"duplicate model id {model_id!r}")
        self._entries[model_id] = entry

    def __contains__(self, model_id: str) -> bool:
        return model_id in self._entries

    def ids(self) -> list[str]:
        return list(self._entries)

    def entry(self, model_id: str) -> RegistryEntry:
        return self._entries[model_id]

    def load(self, model_id: str) -> torch.nn.Module:
        if model_id not in self._entries:
            raise KeyError(f"model {model_id!r} not registered")
        if model_id not in self._cache:
            entry = self._entries[model_id]
            net = None
            if entry.config is not None:
                net = build_network(entry.config)
            self._cache[model_id] = load_checkpoint(entry.checkpoint_path, net)
        return self._cache[model_id]


def load_registry_json(path) -> ModelRegistry:
    """Read a registry file: {"models": {id: {"checkpoint": path,
    "tracer_scope": scope}}}. Relative checkpoint paths resolve against the
    registry file location."""
    import json

    path = Path(path)
    with open(path) as f:
        doc = json.load(f)
    registry = ModelRegistry()
    for model_id, entry in doc.get("models", {}).items():
        ckpt = Path(entry["checkpoint"])
        if not ckpt.is_absolute():
            ckpt = path.parent / ckpt
        registry.register(model_id, RegistryEntry(
            checkpoint_path=ckpt,
            tracer_scope=entry.get("tracer_scope", "ANY")))
    return registry


def write_registry_json(path, models: dict[str, str],
                        tracer_scopes: dict[str, str] | None = None) -> None:
    """Write a registry file mapping model ids to checkpoint paths."""
    import json

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    scopes = tracer_scopes or {}
    doc = {"models": {
        mid: {"checkpoint": str(ckpt),
              "tracer_scope": scopes.get(mid, "ANY")}
        for mid, ckpt in models.items()}}
    with open(path, "w") as f:
        json.dump(doc, f, indent=2)


def suv_threshold_postprocess(mask, pet_suv: ScalarVolume, tracer: str,
                              mode: str = "component_max",
                              connectivity: int = 26,
                              thresholds: dict | None = None) -> LabelVolume:
    """Drop mask regions whose raw PET uptake stays below the tracer
    threshold (FDG 1.5, PSMA 1.0).

    component_max removes whole connected components whose max SUV is below
    threshold (per-voxel removal would perforate lesions); per_voxel removes
    individual voxels instead.
    """
    thresholds = thresholds or SUV_THRESHOLDS
    if tracer not in thresholds:
        raise ValueError(f"no SUV threshold for tracer {tracer!r}")
    if mode not in ("component_max", "per_voxel"):
        raise ValueError(f"unknown post-processing mode {mode!r}")
    threshold = thresholds[tracer]

    if isinstance(mask, LabelVolume):
        grid = mask.grid
        m = mask.labels > 0
    else:
        grid = pet_suv.grid
        m = np.asarray(mask) > 0
    if m.shape != pet_suv.grid.shape:
        raise ValueError(f"grid mismatch: mask {m.shape} vs "
                         f"PET {pet_suv.grid.shape}")

    suv = pet_suv.values
    if mode == "per_voxel":
        keep = m & (suv >= threshold)
    else:
        lab = connected_components(m, connectivity)
        n = int(lab.max())
        keep = np.zeros_like(m)
        if n:
            max_suv = np.full(n + 1, -np.inf)
            np.maximum.at(max_suv, lab.ravel(), np.where(m, suv, -np.inf).ravel())
            surviving = np.flatnonzero(max_suv >= threshold)
            surviving = surviving[surviving > 0]
            keep = np.isin(lab, surviving)
    return LabelVolume(grid, keep.astype(np.int32),
                       {0: "background", 1: "lesion"})


@dataclass
class PredictConfig:
    """Everything predict_case needs besides the case itself."""

    fingerprint: DatasetFingerprint
    guidance: GuidanceConfig = field(default_factory=GuidanceConfig)
    policy: HybridPolicy = field(default_factory=HybridPolicy)
    prob_threshold: float = 0.5
    suv_mode: str = "component_max"
    connectivity: int = 26
    overlap: float = 0.5
    # None -> measure one pass and plan against tta_budget_seconds;
    # a tuple fixes the axes for deterministic runs.
    fixed_mirror_axes: tuple[str, ...] | None = ()
    tta_budget_seconds: float = TTA_BUDGET_SECONDS
    classifier: TracerClassifier | None = None


def prepare_input(case: LoadedCase, clicks: ClickList,
                  cfg: PredictConfig) -> MultiChannelVolume:
    """Normalize and stack the 4 network channels for one case."""
    ct_norm = normalize_ct(case.ct, cfg.fingerprint)
    pet_norm = zscore_normalize(case.pet)
    fg_map = render_clicks(clicks, FG, cfg.guidance)
    bg_map = render_clicks(clicks, BG, cfg.guidance)
    grid = case.grid
    fg_norm = ScalarVolume(grid, zscore_array(fg_map.values),
                           Modality.NORMALIZED)
    bg_norm = ScalarVolume(grid, zscore_array(bg_map.values),
                           Modality.NORMALIZED)
    return stack_channels(ct_norm, pet_norm, fg_norm, bg_norm)


def predict_case(case: LoadedCase, k_clicks: int | None,
                 registry: ModelRegistry, cfg: PredictConfig,
                 clicks: ClickList | None = None):
    """Full pipeline: classify tracer, obtain clicks, render guidance,
    dispatch to a model, TTA-predict, threshold, SUV post-process.

    Returns (binary LabelVolume, provenance dict). Component failures are
    re-raised with the pipeline stage labelled.
    """
    stage = "classify"
    try:
        if cfg.classifier is not None:
            pred = classify_tracer(mip_pair(case.pet), cfg.classifier)
            tracer, confidence = pred.label, pred.confidence
        elif case.tracer:
            tracer, confidence = case.tracer, None
        else:
            raise ValueError("no classifier configured and case has no tracer")

        stage = "clicks"
        if clicks is None:
            if k_clicks is None:
                raise ValueError("need k_clicks when clicks are not supplied")
            if case.lesion_gt is None:
                clicks = ClickList([], case.grid)
            else:
                clicks = simulate_clicks(case.lesion_gt, None, 10, 10,
                                         cfg=cfg.guidance)
        if k_clicks is not None:
            clicks = take_first_k(clicks, k_clicks)
        k_effective = (k_clicks if k_clicks is not None
                       else max(clicks.count(FG), clicks.count(BG)))

        stage = "guidance"
        mcv = prepare_input(case, clicks, cfg)

        stage = "select_model"
        model_id = select_model(tracer, k_effective, cfg.policy, registry)
        net = registry.load(model_id)

        stage = "tta"
        if cfg.fixed_mirror_axes is not None:
            m = len(cfg.fixed_mirror_axes)
            plan = TTAPlan(tuple(cfg.fixed_mirror_axes), 2**m,
                           est_total_seconds=0.0)
            plan_mode = "fixed"
        else:
            base = estimate_base_seconds(net, mcv, overlap=cfg.overlap)
            plan = plan_tta(base, cfg.tta_budget_seconds)
            plan_mode = "budget"
        probs = tta_predict(net, mcv, plan, overlap=cfg.overlap)

        stage = "postprocess"
        binary = probs >= cfg.prob_threshold
        mask = suv_threshold_postprocess(binary, case.pet, tracer,
                                         mode=cfg.suv_mode,
                                         connectivity=cfg.connectivity)
    except Exception as exc:
        raise PipelineError(stage, exc) from exc

    provenance = {
        "case_id": case.case_id,
        "tracer": tracer,
        "confidence": confidence,
        "model_id": model_id,
        "k_clicks": k_effective,
        "n_fg_clicks": clicks.count(FG),
        "n_bg_clicks": clicks.count(BG),
        "mirror_axes": list(plan.mirror_axes),
        "n_passes": plan.n_passes,
        "tta_mode": plan_mode,
        "est_total_seconds": plan.est_total_seconds,
        "over_budget": plan.over_budget,
        "prob_threshold": cfg.prob_threshold,
        "suv_threshold": SUV_THRESHOLDS[tracer],
        "suv_mode": cfg.suv_mode,
    }
    return mask, provenance
