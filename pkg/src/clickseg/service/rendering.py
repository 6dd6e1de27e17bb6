"""PNG slice rendering with window/level, a PET color ramp, and mask /
guidance overlays. Slices come out in raw array orientation (rows = first
remaining axis); the viewer owns display flips and aspect handling."""

from __future__ import annotations

import io

import numpy as np
from PIL import Image

from ..guidance import GuidanceConfig
from ..volumes import ImageGrid

CT_WINDOW = (-200.0, 400.0)
PET_WINDOW = (0.0, 8.0)

PLANES = ("axial", "coronal", "sagittal")
_PLANE_AXIS = {"axial": 0, "coronal": 1, "sagittal": 2}


def slice_axis(plane: str) -> int:
    if plane not in _PLANE_AXIS:
        raise ValueError(f"plane must be one of {PLANES}, got {plane!r}")
    return _PLANE_AXIS[plane]


def extract_slice(values: np.ndarray, plane: str, index: int) -> np.ndarray:
    axis = slice_axis(plane)
    if not 0 <= index < values.shape[axis]:
        raise IndexError(f"slice {index} out of range for {plane} "
                         f"(size {values.shape[axis]})")
    return np.take(values, index, axis=axis)


def window_to_unit(img: np.ndarray, low: float, high: float) -> np.ndarray:
    out = np.clip(img, low, high)
    return (out - low) / (high - low)


def _pet_colormap(unit: np.ndarray) -> np.ndarray:
    """Simple hot-metal ramp: black -> red -> yellow -> white."""
    r = np.clip(unit * 3.0, 0, 1)
    g = np.clip(unit * 3.0 - 1.0, 0, 1)
    b = np.clip(unit * 3.0 - 2.0, 0, 1)
    return np.stack([r, g, b], axis=-1)


def _blend(base: np.ndarray, color, alpha_map: np.ndarray) -> np.ndarray:
    color = np.asarray(color, dtype=np.float32)
    a = alpha_map[..., None]
    return base * (1 - a) + color[None, None, :] * a


def guidance_slice(clicks, kind: str, grid: ImageGrid, plane: str,
                   index: int, cfg: GuidanceConfig) -> np.ndarray:
    """Guidance values evaluated directly on one slice (closed form, no
    full-volume render)."""
    axis = slice_axis(plane)
    keep = [a for a in range(3) if a != axis]
    shape2d = (grid.shape[keep[0]], grid.shape[keep[1]])
    out = np.zeros(shape2d, dtype=np.float32)
    spacing = grid.spacing
    radius2 = cfg.support_radius_mm**2
    coords0 = np.arange(shape2d[0]) * spacing[keep[0]]
    coords1 = np.arange(shape2d[1]) * spacing[keep[1]]
    for click in clicks:
        if click.kind != kind:
            continue
        d_axis = (click.position[axis] - index) * spacing[axis]
        d0 = coords0 - click.position[keep[0]] * spacing[keep[0]]
        d1 = coords1 - click.position[keep[1]] * spacing[keep[1]]
        d2 = (d_axis**2 + d0[:, None] ** 2 + d1[None, :] ** 2)
        g = np.exp(-d2 / (2 * cfg.sigma_mm**2)).astype(np.float32)
        g[d2 > radius2] = 0.0
        np.maximum(out, g, out=out)
    return out


def render_slice_png(ct_slice: np.ndarray, pet_slice: np.ndarray,
                     channel: str = "CT",
                     ct_window=CT_WINDOW, pet_window=PET_WINDOW,
                     mask_slice: np.ndarray | None = None,
                     fg_slice: np.ndarray | None = None,
                     bg_slice: np.ndarray | None = None) -> bytes:
    if channel == "CT":
        base = window_to_unit(ct_slice, *ct_window)
        rgb = np.stack([base] * 3, axis=-1)
    elif channel == "PET":
        base = window_to_unit(pet_slice, *pet_window)
        rgb = np.stack([base] * 3, axis=-1)
    elif channel == "fused":
        gray = window_to_unit(ct_slice, *ct_window)
        pet_unit = window_to_unit(pet_slice, *pet_window)
        rgb = np.stack([gray] * 3, axis=-1)
        rgb = rgb * (1 - 0.6 * pet_unit[..., None]) \
            + _pet_colormap(pet_unit) * 0.6 * pet_unit[..., None]
    else:
        raise ValueError(f"channel must be CT, PET or fused, got {channel!r}")

    if mask_slice is not None and mask_slice.any():
        rgb = _blend(rgb, (1.0, 0.15, 0.15),
                     0.40 * (mask_slice > 0).astype(np.float32))
    if fg_slice is not None and fg_slice.max() > 0:
        rgb = _blend(rgb, (0.1, 1.0, 0.1), 0.5 * fg_slice)
    if bg_slice is not None and bg_slice.max() > 0:
        rgb = _blend(rgb, (0.2, 0.4, 1.0), 0.5 * bg_slice)

    img = Image.fromarray((np.clip(rgb, 0, 1) * 255).astype(np.uint8))
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()
