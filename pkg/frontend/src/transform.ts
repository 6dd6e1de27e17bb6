// Slice geometry: mapping between canvas pixels, slice rows/cols, and
// (z, y, x) voxel indices. Coronal and sagittal slices are displayed with
// the cranio-caudal axis pointing up, so their rows are flipped.

import type { ClickJson, Plane } from "./types.js";

export const PLANE_AXIS: Record<Plane, 0 | 1 | 2> = {
  axial: 0,
  coronal: 1,
  sagittal: 2,
};

/** True when the display flips slice rows (z shown increasing upward). */
export function rowsFlipped(plane: Plane): boolean {
  return plane !== "axial";
}

/** (rows, cols) of a slice of a (nz, ny, nx) volume. */
export function sliceShape(
  plane: Plane,
  dims: [number, number, number],
): [number, number] {
  const [nz, ny, nx] = dims;
  if (plane === "axial") return [ny, nx];
  if (plane === "coronal") return [nz, nx];
  return [nz, ny];
}

export function sliceCount(plane: Plane, dims: [number, number, number]): number {
  return dims[PLANE_AXIS[plane]];
}

export function clampSliceIndex(
  index: number,
  plane: Plane,
  dims: [number, number, number],
): number {
  const n = sliceCount(plane, dims);
  return Math.min(Math.max(index, 0), n - 1);
}

/** Slice (row, col) of a voxel on the given plane, display-flipped. */
export function voxelToSlice(
  pos: [number, number, number],
  plane: Plane,
): { row: number; col: number; axisIndex: number } {
  const [z, y, x] = pos;
  let row: number;
  let col: number;
  let axisIndex: number;
  if (plane === "axial") {
    row = y; col = x; axisIndex = z;
  } else if (plane === "coronal") {
    row = z; col = x; axisIndex = y;
  } else {
    row = z; col = y; axisIndex = x;
  }
  return { row, col, axisIndex };
}

/**
 * Canvas pixel -> (z, y, x) voxel on the current slice. Returns null when
 * the pixel falls outside the volume.
 */
export function canvasToVoxel(
  canvasX: number,
  canvasY: number,
  canvasW: number,
  canvasH: number,
  plane: Plane,
  sliceIndex: number,
  dims: [number, number, number],
): [number, number, number] | null {
  const [rows, cols] = sliceShape(plane, dims);
  if (canvasX < 0 || canvasY < 0 || canvasX >= canvasW || canvasY >= canvasH) {
    return null;
  }
  const col = Math.floor((canvasX / canvasW) * cols);
  let row = Math.floor((canvasY / canvasH) * rows);
  if (rowsFlipped(plane)) row = rows - 1 - row;
  if (row < 0 || row >= rows || col < 0 || col >= cols) return null;

  let pos: [number, number, number];
  if (plane === "axial") pos = [sliceIndex, row, col];
  else if (plane === "coronal") pos = [row, sliceIndex, col];
  else pos = [row, col, sliceIndex];

  const inBounds = pos.every((p, axis) => p >= 0 && p < dims[axis]);
  return inBounds ? pos : null;
}

/** Slice (row, col) -> canvas pixel center for drawing markers. */
export function sliceToCanvas(
  row: number,
  col: number,
  canvasW: number,
  canvasH: number,
  plane: Plane,
  dims: [number, number, number],
): { x: number; y: number } {
  const [rows, cols] = sliceShape(plane, dims);
  const displayRow = rowsFlipped(plane) ? rows - 1 - row : row;
  return {
    x: ((col + 0.5) / cols) * canvasW,
    y: ((displayRow + 0.5) / rows) * canvasH,
  };
}

export interface ClickMarker {
  click: ClickJson;
  row: number;
  col: number;
  /** signed slice distance from the viewed slice */
  offset: number;
}

/** Clicks projected onto the current slice, within +-window slices. */
export function visibleClickMarkers(
  clicks: ClickJson[],
  plane: Plane,
  sliceIndex: number,
  window: number = 2,
): ClickMarker[] {
  const markers: ClickMarker[] = [];
  for (const click of clicks) {
    const { row, col, axisIndex } = voxelToSlice(click.pos, plane);
    const offset = axisIndex - sliceIndex;
    if (Math.abs(offset) <= window) {
      markers.push({ click, row, col, offset });
    }
  }
  return markers;
}
