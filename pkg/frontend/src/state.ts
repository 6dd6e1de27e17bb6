// Viewer state transitions, kept pure so they are unit-testable. The DOM
// layer applies the returned state and re-renders.

import { clampSliceIndex, sliceCount } from "./transform.js";
import type { Plane, ViewerState } from "./types.js";

export const MAX_CLICKS_PER_KIND = 10;

export function initialViewerState(): ViewerState {
  return {
    caseId: null,
    sessionId: null,
    plane: "axial",
    sliceIndex: 0,
    channel: "fused",
    overlays: { mask: true, fg: true, bg: true },
    tool: "FG",
    dims: [1, 1, 1],
  };
}

export function selectCase(
  state: ViewerState,
  caseId: string,
  dims: [number, number, number],
): ViewerState {
  return {
    ...state,
    caseId,
    sessionId: null,
    dims,
    sliceIndex: Math.floor(sliceCount(state.plane, dims) / 2),
  };
}

export function setPlane(state: ViewerState, plane: Plane): ViewerState {
  const index = Math.floor(sliceCount(plane, state.dims) / 2);
  return { ...state, plane, sliceIndex: index };
}

export function scrollSlice(state: ViewerState, delta: number): ViewerState {
  const index = clampSliceIndex(
    state.sliceIndex + delta,
    state.plane,
    state.dims,
  );
  return { ...state, sliceIndex: index };
}

export function toggleOverlay(
  state: ViewerState,
  name: keyof ViewerState["overlays"],
): ViewerState {
  return {
    ...state,
    overlays: { ...state.overlays, [name]: !state.overlays[name] },
  };
}

export function activeOverlays(state: ViewerState): string[] {
  const names: string[] = [];
  if (state.overlays.mask) names.push("mask");
  if (state.overlays.fg) names.push("fg");
  if (state.overlays.bg) names.push("bg");
  return names;
}

export function clickLimitReached(count: number): boolean {
  return count >= MAX_CLICKS_PER_KIND;
}
