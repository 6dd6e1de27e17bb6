import { describe, expect, it } from "vitest";

import {
  activeOverlays,
  clickLimitReached,
  initialViewerState,
  scrollSlice,
  selectCase,
  setPlane,
  toggleOverlay,
} from "../src/state.js";

const DIMS: [number, number, number] = [32, 48, 64];

describe("viewer state transitions", () => {
  it("selecting a case centers the slice and drops the session", () => {
    let s = initialViewerState();
    s = { ...s, sessionId: "old" };
    s = selectCase(s, "case_0001", DIMS);
    expect(s.caseId).toBe("case_0001");
    expect(s.sessionId).toBeNull();
    expect(s.sliceIndex).toBe(16); // axial: nz/2
  });

  it("changing plane recenters within the new axis", () => {
    let s = selectCase(initialViewerState(), "c", DIMS);
    s = setPlane(s, "coronal");
    expect(s.sliceIndex).toBe(24); // ny/2
    s = setPlane(s, "sagittal");
    expect(s.sliceIndex).toBe(32); // nx/2
  });

  it("scrolling clamps at volume bounds", () => {
    let s = selectCase(initialViewerState(), "c", DIMS);
    for (let i = 0; i < 100; i++) s = scrollSlice(s, 1);
    expect(s.sliceIndex).toBe(31);
    for (let i = 0; i < 100; i++) s = scrollSlice(s, -1);
    expect(s.sliceIndex).toBe(0);
  });

  it("overlay toggles only touch the named layer", () => {
    let s = initialViewerState();
    s = toggleOverlay(s, "mask");
    expect(s.overlays).toEqual({ mask: false, fg: true, bg: true });
    expect(activeOverlays(s)).toEqual(["fg", "bg"]);
    s = toggleOverlay(s, "mask");
    expect(activeOverlays(s)).toEqual(["mask", "fg", "bg"]);
  });

  it("click limit trips at ten", () => {
    expect(clickLimitReached(9)).toBe(false);
    expect(clickLimitReached(10)).toBe(true);
  });
});
