// Shared types mirroring the session API JSON schemas.

export type Plane = "axial" | "coronal" | "sagittal";
export type Channel = "CT" | "PET" | "fused";
export type ClickKind = "FG" | "BG";
export type ClickTool = ClickKind | "undo";

export interface ClickJson {
  pos: [number, number, number]; // (z, y, x) voxel index
  kind: ClickKind;
  ordinal: number;
}

export interface CaseSummary {
  case_id: string;
  tracer: string;
  shape: number[];
  spacing: number[];
  n_lesions: number | null;
}

export interface Metrics {
  dice: number;
  fpv_ml: number;
  fnv_ml: number;
}

export interface SessionState {
  session_id: string;
  case_id: string;
  clicks: ClickJson[];
  mask_version: number;
  metrics: Metrics | null;
  n_fg: number;
  n_bg: number;
}

export interface PredictResponse {
  mask_version: number;
  metrics: Metrics | null;
  provenance: Record<string, unknown> & { k_clicks?: number };
}

export interface OverlayToggles {
  mask: boolean;
  fg: boolean;
  bg: boolean;
}

/** Everything that determines what the viewer shows. */
export interface ViewerState {
  caseId: string | null;
  sessionId: string | null;
  plane: Plane;
  sliceIndex: number;
  channel: Channel;
  overlays: OverlayToggles;
  tool: ClickTool;
  dims: [number, number, number]; // (nz, ny, nx)
}
