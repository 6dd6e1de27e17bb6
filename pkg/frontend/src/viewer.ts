// DOM wiring for the slice viewer: loads slice PNGs, draws click
// crosshairs, posts clicks/undo/predict through the API client, and keeps
// the metrics chart in sync. All mutation goes through the session API.

import { ApiClient, ApiError } from "./api.js";
import { appendPoint, drawChart, type ChartPoint } from "./chart.js";
import {
  activeOverlays,
  clickLimitReached,
  initialViewerState,
  scrollSlice,
  selectCase,
  setPlane,
  toggleOverlay,
  MAX_CLICKS_PER_KIND,
} from "./state.js";
import {
  canvasToVoxel,
  sliceShape,
  sliceCount,
  sliceToCanvas,
  visibleClickMarkers,
} from "./transform.js";
import type {
  CaseSummary,
  ClickJson,
  ClickKind,
  Plane,
  SessionState,
  ViewerState,
} from "./types.js";

const CANVAS_SIZE = 512;

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

export class Viewer {
  private state: ViewerState = initialViewerState();
  private clicks: ClickJson[] = [];
  private maskVersion = 0;
  private chartPoints: ChartPoint[] = [];
  private cases: CaseSummary[] = [];
  private predicting = false;

  private canvas = el<HTMLCanvasElement>("slice-canvas");
  private chartCanvas = el<HTMLCanvasElement>("chart-canvas");
  private banner = el<HTMLDivElement>("banner");
  private status = el<HTMLDivElement>("status");
  private caseSelect = el<HTMLSelectElement>("case-select");
  private sessionInput = el<HTMLInputElement>("session-input");
  private predictButton = el<HTMLButtonElement>("predict-button");

  constructor(private api: ApiClient) {}

  async start(): Promise<void> {
    this.canvas.width = CANVAS_SIZE;
    this.canvas.height = CANVAS_SIZE;
    this.cases = await this.api.listCases();
    for (const c of this.cases) {
      const option = document.createElement("option");
      option.value = c.case_id;
      option.textContent = `${c.case_id} (${c.tracer})`;
      this.caseSelect.appendChild(option);
    }
    this.bindControls();
    if (this.cases.length > 0) {
      await this.openCase(this.cases[0].case_id);
    }
  }

  private bindControls(): void {
    this.caseSelect.addEventListener("change", () => {
      void this.openCase(this.caseSelect.value);
    });
    el<HTMLButtonElement>("new-session").addEventListener("click", () => {
      void this.newSession();
    });
    el<HTMLButtonElement>("restore-session").addEventListener("click", () => {
      void this.restoreSession(this.sessionInput.value.trim());
    });
    for (const plane of ["axial", "coronal", "sagittal"] as Plane[]) {
      el<HTMLButtonElement>(`plane-${plane}`).addEventListener("click", () => {
        this.state = setPlane(this.state, plane);
        this.refreshSlice();
      });
    }
    for (const channel of ["CT", "PET", "fused"] as const) {
      el<HTMLButtonElement>(`channel-${channel}`).addEventListener(
        "click",
        () => {
          this.state = { ...this.state, channel };
          this.refreshSlice();
        },
      );
    }
    for (const overlay of ["mask", "fg", "bg"] as const) {
      el<HTMLInputElement>(`overlay-${overlay}`).addEventListener(
        "change",
        () => {
          this.state = toggleOverlay(this.state, overlay);
          this.refreshSlice();
        },
      );
    }
    for (const tool of ["FG", "BG", "undo"] as const) {
      el<HTMLButtonElement>(`tool-${tool}`).addEventListener("click", () => {
        if (tool === "undo") {
          void this.undo();
        } else {
          this.state = { ...this.state, tool };
          this.renderStatus();
        }
      });
    }
    this.canvas.addEventListener("wheel", (event) => {
      event.preventDefault();
      this.state = scrollSlice(this.state, event.deltaY > 0 ? 1 : -1);
      this.refreshSlice();
    });
    this.canvas.addEventListener("contextmenu", (e) => e.preventDefault());
    this.canvas.addEventListener("mousedown", (event) => {
      // left button places the selected FG/BG tool, right button always BG
      const kind: ClickKind = event.button === 2
        ? "BG"
        : this.state.tool === "BG"
          ? "BG"
          : "FG";
      void this.placeClick(event, kind);
    });
    this.predictButton.addEventListener("click", () => {
      void this.predict();
    });
  }

  private dimsOf(caseId: string): [number, number, number] {
    const summary = this.cases.find((c) => c.case_id === caseId);
    const shape = summary?.shape ?? [1, 1, 1];
    return [shape[0], shape[1], shape[2]];
  }

  private async openCase(caseId: string): Promise<void> {
    this.state = selectCase(this.state, caseId, this.dimsOf(caseId));
    this.caseSelect.value = caseId;
    await this.newSession();
  }

  private async newSession(): Promise<void> {
    if (!this.state.caseId) return;
    try {
      const session = await this.api.createSession(this.state.caseId);
      this.adoptSession(session);
    } catch (err) {
      this.showError(err);
    }
  }

  private async restoreSession(sessionId: string): Promise<void> {
    if (!sessionId) return;
    try {
      const session = await this.api.sessionState(sessionId);
      this.state = selectCase(
        this.state,
        session.case_id,
        this.dimsOf(session.case_id),
      );
      this.caseSelect.value = session.case_id;
      this.adoptSession(session);
    } catch (err) {
      this.showError(err);
    }
  }

  private adoptSession(session: SessionState): void {
    this.state = { ...this.state, sessionId: session.session_id };
    this.clicks = session.clicks;
    this.maskVersion = session.mask_version;
    this.chartPoints = [];
    this.sessionInput.value = session.session_id;
    this.clearBanner();
    this.refreshSlice();
    drawChart(this.chartCanvas, this.chartPoints);
  }

  private async placeClick(event: MouseEvent, kind: ClickKind): Promise<void> {
    if (!this.state.sessionId) return;
    const rect = this.canvas.getBoundingClientRect();
    const pos = canvasToVoxel(
      event.clientX - rect.left,
      event.clientY - rect.top,
      rect.width,
      rect.height,
      this.state.plane,
      this.state.sliceIndex,
      this.state.dims,
    );
    if (!pos) return;
    const count = this.clicks.filter((c) => c.kind === kind).length;
    if (clickLimitReached(count)) {
      this.showBanner(
        `limit: at most ${MAX_CLICKS_PER_KIND} ${kind} clicks per session`,
      );
      return;
    }
    try {
      const click = await this.api.addClick(this.state.sessionId, pos, kind);
      this.clicks = [...this.clicks, click];
      this.clearBanner();
      this.refreshSlice();
    } catch (err) {
      this.showError(err);
    }
  }

  private async undo(): Promise<void> {
    if (!this.state.sessionId) return;
    try {
      const removed = await this.api.undoClick(this.state.sessionId);
      this.clicks = this.clicks.filter(
        (c) => !(c.kind === removed.kind && c.ordinal === removed.ordinal),
      );
      this.clearBanner();
      this.refreshSlice();
    } catch (err) {
      this.showError(err);
    }
  }

  private async predict(): Promise<void> {
    if (!this.state.sessionId || this.predicting) return;
    this.predicting = true;
    this.predictButton.disabled = true;
    this.predictButton.textContent = "predicting…";
    try {
      const result = await this.api.predict(this.state.sessionId);
      this.maskVersion = result.mask_version;
      if (result.metrics) {
        const k =
          typeof result.provenance.k_clicks === "number"
            ? result.provenance.k_clicks
            : this.clicks.length;
        this.chartPoints = appendPoint(this.chartPoints, k, result.metrics);
        drawChart(this.chartCanvas, this.chartPoints);
        if (result.metrics.dice === 1 && this.clicks.length === 0) {
          this.showBanner("no lesions found (empty mask matches empty GT)");
        } else {
          this.clearBanner();
        }
      }
      this.refreshSlice();
    } catch (err) {
      this.showError(err);
    } finally {
      this.predicting = false;
      this.predictButton.disabled = false;
      this.predictButton.textContent = "predict";
    }
  }

  private refreshSlice(): void {
    if (!this.state.caseId) return;
    const url = this.api.sliceUrl(
      this.state.caseId,
      this.state.plane,
      this.state.sliceIndex,
      this.state.channel,
      activeOverlays(this.state),
      this.state.sessionId,
      this.maskVersion,
    );
    const img = new Image();
    img.onload = () => this.drawSlice(img);
    img.onerror = () => this.showBanner("failed to load slice");
    img.src = url;
    this.renderStatus();
  }

  private drawSlice(img: HTMLImageElement): void {
    const ctx = this.canvas.getContext("2d");
    if (!ctx) return;
    ctx.imageSmoothingEnabled = false;
    ctx.clearRect(0, 0, this.canvas.width, this.canvas.height);
    if (this.state.plane === "axial") {
      ctx.drawImage(img, 0, 0, this.canvas.width, this.canvas.height);
    } else {
      // flip rows so z points up
      ctx.save();
      ctx.translate(0, this.canvas.height);
      ctx.scale(1, -1);
      ctx.drawImage(img, 0, 0, this.canvas.width, this.canvas.height);
      ctx.restore();
    }
    this.drawClickMarkers(ctx);
  }

  private drawClickMarkers(ctx: CanvasRenderingContext2D): void {
    const markers = visibleClickMarkers(
      this.clicks,
      this.state.plane,
      this.state.sliceIndex,
    );
    for (const marker of markers) {
      const { x, y } = sliceToCanvas(
        marker.row,
        marker.col,
        this.canvas.width,
        this.canvas.height,
        this.state.plane,
        this.state.dims,
      );
      const onSlice = marker.offset === 0;
      ctx.strokeStyle = marker.click.kind === "FG" ? "#4cc38a" : "#0091ff";
      ctx.lineWidth = onSlice ? 2 : 1;
      ctx.globalAlpha = onSlice ? 1 : 0.45;
      const r = 7;
      ctx.beginPath();
      ctx.moveTo(x - r, y);
      ctx.lineTo(x + r, y);
      ctx.moveTo(x, y - r);
      ctx.lineTo(x, y + r);
      ctx.stroke();
      ctx.globalAlpha = 1;
    }
  }

  private renderStatus(): void {
    const nFg = this.clicks.filter((c) => c.kind === "FG").length;
    const nBg = this.clicks.filter((c) => c.kind === "BG").length;
    const total = sliceCount(this.state.plane, this.state.dims);
    const [rows, cols] = sliceShape(this.state.plane, this.state.dims);
    this.status.textContent =
      `${this.state.plane} ${this.state.sliceIndex + 1}/${total} · ` +
      `${cols}×${rows} · tool ${this.state.tool} · ` +
      `FG ${nFg}/${MAX_CLICKS_PER_KIND} · BG ${nBg}/${MAX_CLICKS_PER_KIND}`;
  }

  private showError(err: unknown): void {
    if (err instanceof ApiError) {
      this.showBanner(`${err.status}: ${err.detail}`);
    } else {
      this.showBanner(String(err));
    }
  }

  private showBanner(message: string): void {
    this.banner.textContent = message;
    this.banner.style.display = "block";
  }

  private clearBanner(): void {
    this.banner.textContent = "";
    this.banner.style.display = "none";
  }
}
