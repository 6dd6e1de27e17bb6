// Typed client for the session API. All segmentation state changes go
// through these endpoints and nothing else.

import type {
  CaseSummary,
  ClickJson,
  ClickKind,
  Plane,
  Channel,
  PredictResponse,
  SessionState,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    public status: number,
    public detail: string,
  ) {
    super(`HTTP ${status}: ${detail}`);
  }
}

type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  constructor(
    private baseUrl: string = "",
    private fetchImpl: FetchLike = (url, init) => fetch(url, init),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const resp = await this.fetchImpl(this.baseUrl + path, init);
    if (!resp.ok) {
      let detail = resp.statusText;
      try {
        const body = await resp.json();
        if (body && typeof body.detail === "string") detail = body.detail;
      } catch {
        // non-JSON error body; keep statusText
      }
      throw new ApiError(resp.status, detail);
    }
    return (await resp.json()) as T;
  }

  listCases(): Promise<CaseSummary[]> {
    return this.request<CaseSummary[]>("/cases");
  }

  createSession(caseId: string): Promise<SessionState> {
    return this.request<SessionState>("/sessions", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ case_id: caseId }),
    });
  }

  sessionState(sessionId: string): Promise<SessionState> {
    return this.request<SessionState>(`/sessions/${sessionId}/state`);
  }

  addClick(
    sessionId: string,
    pos: [number, number, number],
    kind: ClickKind,
  ): Promise<ClickJson> {
    return this.request<ClickJson>(`/sessions/${sessionId}/clicks`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ pos, kind }),
    });
  }

  undoClick(sessionId: string): Promise<ClickJson> {
    return this.request<ClickJson>(`/sessions/${sessionId}/clicks/last`, {
      method: "DELETE",
    });
  }

  predict(sessionId: string): Promise<PredictResponse> {
    return this.request<PredictResponse>(
      `/sessions/${sessionId}/predict`,
      { method: "POST" },
    );
  }

  sliceUrl(
    caseId: string,
    plane: Plane,
    index: number,
    channel: Channel,
    overlays: string[],
    sessionId: string | null,
    maskVersion: number,
  ): string {
    const params = new URLSearchParams({
      plane,
      index: String(index),
      channel,
    });
    if (overlays.length > 0) {
      params.set("overlay", overlays.join(","));
      if (sessionId) params.set("session_id", sessionId);
    }
    // mask version busts the browser cache after each predict
    params.set("v", String(maskVersion));
    return `${this.baseUrl}/cases/${caseId}/slice?${params.toString()}`;
  }
}
