/**
 * Typed client for the teaching service. Every payload carries a
 * schema_version; a mismatch flips `schemaOk` so the UI can disable
 * mutation controls instead of sending requests the server may misread.
 */

import type { WorldGeometry } from "./geometry";

export const SUPPORTED_SCHEMA = 1;

export interface QComponent {
  mean: [number, number];
  covariance: number[][];
  weight: number;
}

export interface SessionState {
  schema_version: number;
  session_id: string;
  status: "idle" | "awaiting_demo" | "fitting";
  iteration: number;
  dataset_size: number;
  n_initial_demos: number;
  pending_query: [number, number] | null;
  beta: number;
  entropy: number;
  world: WorldGeometry & { schema_version: number };
  goal: [number, number];
}

export interface QueryResponse {
  schema_version: number;
  query: [number, number];
  q_components: QComponent[];
  entropy: number;
}

export interface HistoryEntry {
  iteration: number;
  query: [number, number] | null;
  entropy: number;
  dataset_size: number;
  failed: boolean;
}

export interface GridResponse {
  schema_version: number;
  mode: string;
  resolution: number;
  xs: number[];
  ys: number[];
  values: number[][];
  vmin: number;
  vmax: number;
  q_components: QComponent[] | null;
}

export interface RolloutTrace {
  start: [number, number];
  states: [number, number][];
  commands: [number, number][];
  termination: string;
  success: boolean;
  collided: boolean;
}

export interface DemoResponse {
  schema_version: number;
  entropy: number;
  dataset_size: number;
  demo_points: number;
  history: HistoryEntry[];
}

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly detail: string,
    readonly retryAfter: number | null = null,
  ) {
    super(`HTTP ${status}: ${detail}`);
  }
}

export class TeachApi {
  schemaOk = true;

  constructor(
    readonly baseUrl: string,
    private readonly fetchFn: typeof fetch = fetch,
  ) {}

  private checkSchema(payload: { schema_version?: number }): void {
    if (payload.schema_version !== undefined && payload.schema_version !== SUPPORTED_SCHEMA) {
      this.schemaOk = false;
    }
  }

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const resp = await this.fetchFn(`${this.baseUrl}${path}`, {
      headers: { "content-type": "application/json" },
      ...init,
    });
    const body = await resp.json().catch(() => ({}));
    if (!resp.ok) {
      const retry = body && typeof body.retry_after === "number" ? body.retry_after : null;
      throw new ApiError(resp.status, body.detail ?? body.error ?? resp.statusText, retry);
    }
    this.checkSchema(body);
    return body as T;
  }

  createSession(body: object = {}): Promise<{ session_id: string }> {
    return this.request("/sessions", { method: "POST", body: JSON.stringify(body) });
  }

  getSession(id: string): Promise<SessionState> {
    return this.request(`/sessions/${id}`);
  }

  requestQuery(id: string): Promise<QueryResponse> {
    return this.request(`/sessions/${id}/query`, { method: "POST" });
  }

  submitDemo(
    id: string,
    polyline: [number, number][],
    timestamps?: number[],
  ): Promise<DemoResponse> {
    return this.request(`/sessions/${id}/demo`, {
      method: "POST",
      body: JSON.stringify({ polyline, timestamps }),
    });
  }

  getGrid(id: string, mode: string, resolution: number): Promise<GridResponse> {
    return this.request(`/sessions/${id}/grid?mode=${mode}&resolution=${resolution}`);
  }

  getHistory(id: string): Promise<{ history: HistoryEntry[] }> {
    return this.request(`/sessions/${id}/history`);
  }

  getRollouts(id: string, n: number, mode: string): Promise<{ rollouts: RolloutTrace[] }> {
    return this.request(`/sessions/${id}/rollouts?n=${n}&mode=${mode}`);
  }
}
