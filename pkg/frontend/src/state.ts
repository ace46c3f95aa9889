/**
 * Session controller: a small observable store around the teaching API.
 *
 * Guards every mutation behind the session status (drawing is only enabled
 * while a demonstration is awaited), validates drawn polylines with the same
 * rectangle geometry the server uses before anything is sent, and polls the
 * server while it is fitting.
 */

import { ApiError, SUPPORTED_SCHEMA, TeachApi } from "./api";
import type { GridResponse, HistoryEntry, QComponent, RolloutTrace, SessionState } from "./api";
import { validatePolyline, type Point, type WorldGeometry } from "./geometry";

export interface ViewState {
  sessionId: string | null;
  status: "disconnected" | "idle" | "awaiting_demo" | "fitting";
  world: WorldGeometry | null;
  heatmap: GridResponse | null;
  qComponents: QComponent[];
  queryPoint: Point | null;
  iteration: number;
  datasetSize: number;
  drawing: Point[];
  drawingValid: boolean;
  drawingReason: string | null;
  history: HistoryEntry[];
  rollouts: RolloutTrace[];
  entropy: number | null;
  mutationsEnabled: boolean;
  banner: string | null;
}

const INITIAL: ViewState = {
  sessionId: null,
  status: "disconnected",
  world: null,
  heatmap: null,
  qComponents: [],
  queryPoint: null,
  iteration: 0,
  datasetSize: 0,
  drawing: [],
  drawingValid: false,
  drawingReason: null,
  history: [],
  rollouts: [],
  entropy: null,
  mutationsEnabled: true,
  banner: null,
};

export const POLL_INTERVAL_MS = 500;

export class SessionStore {
  private state: ViewState = { ...INITIAL };
  private listeners: Array<(s: ViewState) => void> = [];
  private pollTimer: ReturnType<typeof setTimeout> | null = null;

  constructor(
    private readonly api: TeachApi,
    readonly heatmapMode: string = "epistemic",
    readonly heatmapResolution: number = 150,
  ) {}

  get view(): ViewState {
    return this.state;
  }

  subscribe(listener: (s: ViewState) => void): () => void {
    this.listeners.push(listener);
    listener(this.state);
    return () => {
      this.listeners = this.listeners.filter((l) => l !== listener);
    };
  }

  private patch(update: Partial<ViewState>): void {
    this.state = { ...this.state, ...update, mutationsEnabled: this.api.schemaOk };
    for (const listener of this.listeners) listener(this.state);
  }

  async connect(body: object = {}): Promise<void> {
    const { session_id } = await this.api.createSession(body);
    this.patch({ sessionId: session_id });
    await this.refresh();
    await this.refreshHeatmap();
  }

  async refresh(): Promise<SessionState> {
    const id = this.requireSession();
    const remote = await this.api.getSession(id);
    const history = (await this.api.getHistory(id)).history;
    this.patch({
      status: remote.status,
      world: remote.world,
      queryPoint: remote.pending_query,
      iteration: remote.iteration,
      datasetSize: remote.dataset_size,
      entropy: remote.entropy,
      history,
    });
    if (remote.status === "fitting") {
      this.schedulePoll();
    }
    return remote;
  }

  async refreshHeatmap(): Promise<void> {
    const id = this.requireSession();
    try {
      const grid = await this.api.getGrid(id, this.heatmapMode, this.heatmapResolution);
      this.patch({ heatmap: grid, banner: null });
    } catch (err) {
      // scene stays usable without the raster; surface a warning badge
      this.patch({ heatmap: null, banner: `heatmap unavailable: ${String(err)}` });
    }
  }

  async requestQuery(): Promise<void> {
    const id = this.requireSession();
    if (this.state.status !== "idle") {
      throw new Error(`cannot request a query while ${this.state.status}`);
    }
    if (!this.state.mutationsEnabled) {
      throw new Error("mutations disabled: schema version mismatch");
    }
    this.patch({ status: "fitting" });
    this.schedulePoll();
    try {
      const out = await this.api.requestQuery(id);
      this.patch({
        status: "awaiting_demo",
        queryPoint: out.query,
        qComponents: out.q_components,
        entropy: out.entropy,
        drawing: [],
        drawingValid: false,
        drawingReason: null,
      });
    } catch (err) {
      await this.refresh();
      throw err;
    }
  }

  get drawingEnabled(): boolean {
    return this.state.status === "awaiting_demo" && this.state.mutationsEnabled;
  }

  /** Append a pointer sample to the in-progress polyline (world coords). */
  addDrawPoint(p: Point): void {
    if (!this.drawingEnabled || this.state.world === null) return;
    const drawing = [...this.state.drawing, p];
    const check = validatePolyline(this.state.world, drawing);
    this.patch({
      drawing,
      drawingValid: check.valid,
      drawingReason: check.reason ?? null,
    });
  }

  clearDrawing(): void {
    this.patch({ drawing: [], drawingValid: false, drawingReason: null });
  }

  /**
   * Submit the drawn demonstration. Refuses locally (no server call) when
   * the polyline fails the client-side collision check.
   */
  async submitDrawing(timestamps?: number[]): Promise<void> {
    const id = this.requireSession();
    if (this.state.status !== "awaiting_demo") {
      throw new Error(`cannot submit while ${this.state.status}`);
    }
    if (!this.state.mutationsEnabled) {
      throw new Error("mutations disabled: schema version mismatch");
    }
    if (this.state.world === null) throw new Error("world not loaded");
    const check = validatePolyline(this.state.world, this.state.drawing);
    if (!check.valid) {
      throw new Error(`invalid demonstration: ${check.reason}`);
    }
    this.patch({ status: "fitting" });
    this.schedulePoll();
    try {
      const out = await this.api.submitDemo(id, this.state.drawing as [number, number][], timestamps);
      this.patch({
        status: "idle",
        datasetSize: out.dataset_size,
        entropy: out.entropy,
        history: out.history,
        queryPoint: null,
        drawing: [],
        drawingValid: false,
        drawingReason: null,
      });
      await this.refreshHeatmap();
    } catch (err) {
      if (err instanceof ApiError && err.status === 422) {
        await this.refresh();
      }
      throw err;
    }
  }

  async loadRollouts(n = 5, mode = "mean"): Promise<void> {
    const id = this.requireSession();
    const out = await this.api.getRollouts(id, n, mode);
    this.patch({ rollouts: out.rollouts });
  }

  private schedulePoll(): void {
    if (this.pollTimer !== null) return;
    this.pollTimer = setTimeout(async () => {
      this.pollTimer = null;
      if (this.state.sessionId === null) return;
      try {
        const remote = await this.api.getSession(this.state.sessionId);
        if (remote.status === "fitting") {
          this.schedulePoll();
        }
      } catch {
        // transient poll failures are ignored; the next action refreshes
      }
    }, POLL_INTERVAL_MS);
  }

  private requireSession(): string {
    if (this.state.sessionId === null) throw new Error("no session connected");
    return this.state.sessionId;
  }
}

export { SUPPORTED_SCHEMA };
