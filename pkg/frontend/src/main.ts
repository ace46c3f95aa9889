/**
 * Teaching console bootstrap: session setup, canvas wiring, pointer capture.
 */

import { TeachApi } from "./api";
import { downsamplePolyline, Viewport, type Point } from "./geometry";
import { renderHistoryChart, renderScene } from "./render";
import { SessionStore } from "./state";

const MIN_PIXEL_SPACING = 2;

function byId<T extends HTMLElement>(id: string): T {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing element #${id}`);
  return el as T;
}

export function boot(): void {
  const sceneCanvas = byId<HTMLCanvasElement>("scene");
  const chartCanvas = byId<HTMLCanvasElement>("chart");
  const statusEl = byId<HTMLSpanElement>("status");
  const infoEl = byId<HTMLSpanElement>("info");
  const bannerEl = byId<HTMLDivElement>("banner");
  const queryBtn = byId<HTMLButtonElement>("query");
  const submitBtn = byId<HTMLButtonElement>("submit");
  const clearBtn = byId<HTMLButtonElement>("clear");
  const rolloutsBtn = byId<HTMLButtonElement>("rollouts");

  const api = new TeachApi(window.location.origin.replace(/:\d+$/, ":8000"));
  const store = new SessionStore(api);
  const sceneCtx = sceneCanvas.getContext("2d")!;
  const chartCtx = chartCanvas.getContext("2d")!;

  let pointerDown = false;
  let rawStroke: Point[] = [];
  let strokeTimes: number[] = [];

  function viewport(): Viewport | null {
    const world = store.view.world;
    if (!world) return null;
    return new Viewport(world.bounds, sceneCanvas.width, sceneCanvas.height);
  }

  function canvasPoint(ev: PointerEvent): Point {
    const rect = sceneCanvas.getBoundingClientRect();
    return [
      ((ev.clientX - rect.left) / rect.width) * sceneCanvas.width,
      ((ev.clientY - rect.top) / rect.height) * sceneCanvas.height,
    ];
  }

  sceneCanvas.addEventListener("pointerdown", (ev) => {
    if (!store.drawingEnabled) return;
    pointerDown = true;
    rawStroke = [canvasPoint(ev)];
    strokeTimes = [performance.now() / 1000];
    store.clearDrawing();
  });

  sceneCanvas.addEventListener("pointermove", (ev) => {
    if (!pointerDown || !store.drawingEnabled) return;
    rawStroke.push(canvasPoint(ev));
    strokeTimes.push(performance.now() / 1000);
  });

  sceneCanvas.addEventListener("pointerup", () => {
    pointerDown = false;
    const vp = viewport();
    if (!vp || rawStroke.length === 0) return;
    const pixels = downsamplePolyline(rawStroke, MIN_PIXEL_SPACING);
    store.clearDrawing();
    for (const px of pixels) {
      store.addDrawPoint(vp.toWorld(px));
    }
    rawStroke = [];
  });

  queryBtn.addEventListener("click", () => {
    store.requestQuery().catch((err) => {
      bannerEl.textContent = String(err);
    });
  });

  submitBtn.addEventListener("click", () => {
    store.submitDrawing().catch((err) => {
      bannerEl.textContent = String(err);
    });
  });

  clearBtn.addEventListener("click", () => store.clearDrawing());

  rolloutsBtn.addEventListener("click", () => {
    store.loadRollouts(5, "mean").catch((err) => {
      bannerEl.textContent = String(err);
    });
  });

  store.subscribe((view) => {
    statusEl.textContent = view.status;
    infoEl.textContent =
      `iteration ${view.iteration} | ${view.datasetSize} samples` +
      (view.entropy !== null ? ` | H2(q) ${view.entropy.toFixed(3)}` : "");
    bannerEl.textContent = view.banner ?? (view.drawingReason ?? "");
    queryBtn.disabled = view.status !== "idle" || !view.mutationsEnabled;
    submitBtn.disabled = !(
      view.status === "awaiting_demo" &&
      view.drawingValid &&
      view.mutationsEnabled
    );
    clearBtn.disabled = view.drawing.length === 0;
    renderScene(sceneCtx, view, sceneCanvas.width, sceneCanvas.height);
    renderHistoryChart(
      chartCtx,
      view.history.map((h) => ({ iteration: h.iteration, entropy: h.entropy })),
      chartCanvas.width,
      chartCanvas.height,
    );
  });

  store
    .connect()
    .catch((err) => {
      bannerEl.textContent = `failed to start a session: ${String(err)}`;
    });
}

if (typeof document !== "undefined") {
  document.addEventListener("DOMContentLoaded", boot);
}
