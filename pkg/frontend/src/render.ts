/**
 * Canvas scene painter: heatmap raster, obstacles, goal, q ellipses with
 * weight-proportional opacity, the pending query marker with its iteration
 * index, the in-progress drawing, and rollout traces.
 */

import type { GridResponse, QComponent, RolloutTrace } from "./api";
import { colorFor, normalize } from "./colormap";
import { covarianceEllipse, Viewport, type Point, type WorldGeometry } from "./geometry";
import type { ViewState } from "./state";

export function renderScene(
  ctx: CanvasRenderingContext2D,
  view: ViewState,
  width: number,
  height: number,
): void {
  ctx.clearRect(0, 0, width, height);
  if (view.world === null) {
    ctx.fillStyle = "#202124";
    ctx.fillRect(0, 0, width, height);
    return;
  }
  const vp = new Viewport(view.world.bounds, width, height);
  if (view.heatmap !== null) {
    drawHeatmap(ctx, view.heatmap, vp);
  } else {
    ctx.fillStyle = "#2b2d31";
    ctx.fillRect(0, 0, width, height);
  }
  drawObstacles(ctx, view.world, vp);
  drawGoal(ctx, view.world, vp);
  for (const comp of view.qComponents) {
    drawEllipse(ctx, comp, vp, maxWeight(view.qComponents));
  }
  for (const trace of view.rollouts) {
    drawRollout(ctx, trace, vp);
  }
  if (view.queryPoint !== null) {
    drawQueryMarker(ctx, view.queryPoint, view.iteration + 1, vp);
  }
  if (view.drawing.length > 0) {
    drawPolyline(ctx, view.drawing, vp, view.drawingValid ? "#ff4d4d" : "#ff00aa");
  }
}

function maxWeight(comps: QComponent[]): number {
  return comps.reduce((m, c) => Math.max(m, c.weight), 1e-12);
}

function drawHeatmap(ctx: CanvasRenderingContext2D, grid: GridResponse, vp: Viewport): void {
  const res = grid.resolution;
  const cellW = vp.width / res;
  const cellH = vp.height / res;
  for (let i = 0; i < res; i++) {
    for (let j = 0; j < res; j++) {
      const t = normalize(grid.values[i][j], grid.vmin, grid.vmax);
      const [r, g, b] = colorFor(t);
      ctx.fillStyle = `rgb(${r},${g},${b})`;
      // values[i][j] sits at world (xs[i], ys[j]); flip y for the canvas
      ctx.fillRect(i * cellW, vp.height - (j + 1) * cellH, cellW + 1, cellH + 1);
    }
  }
}

function drawObstacles(ctx: CanvasRenderingContext2D, world: WorldGeometry, vp: Viewport): void {
  ctx.save();
  ctx.strokeStyle = "#ffffff";
  ctx.setLineDash([6, 4]);
  ctx.lineWidth = 1.5;
  for (const o of world.obstacles) {
    const [x0, y0] = vp.toCanvas([o.min[0], o.max[1]]);
    const [x1, y1] = vp.toCanvas([o.max[0], o.min[1]]);
    ctx.fillStyle = "rgba(20, 20, 30, 0.55)";
    ctx.fillRect(x0, y0, x1 - x0, y1 - y0);
    ctx.strokeRect(x0, y0, x1 - x0, y1 - y0);
  }
  ctx.restore();
}

function drawGoal(ctx: CanvasRenderingContext2D, world: WorldGeometry, vp: Viewport): void {
  const [x, y] = vp.toCanvas(world.goal);
  ctx.save();
  ctx.fillStyle = "#ffffff";
  ctx.font = "bold 16px sans-serif";
  ctx.textAlign = "center";
  ctx.beginPath();
  ctx.arc(x, y, 5, 0, 2 * Math.PI);
  ctx.fill();
  ctx.fillText("G", x, y - 10);
  ctx.restore();
}

function drawEllipse(
  ctx: CanvasRenderingContext2D,
  comp: QComponent,
  vp: Viewport,
  weightScale: number,
): void {
  const { rx, ry, angle } = covarianceEllipse(comp.covariance);
  const [cx, cy] = vp.toCanvas(comp.mean);
  const sx = vp.width / (vp.bounds.max[0] - vp.bounds.min[0]);
  const sy = vp.height / (vp.bounds.max[1] - vp.bounds.min[1]);
  const alpha = Math.max(0.12, comp.weight / weightScale);
  ctx.save();
  ctx.translate(cx, cy);
  ctx.rotate(-angle); // canvas y is flipped
  ctx.strokeStyle = `rgba(255, 80, 80, ${alpha.toFixed(3)})`;
  ctx.lineWidth = 2;
  ctx.beginPath();
  ctx.ellipse(0, 0, rx * sx, ry * sy, 0, 0, 2 * Math.PI);
  ctx.stroke();
  ctx.restore();
}

function drawQueryMarker(
  ctx: CanvasRenderingContext2D,
  point: Point,
  iteration: number,
  vp: Viewport,
): void {
  const [x, y] = vp.toCanvas(point);
  ctx.save();
  ctx.strokeStyle = "#ffd700";
  ctx.fillStyle = "#ffd700";
  ctx.lineWidth = 2;
  ctx.beginPath();
  ctx.moveTo(x - 7, y);
  ctx.lineTo(x + 7, y);
  ctx.moveTo(x, y - 7);
  ctx.lineTo(x, y + 7);
  ctx.stroke();
  ctx.font = "12px sans-serif";
  ctx.textAlign = "left";
  ctx.fillText(String(iteration), x + 9, y - 9);
  ctx.restore();
}

function drawPolyline(
  ctx: CanvasRenderingContext2D,
  points: Point[],
  vp: Viewport,
  color: string,
): void {
  ctx.save();
  ctx.strokeStyle = color;
  ctx.lineWidth = 2.5;
  ctx.beginPath();
  const [x0, y0] = vp.toCanvas(points[0]);
  ctx.moveTo(x0, y0);
  for (const p of points.slice(1)) {
    const [x, y] = vp.toCanvas(p);
    ctx.lineTo(x, y);
  }
  ctx.stroke();
  ctx.restore();
}

function drawRollout(ctx: CanvasRenderingContext2D, trace: RolloutTrace, vp: Viewport): void {
  const color = trace.success ? "rgba(120, 220, 120, 0.8)" : "rgba(230, 150, 60, 0.8)";
  drawPolyline(ctx, trace.states as Point[], vp, color);
}

/** Entropy history line chart on its own canvas. */
export function renderHistoryChart(
  ctx: CanvasRenderingContext2D,
  history: Array<{ iteration: number; entropy: number }>,
  width: number,
  height: number,
): void {
  ctx.clearRect(0, 0, width, height);
  ctx.fillStyle = "#17181c";
  ctx.fillRect(0, 0, width, height);
  if (history.length === 0) return;
  const pad = 28;
  const values = history.map((h) => h.entropy);
  const vmin = Math.min(...values);
  const vmax = Math.max(...values);
  const span = vmax - vmin || 1;
  const xStep = (width - 2 * pad) / Math.max(history.length - 1, 1);
  ctx.strokeStyle = "#7ad0ff";
  ctx.lineWidth = 2;
  ctx.beginPath();
  history.forEach((h, i) => {
    const x = pad + i * xStep;
    const y = height - pad - ((h.entropy - vmin) / span) * (height - 2 * pad);
    if (i === 0) ctx.moveTo(x, y);
    else ctx.lineTo(x, y);
  });
  ctx.stroke();
  ctx.fillStyle = "#d0d0d0";
  ctx.font = "11px sans-serif";
  history.forEach((h, i) => {
    const x = pad + i * xStep;
    const y = height - pad - ((h.entropy - vmin) / span) * (height - 2 * pad);
    ctx.beginPath();
    ctx.arc(x, y, 3, 0, 2 * Math.PI);
    ctx.fill();
    ctx.fillText(String(h.iteration), x - 3, height - 8);
  });
  ctx.fillText(vmax.toFixed(2), 2, pad);
  ctx.fillText(vmin.toFixed(2), 2, height - pad);
}
