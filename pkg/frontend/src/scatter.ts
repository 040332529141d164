/**
 * Canvas scatter of an embedding with click and lasso selection.
 *
 * Click toggles the nearest point within a hit radius; dragging sweeps a
 * lasso polygon and selects every point inside it. Hover reports the point
 * under the cursor so the app can show its thumbnail.
 */

import type { ProjectionPoint } from "./api.js";
import { classColor } from "./colors.js";

export function pointInPolygon(
  x: number, y: number, polygon: [number, number][],
): boolean {
  let inside = false;
  for (let i = 0, j = polygon.length - 1; i < polygon.length; j = i++) {
    const [xi, yi] = polygon[i];
    const [xj, yj] = polygon[j];
    const crosses = (yi > y) !== (yj > y) &&
      x < ((xj - xi) * (y - yi)) / (yj - yi) + xi;
    if (crosses) inside = !inside;
  }
  return inside;
}

export interface ScatterCallbacks {
  onSelectionChange?: (ids: string[]) => void;
  onHover?: (point: ProjectionPoint | null, clientX: number, clientY: number) => void;
}

interface Placed {
  point: ProjectionPoint;
  px: number;
  py: number;
}

const HIT_RADIUS = 8;
const LASSO_MIN_DRAG = 6;

export class ScatterView {
  private points: ProjectionPoint[] = [];
  private placed: Placed[] = [];
  private selected = new Set<string>();
  private lasso: [number, number][] | null = null;
  private downAt: [number, number] | null = null;

  constructor(
    private canvas: HTMLCanvasElement,
    private callbacks: ScatterCallbacks = {},
  ) {
    canvas.addEventListener("pointerdown", (e) => this.onDown(e));
    canvas.addEventListener("pointermove", (e) => this.onMove(e));
    canvas.addEventListener("pointerup", (e) => this.onUp(e));
    canvas.addEventListener("pointerleave", () => {
      if (this.callbacks.onHover) this.callbacks.onHover(null, 0, 0);
    });
  }

  setData(points: ProjectionPoint[]): void {
    this.points = points;
    this.layout();
    this.draw();
  }

  getSelection(): string[] {
    return [...this.selected].sort();
  }

  setSelection(ids: string[]): void {
    this.selected = new Set(ids);
    this.draw();
  }

  private layout(): void {
    const { width, height } = this.canvas;
    const pad = 20;
    if (!this.points.length) {
      this.placed = [];
      return;
    }
    const xs = this.points.map((p) => p.x);
    const ys = this.points.map((p) => p.y);
    const xmin = Math.min(...xs), xmax = Math.max(...xs);
    const ymin = Math.min(...ys), ymax = Math.max(...ys);
    const sx = (width - 2 * pad) / Math.max(xmax - xmin, 1e-9);
    const sy = (height - 2 * pad) / Math.max(ymax - ymin, 1e-9);
    this.placed = this.points.map((point) => ({
      point,
      px: pad + (point.x - xmin) * sx,
      py: pad + (point.y - ymin) * sy,
    }));
  }

  private draw(): void {
    const ctx = this.canvas.getContext("2d");
    if (!ctx) return;
    ctx.clearRect(0, 0, this.canvas.width, this.canvas.height);
    for (const { point, px, py } of this.placed) {
      ctx.beginPath();
      ctx.arc(px, py, 4, 0, 2 * Math.PI);
      ctx.fillStyle = classColor(point.label);
      ctx.fill();
      if (this.selected.has(point.id)) {
        ctx.lineWidth = 2;
        ctx.strokeStyle = "#111";
        ctx.stroke();
      }
    }
    if (this.lasso && this.lasso.length > 1) {
      ctx.beginPath();
      ctx.moveTo(this.lasso[0][0], this.lasso[0][1]);
      for (const [x, y] of this.lasso.slice(1)) ctx.lineTo(x, y);
      ctx.setLineDash([4, 3]);
      ctx.strokeStyle = "#555";
      ctx.lineWidth = 1;
      ctx.stroke();
      ctx.setLineDash([]);
    }
  }

  private eventPos(e: PointerEvent): [number, number] {
    const rect = this.canvas.getBoundingClientRect();
    return [
      ((e.clientX - rect.left) / rect.width) * this.canvas.width,
      ((e.clientY - rect.top) / rect.height) * this.canvas.height,
    ];
  }

  private nearest(x: number, y: number): Placed | null {
    let best: Placed | null = null;
    let bestDist = HIT_RADIUS * HIT_RADIUS;
    for (const placed of this.placed) {
      const d = (placed.px - x) ** 2 + (placed.py - y) ** 2;
      if (d <= bestDist) {
        best = placed;
        bestDist = d;
      }
    }
    return best;
  }

  private onDown(e: PointerEvent): void {
    const [x, y] = this.eventPos(e);
    this.downAt = [x, y];
    this.lasso = [[x, y]];
    this.canvas.setPointerCapture(e.pointerId);
  }

  private onMove(e: PointerEvent): void {
    const [x, y] = this.eventPos(e);
    if (this.lasso && this.downAt) {
      const dragged = Math.hypot(x - this.downAt[0], y - this.downAt[1]);
      this.lasso.push([x, y]);
      if (dragged > LASSO_MIN_DRAG) this.draw();
      return;
    }
    if (this.callbacks.onHover) {
      const hit = this.nearest(x, y);
      this.callbacks.onHover(hit ? hit.point : null, e.clientX, e.clientY);
    }
  }

  private onUp(e: PointerEvent): void {
    const [x, y] = this.eventPos(e);
    const lasso = this.lasso;
    const downAt = this.downAt;
    this.lasso = null;
    this.downAt = null;
    this.canvas.releasePointerCapture(e.pointerId);
    if (!lasso || !downAt) return;
    const dragged = Math.hypot(x - downAt[0], y - downAt[1]);
    if (lasso.length < 3 || dragged <= LASSO_MIN_DRAG) {
      // click: toggle nearest point
      const hit = this.nearest(x, y);
      if (hit) {
        if (this.selected.has(hit.point.id)) this.selected.delete(hit.point.id);
        else this.selected.add(hit.point.id);
        this.emitSelection();
      }
    } else {
      for (const placed of this.placed) {
        if (pointInPolygon(placed.px, placed.py, lasso)) {
          this.selected.add(placed.point.id);
        }
      }
      this.emitSelection();
    }
    this.draw();
  }

  private emitSelection(): void {
    if (this.callbacks.onSelectionChange) {
      this.callbacks.onSelectionChange(this.getSelection());
    }
  }
}
