/**
 * Marker editor: canvas overlay on the zoomed image.
 *
 * Brush strokes accumulate in image pixel coordinates; the preview overlay
 * renders the same rasterization the server will compute. Undo removes the
 * last stroke; the eraser removes the stroke under the cursor. Edits stay
 * local until save, and are retained if the save fails.
 */

import { rasterizeStrokes, Stroke, StrokePayload } from "./raster.js";
import { classColor } from "./colors.js";

export interface EditorState {
  dirty: boolean;
  strokes: number;
}

export class MarkerEditor {
  strokes: Stroke[] = [];
  brushRadius = 2;
  brushLabel = 1;
  eraseMode = false;
  onChange: ((state: EditorState) => void) | null = null;

  private active: Stroke | null = null;
  private nextId = 1;
  private dirty = false;
  private image: HTMLImageElement | null = null;

  constructor(
    private canvas: HTMLCanvasElement,
    public imageId: string,
    private width: number,
    private height: number,
    private scale = 6,
  ) {
    canvas.width = width * scale;
    canvas.height = height * scale;
    canvas.addEventListener("pointerdown", (e) => this.onDown(e));
    canvas.addEventListener("pointermove", (e) => this.onMove(e));
    canvas.addEventListener("pointerup", (e) => this.onUp(e));
  }

  setImage(img: HTMLImageElement): void {
    this.image = img;
    this.draw();
  }

  loadPayload(payload: StrokePayload | null): void {
    this.strokes = payload ? payload.strokes.map((s) => ({ ...s, points: [...s.points] })) : [];
    this.nextId = this.strokes.length + 1;
    this.dirty = false;
    this.emit();
    this.draw();
  }

  toPayload(): StrokePayload {
    return { v: 1, image_id: this.imageId, strokes: this.strokes };
  }

  serialize(): string {
    return JSON.stringify(this.toPayload());
  }

  markSaved(): void {
    this.dirty = false;
    this.emit();
  }

  undo(): void {
    if (this.strokes.pop()) {
      this.dirty = true;
      this.emit();
      this.draw();
    }
  }

  /** Remove the stroke whose path passes nearest to an image coordinate. */
  eraseAt(ix: number, iy: number): boolean {
    let bestIndex = -1;
    let bestDist = Infinity;
    this.strokes.forEach((stroke, index) => {
      for (const [px, py] of stroke.points) {
        const d = Math.hypot(px - ix, py - iy);
        if (d < bestDist) {
          bestDist = d;
          bestIndex = index;
        }
      }
    });
    if (bestIndex >= 0 && bestDist <= this.strokes[bestIndex].radius + 1.5) {
      this.strokes.splice(bestIndex, 1);
      this.dirty = true;
      this.emit();
      this.draw();
      return true;
    }
    return false;
  }

  private toImageCoords(e: PointerEvent): [number, number] {
    const rect = this.canvas.getBoundingClientRect();
    const x = ((e.clientX - rect.left) / rect.width) * this.width;
    const y = ((e.clientY - rect.top) / rect.height) * this.height;
    return [x, y];
  }

  private onDown(e: PointerEvent): void {
    const [x, y] = this.toImageCoords(e);
    if (this.eraseMode) {
      this.eraseAt(x, y);
      return;
    }
    this.active = {
      id: `s${this.nextId++}`,
      points: [[x, y]],
      radius: this.brushRadius,
      label: this.brushLabel,
    };
    this.canvas.setPointerCapture(e.pointerId);
  }

  private onMove(e: PointerEvent): void {
    if (!this.active) return;
    const [x, y] = this.toImageCoords(e);
    this.active.points.push([x, y]);
    this.drawLive(this.active);
  }

  private onUp(e: PointerEvent): void {
    if (!this.active) return;
    this.strokes.push(this.active);
    this.active = null;
    this.dirty = true;
    this.canvas.releasePointerCapture(e.pointerId);
    this.emit();
    this.draw();
  }

  private emit(): void {
    if (this.onChange) {
      this.onChange({ dirty: this.dirty, strokes: this.strokes.length });
    }
  }

  previewPixels() {
    if (!this.strokes.length) return [];
    return rasterizeStrokes(this.strokes, this.width, this.height);
  }

  draw(): void {
    const ctx = this.canvas.getContext("2d");
    if (!ctx) return;
    ctx.imageSmoothingEnabled = false;
    ctx.clearRect(0, 0, this.canvas.width, this.canvas.height);
    if (this.image) {
      ctx.drawImage(this.image, 0, 0, this.canvas.width, this.canvas.height);
    }
    ctx.globalAlpha = 0.65;
    for (const [x, y, label] of this.previewPixels()) {
      ctx.fillStyle = classColor(label);
      ctx.fillRect(x * this.scale, y * this.scale, this.scale, this.scale);
    }
    ctx.globalAlpha = 1.0;
  }

  private drawLive(stroke: Stroke): void {
    // cheap live feedback while dragging; full redraw happens on pointer-up
    const ctx = this.canvas.getContext("2d");
    if (!ctx) return;
    const last = stroke.points[stroke.points.length - 1];
    ctx.globalAlpha = 0.65;
    ctx.fillStyle = classColor(stroke.label);
    const r = Math.max(stroke.radius, 0.5) * this.scale;
    ctx.beginPath();
    ctx.arc(last[0] * this.scale, last[1] * this.scale, r, 0, 2 * Math.PI);
    ctx.fill();
    ctx.globalAlpha = 1.0;
  }
}
