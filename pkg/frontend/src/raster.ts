/**
 * Client-side stroke rasterization preview.
 *
 * This must reproduce the server's rasterizer pixel-for-pixel (the server is
 * the authority; parity is verified against fixtures and the echo endpoint):
 * coordinates round half-up, points clamp into bounds, segments walk with
 * Bresenham, the brush stamps integer offsets with dx^2+dy^2 <= r^2, and
 * later strokes overwrite earlier labels. Output sorts by (y, x).
 */

export interface Stroke {
  id: string;
  points: [number, number][];
  radius: number;
  label: number;
}

export interface StrokePayload {
  v: number;
  image_id: string;
  strokes: Stroke[];
}

export type MarkerPixel = [number, number, number]; // x, y, label

function roundHalfUp(v: number): number {
  return Math.floor(v + 0.5);
}

function clamp(v: number, lo: number, hi: number): number {
  return Math.min(Math.max(v, lo), hi);
}

function bresenham(x0: number, y0: number, x1: number, y1: number): [number, number][] {
  const points: [number, number][] = [];
  const dx = Math.abs(x1 - x0);
  const dy = -Math.abs(y1 - y0);
  const sx = x0 < x1 ? 1 : -1;
  const sy = y0 < y1 ? 1 : -1;
  let err = dx + dy;
  let x = x0;
  let y = y0;
  for (;;) {
    points.push([x, y]);
    if (x === x1 && y === y1) break;
    const e2 = 2 * err;
    if (e2 >= dy) {
      err += dy;
      x += sx;
    }
    if (e2 <= dx) {
      err += dx;
      y += sy;
    }
  }
  return points;
}

export function rasterizeStrokes(
  strokes: Stroke[],
  width: number,
  height: number,
): MarkerPixel[] {
  const labelAt = new Map<number, number>(); // y*width+x -> label
  for (const stroke of strokes) {
    if (!stroke.points.length) continue;
    const centers = stroke.points.map(([px, py]) => [
      clamp(roundHalfUp(px), 0, width - 1),
      clamp(roundHalfUp(py), 0, height - 1),
    ] as [number, number]);
    let visited: [number, number][];
    if (centers.length === 1) {
      visited = [centers[0]];
    } else {
      visited = [];
      for (let i = 0; i + 1 < centers.length; i++) {
        visited.push(...bresenham(centers[i][0], centers[i][1],
                                  centers[i + 1][0], centers[i + 1][1]));
      }
    }
    const r = stroke.radius;
    const ri = Math.floor(r);
    const r2 = r * r;
    for (const [cx, cy] of visited) {
      for (let dy = -ri; dy <= ri; dy++) {
        for (let dx = -ri; dx <= ri; dx++) {
          if (dx * dx + dy * dy > r2) continue;
          const x = cx + dx;
          const y = cy + dy;
          if (x >= 0 && x < width && y >= 0 && y < height) {
            labelAt.set(y * width + x, stroke.label);
          }
        }
      }
    }
  }
  if (labelAt.size === 0) {
    throw new Error("strokes rasterized to zero pixels");
  }
  const pixels: MarkerPixel[] = [];
  for (const [key, label] of labelAt.entries()) {
    pixels.push([key % width, Math.floor(key / width), label]);
  }
  pixels.sort((a, b) => a[1] - b[1] || a[0] - b[0]);
  return pixels;
}
