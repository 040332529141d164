/** Typed client over the documented JSON API; the UI's only backend access. */

import type { StrokePayload, MarkerPixel } from "./raster.js";

export interface ProjectInfo {
  v: number;
  dataset_root: string;
  classes: number[];
  splits: Record<string, number>;
  selected: string[];
  marked: string[];
  has_model: boolean;
  model_layers: number[];
  classifier: { kind: string } | null;
  network_config: unknown | null;
}

export interface ImageEntry {
  id: string;
  label: number;
  thumbnail: string;
  raw: string;
}

export interface ProjectionPoint {
  id: string;
  x: number;
  y: number;
  label: number | null;
}

export interface Job {
  v: number;
  id: string;
  kind: string;
  status: "queued" | "running" | "done" | "error";
  progress: number;
  message: string;
  error: string | null;
}

export interface MetricsEntry {
  precision: number;
  recall: number;
  f_score: number;
  tp: number;
  fp: number;
  fn: number;
  tn: number;
  degenerate: boolean;
  kind?: string;
  split?: string;
  [key: string]: unknown;
}

export interface MisclassifiedItem {
  id: string;
  predicted: number;
  truth: number;
}

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  /** Every response status flows through onResponse (used by tests). */
  onResponse: ((url: string, status: number) => void) | null = null;

  constructor(
    private base: string = "",
    private fetchImpl: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async request(path: string, init?: RequestInit): Promise<Response> {
    const url = this.base + path;
    const response = await this.fetchImpl(url, init);
    if (this.onResponse) this.onResponse(url, response.status);
    return response;
  }

  private async json<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await this.request(path, init);
    if (!response.ok) {
      let message = `${response.status} on ${path}`;
      try {
        const body = await response.json();
        if (body && body.message) message = body.message;
      } catch {
        /* non-JSON error body */
      }
      throw new ApiError(response.status, message);
    }
    return (await response.json()) as T;
  }

  getProject(): Promise<ProjectInfo> {
    return this.json("/api/project");
  }

  async listImages(split: string): Promise<ImageEntry[]> {
    const doc = await this.json<{ images: ImageEntry[] }>(
      `/api/images?split=${encodeURIComponent(split)}`);
    return doc.images;
  }

  /** Cached embedding, or null when none was computed yet (404). */
  async getProjection(space: string, split: string): Promise<ProjectionPoint[] | null> {
    const response = await this.request(
      `/api/projection?space=${encodeURIComponent(space)}&split=${encodeURIComponent(split)}`);
    if (response.status === 404) return null;
    if (!response.ok) throw new ApiError(response.status, `projection ${space}`);
    const doc = await response.json();
    return doc.points as ProjectionPoint[];
  }

  async startProjection(space: string, split: string, iterations?: number): Promise<string> {
    const body: Record<string, unknown> = { space, split };
    if (iterations !== undefined) body.iterations = iterations;
    const doc = await this.json<{ job_id: string }>("/api/projection", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
    return doc.job_id;
  }

  async setSelection(ids: string[]): Promise<string[]> {
    const doc = await this.json<{ ids: string[] }>("/api/selection", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ ids }),
    });
    return doc.ids;
  }

  /** PUT the payload verbatim; the server stores the exact bytes. */
  async putMarkers(imageId: string, payload: string): Promise<number> {
    const doc = await this.json<{ pixels: number }>(
      `/api/markers/${encodeURIComponent(imageId)}`, {
        method: "PUT",
        headers: { "content-type": "application/json" },
        body: payload,
      });
    return doc.pixels;
  }

  /** Raw payload text exactly as saved, or null when the image has none. */
  async getMarkersRaw(imageId: string): Promise<string | null> {
    const response = await this.request(`/api/markers/${encodeURIComponent(imageId)}`);
    if (response.status === 404) return null;
    if (!response.ok) throw new ApiError(response.status, `markers ${imageId}`);
    return await response.text();
  }

  async getMarkers(imageId: string): Promise<StrokePayload | null> {
    const raw = await this.getMarkersRaw(imageId);
    return raw === null ? null : (JSON.parse(raw) as StrokePayload);
  }

  async rasterizeEcho(imageId: string, payload: string): Promise<MarkerPixel[]> {
    const doc = await this.json<{ pixels: MarkerPixel[] }>(
      `/api/markers/${encodeURIComponent(imageId)}/rasterize`, {
        method: "POST",
        headers: { "content-type": "application/json" },
        body: payload,
      });
    return doc.pixels;
  }

  async startLearn(config?: unknown, seed?: number): Promise<string> {
    const body: Record<string, unknown> = {};
    if (config !== undefined) body.config = config;
    if (seed !== undefined) body.seed = seed;
    const doc = await this.json<{ job_id: string }>("/api/learn", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
    return doc.job_id;
  }

  async startClassifier(options: Record<string, unknown>): Promise<string> {
    const doc = await this.json<{ job_id: string }>("/api/classifier", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(options),
    });
    return doc.job_id;
  }

  getJob(jobId: string): Promise<Job> {
    return this.json(`/api/jobs/${encodeURIComponent(jobId)}`);
  }

  async getMetrics(): Promise<{ latest: MetricsEntry; history: MetricsEntry[] } | null> {
    const response = await this.request("/api/metrics");
    if (response.status === 404) return null;
    if (!response.ok) throw new ApiError(response.status, "metrics");
    return await response.json();
  }

  async getMisclassified(split: string): Promise<MisclassifiedItem[]> {
    const doc = await this.json<{ items: MisclassifiedItem[] }>(
      `/api/misclassified?split=${encodeURIComponent(split)}`);
    return doc.items;
  }

  activationUrl(imageId: string, layer: number, channel: number): string {
    return `${this.base}/api/activations/${encodeURIComponent(imageId)}` +
      `/layer/${layer}?channel=${channel}`;
  }

  rawUrl(imageId: string): string {
    return `${this.base}/api/images/${encodeURIComponent(imageId)}/raw`;
  }

  thumbnailUrl(imageId: string): string {
    return `${this.base}/api/images/${encodeURIComponent(imageId)}/thumbnail`;
  }
}
