/**
 * Scripted end-to-end session against a live service: select 4 images,
 * draw markers, learn, train a classifier, view metrics, and open one
 * misclassified image - asserting every API call in the session returns 2xx.
 */

import { spawn, spawnSync, ChildProcess } from "node:child_process";
import { mkdtempSync, rmSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { ApiClient } from "../src/api.js";
import { pollJob } from "../src/jobs.js";
import { rasterizeStrokes, StrokePayload } from "../src/raster.js";

const FLIM = process.env.FLIM_BIN ?? "flim";
const PORT = 8400 + (process.pid % 400);
const BASE = `http://127.0.0.1:${PORT}`;

const CONFIG = {
  input_bands: 3,
  layers: [{ patch_size: 3, total_filters: 4, pool_window: 3,
             pool_stride: 2, batch_norm: true }],
};

function crossPayload(imageId: string, label: number, size = 32): StrokePayload {
  const margin = size / 8;
  const mid = size / 2;
  return {
    v: 1,
    image_id: imageId,
    strokes: [
      { id: "h", points: [[margin, mid], [size - margin, mid]], radius: 2, label },
      { id: "v", points: [[mid, margin], [mid, size - margin]], radius: 2, label },
    ],
  };
}

let server: ChildProcess | null = null;
let workdir = "";

async function waitForServer(timeoutMs = 30000): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  for (;;) {
    try {
      const response = await fetch(`${BASE}/api/project`);
      if (response.ok) return;
    } catch {
      /* not up yet */
    }
    if (Date.now() > deadline) throw new Error("service did not come up");
    await new Promise((resolve) => setTimeout(resolve, 250));
  }
}

beforeAll(async () => {
  workdir = mkdtempSync(join(tmpdir(), "flim-ui-test-"));
  const data = join(workdir, "data");
  const gen = spawnSync(FLIM, ["datagen", "--out", data, "--tiles-per-class", "12",
                               "--size", "32", "--seed", "3"], { encoding: "utf-8" });
  if (gen.status !== 0) {
    throw new Error(`datagen failed: ${gen.stderr || gen.stdout}`);
  }
  server = spawn(FLIM, ["serve", "--project", join(workdir, "proj"),
                        "--dataset", data, "--port", String(PORT),
                        "--train", "14", "--val", "6", "--seed", "2"],
                 { stdio: "ignore" });
  await waitForServer();
}, 60000);

afterAll(() => {
  if (server) server.kill("SIGTERM");
  if (workdir) rmSync(workdir, { recursive: true, force: true });
});

describe("workflow smoke test", () => {
  it("completes the select-mark-learn-inspect loop with every call 2xx", async () => {
    const statuses: { url: string; status: number }[] = [];
    const client = new ApiClient(BASE);
    client.onResponse = (url, status) => statuses.push({ url, status });

    // discover images and pick 2 per class from the training split
    const project = await client.getProject();
    expect(project.classes).toEqual([1, 2]);
    const images = await client.listImages("train");
    const byClass = new Map<number, string[]>();
    for (const image of images) {
      const list = byClass.get(image.label) ?? [];
      if (list.length < 2) list.push(image.id);
      byClass.set(image.label, list);
    }
    const picked = [...(byClass.get(1) ?? []), ...(byClass.get(2) ?? [])];
    expect(picked.length).toBe(4);

    // select the 4 images
    const selected = await client.setSelection(picked);
    expect(selected).toEqual([...picked].sort());

    // draw markers on each: PUT, then byte-identical GET, then echo parity
    for (const imageId of picked) {
      const label = images.find((img) => img.id === imageId)!.label;
      const payload = JSON.stringify(crossPayload(imageId, label));
      const pixels = await client.putMarkers(imageId, payload);
      expect(pixels).toBeGreaterThan(0);
      const raw = await client.getMarkersRaw(imageId);
      expect(raw).toBe(payload);
      const echoed = await client.rasterizeEcho(imageId, payload);
      const preview = rasterizeStrokes(crossPayload(imageId, label).strokes, 32, 32);
      expect(echoed).toEqual(preview);
    }

    // learn, then train a classifier, polling both jobs
    const learnJob = await client.startLearn(CONFIG, 1);
    await pollJob(client, learnJob, { intervalMs: 100, timeoutMs: 120000 });
    const clfJob = await client.startClassifier({ kind: "svm", seed: 0 });
    await pollJob(client, clfJob, { intervalMs: 100, timeoutMs: 120000 });

    // metrics table data
    const metrics = await client.getMetrics();
    expect(metrics).not.toBeNull();
    expect(metrics!.latest.f_score).toBeGreaterThanOrEqual(0);
    expect(metrics!.latest.precision).toBeLessThanOrEqual(1);

    // misclassified list; open one image (fall back to a val image when the
    // classifier is perfect on this tiny fixture)
    const items = await client.getMisclassified("val");
    const valImages = await client.listImages("val");
    const toOpen = items.length ? items[0].id : valImages[0].id;
    const rawImage = await fetch(client.rawUrl(toOpen));
    expect(rawImage.status).toBe(200);
    statuses.push({ url: client.rawUrl(toOpen), status: rawImage.status });
    // active-learning step: add markers to the opened image
    const label = valImages.find((img) => img.id === toOpen)?.label
      ?? items[0]?.truth ?? 1;
    await client.putMarkers(toOpen, JSON.stringify(crossPayload(toOpen, label)));
    const reloaded = await client.getMarkers(toOpen);
    expect(reloaded?.strokes.length).toBe(2);

    // one activation heat map for a marked image
    const activation = await fetch(client.activationUrl(picked[0], 1, 0));
    expect(activation.status).toBe(200);
    statuses.push({ url: "activation", status: activation.status });

    // the whole scripted session used only 2xx responses
    const bad = statuses.filter((s) => s.status < 200 || s.status >= 300);
    expect(bad).toEqual([]);
    expect(statuses.length).toBeGreaterThan(20);
  }, 180000);
});
