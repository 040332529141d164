/** App wiring: projection explorer, marker editor, training & inspection. */

import { ApiClient, ProjectInfo, ProjectionPoint } from "./api.js";
import { MarkerEditor } from "./editor.js";
import { pollJob } from "./jobs.js";
import { classColor } from "./colors.js";
import { createActivationViewer, renderMetricsTable, renderMisclassifiedList } from "./panel.js";
import { ScatterView } from "./scatter.js";

const client = new ApiClient("");

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

function setStatus(text: string, isError = false): void {
  const bar = el<HTMLElement>("status");
  bar.textContent = text;
  bar.classList.toggle("error", isError);
}

interface AppState {
  project: ProjectInfo | null;
  space: string;
  split: string;
  selection: string[];
  editor: MarkerEditor | null;
  openImage: string | null;
  imageSize: { width: number; height: number } | null;
}

const state: AppState = {
  project: null,
  space: "input",
  split: "train",
  selection: [],
  editor: null,
  openImage: null,
  imageSize: null,
};

let scatter: ScatterView;

async function refreshProject(): Promise<void> {
  state.project = await client.getProject();
  const info = state.project;
  el<HTMLElement>("project-info").textContent =
    `${info.dataset_root} | classes ${info.classes.join(", ")} | ` +
    Object.entries(info.splits).map(([k, v]) => `${k} ${v}`).join(" / ") +
    ` | model: ${info.has_model ? "learned" : "none"}` +
    ` | classifier: ${info.classifier ? info.classifier.kind : "none"}`;
  const spaceSelect = el<HTMLSelectElement>("space");
  const current = spaceSelect.value || state.space;
  spaceSelect.innerHTML = "";
  const spaces = ["input"];
  info.model_layers?.forEach((_: number, i: number) => spaces.push(`layer${i + 1}`));
  if (info.classifier && info.classifier.kind === "mlp") spaces.push("classifier");
  for (const space of spaces) {
    const option = document.createElement("option");
    option.value = space;
    option.textContent = space;
    spaceSelect.appendChild(option);
  }
  spaceSelect.value = spaces.includes(current) ? current : "input";
  state.space = spaceSelect.value;
  renderClassPicker(info.classes);
}

function renderClassPicker(classes: number[]): void {
  const holder = el<HTMLElement>("class-picker");
  holder.innerHTML = "";
  classes.forEach((label, index) => {
    const button = document.createElement("button");
    button.className = "class-chip";
    button.style.background = classColor(label);
    button.textContent = `class ${label}`;
    button.dataset.label = String(label);
    if (index === 0) button.classList.add("active");
    button.addEventListener("click", () => {
      holder.querySelectorAll(".class-chip").forEach((chip) =>
        chip.classList.remove("active"));
      button.classList.add("active");
      if (state.editor) state.editor.brushLabel = label;
    });
    holder.appendChild(button);
  });
}

async function loadProjection(): Promise<void> {
  const empty = el<HTMLElement>("projection-empty");
  const points = await client.getProjection(state.space, state.split);
  if (points === null) {
    empty.hidden = false;
    empty.textContent =
      `No ${state.space} embedding for the ${state.split} split yet - press Compute.`;
    scatter.setData([]);
    return;
  }
  empty.hidden = true;
  scatter.setData(points);
  scatter.setSelection(state.selection);
}

async function computeProjection(): Promise<void> {
  setStatus(`computing ${state.space} projection...`);
  try {
    const jobId = await client.startProjection(state.space, state.split);
    await pollJob(client, jobId, {
      onProgress: (job) => setStatus(
        `projection ${Math.round(job.progress * 100)}% ${job.message}`),
    });
    await loadProjection();
    setStatus("projection ready");
  } catch (err) {
    setStatus(`projection failed: ${err}`, true);
  }
}

function renderSelectionPanel(): void {
  const panel = el<HTMLElement>("selection-list");
  panel.innerHTML = "";
  for (const id of state.selection) {
    const chip = document.createElement("button");
    chip.className = "sel-chip";
    const img = document.createElement("img");
    img.src = client.thumbnailUrl(id);
    img.alt = id;
    const span = document.createElement("span");
    span.textContent = id;
    chip.append(img, span);
    chip.addEventListener("click", () => openEditor(id));
    panel.appendChild(chip);
  }
  el<HTMLElement>("selection-count").textContent =
    `${state.selection.length} selected`;
}

async function applySelection(): Promise<void> {
  try {
    state.selection = await client.setSelection(state.selection);
    renderSelectionPanel();
    setStatus(`selection saved (${state.selection.length} images)`);
  } catch (err) {
    setStatus(`selection rejected: ${err}`, true);
  }
}

async function openEditor(imageId: string): Promise<void> {
  const holder = el<HTMLElement>("editor-holder");
  holder.innerHTML = "";
  const canvas = document.createElement("canvas");
  holder.appendChild(canvas);
  const image = new Image();
  image.src = client.rawUrl(imageId);
  await image.decode();
  state.imageSize = { width: image.naturalWidth, height: image.naturalHeight };
  const scale = Math.max(2, Math.floor(480 / image.naturalWidth));
  const editor = new MarkerEditor(canvas, imageId,
    image.naturalWidth, image.naturalHeight, scale);
  editor.setImage(image);
  const activeChip = document.querySelector<HTMLElement>(".class-chip.active");
  editor.brushLabel = activeChip ? Number(activeChip.dataset.label) : 1;
  editor.brushRadius = Number(el<HTMLInputElement>("brush-radius").value);
  editor.onChange = (info) => {
    el<HTMLElement>("editor-state").textContent =
      `${imageId}: ${info.strokes} stroke(s)${info.dirty ? " (unsaved)" : ""}`;
  };
  const payload = await client.getMarkers(imageId);
  editor.loadPayload(payload);
  state.editor = editor;
  state.openImage = imageId;
  el<HTMLElement>("editor-section").hidden = false;
  el<HTMLElement>("editor-state").textContent = `${imageId}: loaded`;
  refreshActivationTarget();
}

async function saveMarkers(): Promise<void> {
  if (!state.editor) return;
  const editor = state.editor;
  try {
    const pixels = await client.putMarkers(editor.imageId, editor.serialize());
    editor.markSaved();
    setStatus(`saved markers for ${editor.imageId} (${pixels} pixels)`);
    await refreshProject();
  } catch (err) {
    // keep local strokes; the user can retry
    setStatus(`save failed, strokes kept locally: ${err}`, true);
  }
}

async function launchLearn(): Promise<void> {
  let config: unknown;
  const text = el<HTMLTextAreaElement>("config-json").value.trim();
  if (text) {
    try {
      config = JSON.parse(text);
    } catch (err) {
      setStatus(`config is not valid JSON: ${err}`, true);
      return;
    }
  }
  setStatus("learning filter banks...");
  try {
    const jobId = await client.startLearn(config);
    await pollJob(client, jobId, {
      onProgress: (job) => setStatus(
        `learn ${Math.round(job.progress * 100)}% ${job.message}`),
    });
    setStatus("learning done");
    await refreshProject();
    refreshActivationTarget();
  } catch (err) {
    setStatus(`learn failed: ${err}`, true);
  }
}

async function launchClassifier(): Promise<void> {
  const kind = el<HTMLSelectElement>("clf-kind").value;
  const options: Record<string, unknown> = { kind };
  if (kind === "mlp") {
    options.hidden_sizes = [64, 64];
    options.train_config = { epochs: 40, batch_size: 64,
                             learning_rate: 0.01, weight_decay: 0.001 };
  }
  setStatus(`training ${kind}...`);
  try {
    const jobId = await client.startClassifier(options);
    await pollJob(client, jobId, {
      onProgress: (job) => setStatus(
        `classifier ${Math.round(job.progress * 100)}% ${job.message}`),
    });
    setStatus("classifier trained");
    await refreshProject();
    await refreshMetrics();
    await refreshMisclassified();
  } catch (err) {
    setStatus(`training failed: ${err}`, true);
  }
}

async function refreshMetrics(): Promise<void> {
  const holder = el<HTMLElement>("metrics-holder");
  holder.innerHTML = "";
  const metrics = await client.getMetrics();
  if (!metrics) {
    holder.textContent = "No classifier trained yet.";
    return;
  }
  holder.appendChild(renderMetricsTable(metrics.latest));
}

async function refreshMisclassified(): Promise<void> {
  const holder = el<HTMLElement>("misclassified-holder");
  holder.innerHTML = "";
  const split = el<HTMLSelectElement>("mis-split").value;
  try {
    const items = await client.getMisclassified(split);
    holder.appendChild(renderMisclassifiedList(
      items, (id) => client.thumbnailUrl(id), (id) => void openEditor(id)));
  } catch (err) {
    holder.textContent = `Not available: ${err}`;
  }
}

const activationViewer = createActivationViewer(
  (id, layer, channel) => client.activationUrl(id, layer, channel));

function refreshActivationTarget(): void {
  const info = state.project;
  if (!info || !info.has_model || !state.openImage) return;
  const layers = info.model_layers ?? [];
  if (!layers.length) return;
  el<HTMLElement>("activation-section").hidden = false;
  activationViewer.setTarget(state.openImage, 1, layers[0]);
}

function wire(): void {
  scatter = new ScatterView(el<HTMLCanvasElement>("scatter"), {
    onSelectionChange: (ids) => {
      state.selection = ids;
      renderSelectionPanel();
    },
    onHover: (point, cx, cy) => {
      const tip = el<HTMLElement>("tooltip");
      if (!point) {
        tip.hidden = true;
        return;
      }
      tip.hidden = false;
      tip.style.left = `${cx + 12}px`;
      tip.style.top = `${cy + 12}px`;
      tip.innerHTML = "";
      const img = document.createElement("img");
      img.src = client.thumbnailUrl(point.id);
      const caption = document.createElement("div");
      caption.textContent = `${point.id} (class ${point.label})`;
      tip.append(img, caption);
    },
  });
  el<HTMLSelectElement>("space").addEventListener("change", (e) => {
    state.space = (e.target as HTMLSelectElement).value;
    void loadProjection();
  });
  el<HTMLSelectElement>("proj-split").addEventListener("change", (e) => {
    state.split = (e.target as HTMLSelectElement).value;
    void loadProjection();
  });
  el<HTMLButtonElement>("compute-projection").addEventListener("click",
    () => void computeProjection());
  el<HTMLButtonElement>("apply-selection").addEventListener("click",
    () => void applySelection());
  el<HTMLButtonElement>("save-markers").addEventListener("click",
    () => void saveMarkers());
  el<HTMLButtonElement>("undo-stroke").addEventListener("click", () => {
    state.editor?.undo();
  });
  el<HTMLInputElement>("brush-radius").addEventListener("input", (e) => {
    if (state.editor) {
      state.editor.brushRadius = Number((e.target as HTMLInputElement).value);
    }
  });
  el<HTMLInputElement>("erase-mode").addEventListener("change", (e) => {
    if (state.editor) {
      state.editor.eraseMode = (e.target as HTMLInputElement).checked;
    }
  });
  el<HTMLButtonElement>("launch-learn").addEventListener("click",
    () => void launchLearn());
  el<HTMLButtonElement>("launch-clf").addEventListener("click",
    () => void launchClassifier());
  el<HTMLSelectElement>("mis-split").addEventListener("change",
    () => void refreshMisclassified());
  el<HTMLElement>("activation-section").appendChild(activationViewer.root);
}

async function boot(): Promise<void> {
  wire();
  await refreshProject();
  state.selection = state.project?.selected ?? [];
  renderSelectionPanel();
  await loadProjection();
  await refreshMetrics();
  await refreshMisclassified();
  setStatus("ready");
}

boot().catch((err) => setStatus(`startup failed: ${err}`, true));
