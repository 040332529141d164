/** Training & inspection panel rendering: metrics table, misclassified list,
 * activation viewer. Pure DOM construction so the pieces are testable. */

import type { MetricsEntry, MisclassifiedItem } from "./api.js";

export function renderMetricsTable(latest: MetricsEntry): HTMLTableElement {
  const table = document.createElement("table");
  table.className = "metrics";
  const head = table.insertRow();
  for (const name of ["Precision", "Recall", "F-score"]) {
    const th = document.createElement("th");
    th.textContent = name;
    head.appendChild(th);
  }
  const row = table.insertRow();
  for (const value of [latest.precision, latest.recall, latest.f_score]) {
    row.insertCell().textContent = value.toFixed(3);
  }
  const counts = table.insertRow();
  const cell = counts.insertCell();
  cell.colSpan = 3;
  cell.className = "counts";
  cell.textContent =
    `tp ${latest.tp} / fp ${latest.fp} / fn ${latest.fn} / tn ${latest.tn}` +
    (latest.degenerate ? " (degenerate)" : "");
  return table;
}

export function renderMisclassifiedList(
  items: MisclassifiedItem[],
  thumbnailUrl: (id: string) => string,
  onOpen: (id: string) => void,
): HTMLElement {
  const list = document.createElement("div");
  list.className = "misclassified";
  if (!items.length) {
    const empty = document.createElement("p");
    empty.className = "empty";
    empty.textContent = "No misclassified images in this split.";
    list.appendChild(empty);
    return list;
  }
  for (const item of items) {
    const entry = document.createElement("button");
    entry.className = "mis-entry";
    entry.title = `open ${item.id} in the marker editor`;
    const img = document.createElement("img");
    img.src = thumbnailUrl(item.id);
    img.alt = item.id;
    const caption = document.createElement("span");
    caption.textContent = `${item.id}: predicted ${item.predicted}, true ${item.truth}`;
    entry.append(img, caption);
    entry.addEventListener("click", () => onOpen(item.id));
    list.appendChild(entry);
  }
  return list;
}

export interface ActivationViewer {
  root: HTMLElement;
  setTarget(imageId: string, layer: number, channels: number): void;
}

export function createActivationViewer(
  activationUrl: (id: string, layer: number, channel: number) => string,
): ActivationViewer {
  const root = document.createElement("div");
  root.className = "activation-viewer";
  const img = document.createElement("img");
  img.className = "activation";
  const slider = document.createElement("input");
  slider.type = "range";
  slider.min = "0";
  slider.value = "0";
  const label = document.createElement("span");
  label.className = "channel-label";
  root.append(img, slider, label);
  let current: { imageId: string; layer: number } | null = null;
  const refresh = () => {
    if (!current) return;
    const channel = Number(slider.value);
    label.textContent = `channel ${channel}`;
    img.src = activationUrl(current.imageId, current.layer, channel);
  };
  slider.addEventListener("input", refresh);
  return {
    root,
    setTarget(imageId: string, layer: number, channels: number): void {
      current = { imageId, layer };
      slider.max = String(Math.max(channels - 1, 0));
      if (Number(slider.value) >= channels) slider.value = "0";
      refresh();
    },
  };
}
