/** DOM rendering. Every number shown here is the service's own digit
 * string; this module only lays things out. */

import { Completion, ImageInfo, InstancesResult } from "./api.js";

export function renderImagePicker(
  select: HTMLSelectElement,
  images: ImageInfo[],
): void {
  select.textContent = "";
  for (const img of images) {
    const opt = select.ownerDocument.createElement("option");
    opt.value = img.id;
    opt.textContent = `${img.id} (${img.instances.join(", ")})`;
    select.appendChild(opt);
  }
}

export function renderCompletions(root: HTMLElement, comps: Completion[]): void {
  root.textContent = "";
  const doc = root.ownerDocument;
  for (const comp of comps) {
    const row = doc.createElement("li");
    row.className = "completion";
    row.dataset.rank = String(comp.rank);

    const rank = doc.createElement("span");
    rank.className = "rank";
    rank.textContent = String(comp.rank);

    const text = doc.createElement("span");
    text.className = "text";
    text.textContent = comp.text;

    const logprob = doc.createElement("span");
    logprob.className = "logprob";
    logprob.textContent = comp.logprob;

    row.append(rank, text, logprob);
    root.appendChild(row);
  }
}

export function clearPanel(root: HTMLElement): void {
  root.textContent = "";
}

/** Horizontal probability bars for the highest-scoring classes, with a
 * marker line at the decision threshold. Rows at or above the threshold
 * get the `selected` class. */
export function renderInstances(
  root: HTMLElement,
  result: InstancesResult,
  topN = 10,
): void {
  root.textContent = "";
  const doc = root.ownerDocument;
  for (const entry of result.probs.slice(0, topN)) {
    const row = doc.createElement("div");
    row.className =
      entry.value >= result.threshold ? "instance selected" : "instance";

    const label = doc.createElement("span");
    label.className = "label";
    label.textContent = entry.label;

    const track = doc.createElement("div");
    track.className = "track";

    const bar = doc.createElement("div");
    bar.className = "bar";
    bar.style.width = `${entry.value * 100}%`;

    const marker = doc.createElement("div");
    marker.className = "threshold-marker";
    marker.style.left = `${result.threshold * 100}%`;
    marker.title = `threshold ${result.threshold}`;

    const prob = doc.createElement("span");
    prob.className = "prob";
    prob.textContent = entry.p;

    track.append(bar, marker);
    row.append(label, track, prob);
    root.appendChild(row);
  }
}

export function renderStatus(el: HTMLElement, text: string, isError = false): void {
  el.textContent = text;
  el.className = isError ? "status error" : "status";
}
