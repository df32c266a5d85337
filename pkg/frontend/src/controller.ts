/** Wires the page together: typeahead with a debounce, stale-reply gates,
 * the context picker, and the instance panel. All numbers rendered come
 * straight from service responses. */

import { ApiError, Client, Completion, NOISE_ID } from "./api.js";
import { Debounced, debounce } from "./debounce.js";
import { LatestGate } from "./latest.js";
import {
  clearPanel,
  renderCompletions,
  renderImagePicker,
  renderInstances,
  renderStatus,
} from "./view.js";

export interface ControllerElements {
  prefixInput: HTMLInputElement;
  imageSelect: HTMLSelectElement;
  noiseToggle: HTMLInputElement;
  completionsList: HTMLElement;
  instancesPanel: HTMLElement;
  statusLine: HTMLElement;
}

export interface ControllerOptions {
  debounceMs?: number;
  /** How many classes the instance panel shows. */
  topInstances?: number;
}

export class Controller {
  private readonly completionsGate = new LatestGate();
  private readonly instancesGate = new LatestGate();
  private readonly onInput: Debounced<[]>;
  private readonly topInstances: number;
  private completions: Completion[] = [];

  constructor(
    private readonly client: Client,
    private readonly els: ControllerElements,
    opts: ControllerOptions = {},
  ) {
    this.topInstances = opts.topInstances ?? 10;
    this.onInput = debounce(() => this.refresh(), opts.debounceMs ?? 100);

    els.prefixInput.addEventListener("input", () => {
      if (els.prefixInput.value === "") {
        // empty prefix: no request at all, just clear the panels
        this.onInput.cancel();
        this.completionsGate.cancel();
        this.instancesGate.cancel();
        this.completions = [];
        clearPanel(els.completionsList);
        clearPanel(els.instancesPanel);
        return;
      }
      this.onInput();
    });

    els.prefixInput.addEventListener("keydown", (ev: KeyboardEvent) => {
      if (ev.key !== "Enter") return;
      ev.preventDefault();
      this.acceptTop();
    });

    els.imageSelect.addEventListener("change", () => this.contextChanged());
    els.noiseToggle.addEventListener("change", () => {
      els.imageSelect.disabled = els.noiseToggle.checked;
      this.contextChanged();
    });
  }

  async start(): Promise<void> {
    try {
      const health = await this.client.health();
      renderStatus(this.els.statusLine, `service ok, model ${health.model_version}`);
    } catch (err) {
      this.reportError(err);
    }
    try {
      renderImagePicker(this.els.imageSelect, await this.client.images());
    } catch (err) {
      this.reportError(err);
    }
  }

  /** The id requests are made with; the toggle overrides the picker. */
  imageId(): string {
    if (this.els.noiseToggle.checked) return NOISE_ID;
    return this.els.imageSelect.value || NOISE_ID;
  }

  private refresh(): void {
    const prefix = this.els.prefixInput.value;
    if (prefix === "") return;
    this.requestCompletions(prefix);
    this.requestInstances(prefix);
  }

  private contextChanged(): void {
    const prefix = this.els.prefixInput.value;
    if (prefix === "") return;
    this.onInput.cancel();
    this.requestCompletions(prefix);
  }

  private acceptTop(): void {
    const top = this.completions[0];
    if (top === undefined) return;
    this.onInput.cancel();
    this.els.prefixInput.value = top.text;
    this.requestCompletions(top.text);
    this.requestInstances(top.text);
  }

  private requestCompletions(prefix: string): void {
    this.completionsGate.run(
      (signal) => this.client.complete(prefix, this.imageId(), { signal }),
      (comps) => {
        this.completions = comps;
        renderCompletions(this.els.completionsList, comps);
      },
      (err) => this.reportError(err),
    );
  }

  private requestInstances(query: string): void {
    this.instancesGate.run(
      (signal) => this.client.instances(query, { top: this.topInstances, signal }),
      (result) => renderInstances(this.els.instancesPanel, result, this.topInstances),
      (err) => this.reportError(err),
    );
  }

  private reportError(err: unknown): void {
    const text =
      err instanceof ApiError
        ? `${err.code}: ${err.message}`
        : `request failed: ${String(err)}`;
    renderStatus(this.els.statusLine, text, true);
  }
}
