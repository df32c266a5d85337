import { Client } from "./api.js";
import { Controller, ControllerElements } from "./controller.js";

function grab<T extends HTMLElement>(id: string): T {
  const el = document.getElementById(id);
  if (el === null) throw new Error(`missing element #${id}`);
  return el as T;
}

const base =
  new URLSearchParams(window.location.search).get("api") ??
  "http://localhost:8000";

const els: ControllerElements = {
  prefixInput: grab<HTMLInputElement>("prefix"),
  imageSelect: grab<HTMLSelectElement>("image-select"),
  noiseToggle: grab<HTMLInputElement>("noise-toggle"),
  completionsList: grab<HTMLElement>("completions"),
  instancesPanel: grab<HTMLElement>("instances"),
  statusLine: grab<HTMLElement>("status"),
};

const controller = new Controller(new Client(base), els);
void controller.start();
