import { describe, expect, it } from "vitest";

import { InstancesResult } from "../src/api.js";
import {
  clearPanel,
  renderCompletions,
  renderImagePicker,
  renderInstances,
  renderStatus,
} from "../src/view.js";

function div(): HTMLElement {
  return document.createElement("div");
}

describe("renderCompletions", () => {
  it("shows rank, text, and the exact logprob string", () => {
    const root = div();
    renderCompletions(root, [
      { text: "desk lamp", logprob: "-0.30000000000000004", rank: 1 },
      { text: "desk", logprob: "-1.25", rank: 2 },
    ]);
    const rows = root.querySelectorAll(".completion");
    expect(rows).toHaveLength(2);
    expect(rows[0].querySelector(".rank")?.textContent).toBe("1");
    expect(rows[0].querySelector(".text")?.textContent).toBe("desk lamp");
    expect(rows[0].querySelector(".logprob")?.textContent).toBe(
      "-0.30000000000000004",
    );
    expect(rows[1].querySelector(".logprob")?.textContent).toBe("-1.25");
  });

  it("replaces previous rows on re-render", () => {
    const root = div();
    renderCompletions(root, [{ text: "a", logprob: "-1", rank: 1 }]);
    renderCompletions(root, [{ text: "b", logprob: "-2", rank: 1 }]);
    const rows = root.querySelectorAll(".completion");
    expect(rows).toHaveLength(1);
    expect(rows[0].querySelector(".text")?.textContent).toBe("b");
  });
});

describe("renderInstances", () => {
  const result = (probs: InstancesResult["probs"]): InstancesResult => ({
    probs,
    threshold: 0.5,
  });

  it("shows at most the top N classes", () => {
    const root = div();
    const probs = Array.from({ length: 12 }, (_, i) => ({
      label: `class${i}`,
      p: `0.${90 - i}`,
      value: Number(`0.${90 - i}`),
    }));
    renderInstances(root, result(probs), 10);
    expect(root.querySelectorAll(".instance")).toHaveLength(10);
  });

  it("renders verbatim probability text with bar geometry from the value", () => {
    const root = div();
    renderInstances(
      root,
      result([
        { label: "mug", p: "0.9999999999999999", value: 0.9999999999999999 },
        { label: "lamp", p: "1e-07", value: 1e-7 },
      ]),
    );
    const rows = root.querySelectorAll<HTMLElement>(".instance");
    expect(rows[0].querySelector(".prob")?.textContent).toBe("0.9999999999999999");
    expect(rows[1].querySelector(".prob")?.textContent).toBe("1e-07");
    const bar0 = rows[0].querySelector<HTMLElement>(".bar");
    const bar1 = rows[1].querySelector<HTMLElement>(".bar");
    expect(bar0?.style.width).toBe(`${0.9999999999999999 * 100}%`);
    expect(bar1?.style.width).toBe(`${1e-7 * 100}%`);
  });

  it("marks the threshold and flags rows at or above it", () => {
    const root = div();
    renderInstances(
      root,
      result([
        { label: "hit", p: "0.75", value: 0.75 },
        { label: "edge", p: "0.5", value: 0.5 },
        { label: "miss", p: "0.25", value: 0.25 },
      ]),
    );
    const rows = root.querySelectorAll<HTMLElement>(".instance");
    expect(rows[0].classList.contains("selected")).toBe(true);
    expect(rows[1].classList.contains("selected")).toBe(true);
    expect(rows[2].classList.contains("selected")).toBe(false);
    const marker = rows[0].querySelector<HTMLElement>(".threshold-marker");
    expect(marker?.style.left).toBe("50%");
  });
});

describe("renderImagePicker", () => {
  it("lists images in service order with labels from their instances", () => {
    const select = document.createElement("select");
    renderImagePicker(select, [
      { id: "scene0", instances: ["mug", "lamp"] },
      { id: "scene1", instances: [] },
    ]);
    const opts = select.querySelectorAll("option");
    expect(opts).toHaveLength(2);
    expect(opts[0].value).toBe("scene0");
    expect(opts[0].textContent).toBe("scene0 (mug, lamp)");
    expect(opts[1].value).toBe("scene1");
  });
});

describe("status and clearing", () => {
  it("renderStatus styles errors", () => {
    const el = div();
    renderStatus(el, "service ok");
    expect(el.className).toBe("status");
    renderStatus(el, "bad", true);
    expect(el.textContent).toBe("bad");
    expect(el.className).toBe("status error");
  });

  it("clearPanel empties a node", () => {
    const el = div();
    el.innerHTML = "<span>x</span>";
    clearPanel(el);
    expect(el.childNodes).toHaveLength(0);
  });
});
