// @vitest-environment happy-dom
import { beforeEach, describe, expect, it, vi } from "vitest";

import type { ApiClient } from "../src/api";
import { AnnotationController } from "../src/controller";
import { bindShortcuts, renderTask } from "../src/ui";
import type { LabeledExample } from "../src/types";

function example(goldFinal: string, hypFinal: string): LabeledExample {
  return {
    id: "ex00",
    context: [
      { speaker: "doctor", text: "Is your eye painful?" },
      { speaker: "patient", text: "A little." },
    ],
    gold_final: goldFinal,
    hyp_final: hypFinal,
    label: null,
    justification: null,
    split: "unassigned",
  };
}

function makeController(goldFinal: string, hypFinal: string) {
  const api = {
    nextTask: vi.fn(async () => ({
      task: example(goldFinal, hypFinal),
      progress: { done: 0, total: 1 },
    })),
    submitLabel: vi.fn(async () => undefined),
  } as unknown as ApiClient & { submitLabel: ReturnType<typeof vi.fn> };
  return { api, controller: new AnnotationController(api, "ann_a") };
}

describe("renderTask", () => {
  let root: HTMLElement;

  beforeEach(() => {
    document.body.innerHTML = "<div id='root'></div>";
    root = document.getElementById("root") as HTMLElement;
  });

  it("disables submit until a label and justification satisfy the rule", async () => {
    const { controller } = makeController(
      "there is some extra bleeding",
      "there isn't some extra bleeding",
    );
    await controller.loadNext();
    renderTask(root, controller);

    const submit = () => root.querySelector(".submit") as HTMLButtonElement;
    expect(submit().disabled).toBe(true);

    (root.querySelector("button[data-label='1']") as HTMLButtonElement).click();
    expect(submit().disabled).toBe(true); // label 1 still needs justification

    const textarea = root.querySelector(".justification") as HTMLTextAreaElement;
    textarea.value = "meaning shifted";
    textarea.dispatchEvent(new Event("input", { bubbles: true }));
    expect(submit().disabled).toBe(false);
  });

  it("label 0 submits without justification", async () => {
    const { api, controller } = makeController("a", "b");
    await controller.loadNext();
    renderTask(root, controller);
    (root.querySelector("button[data-label='0']") as HTMLButtonElement).click();
    const submit = root.querySelector(".submit") as HTMLButtonElement;
    expect(submit.disabled).toBe(false);
    submit.click();
    await vi.waitFor(() => expect(api.submitLabel).toHaveBeenCalledTimes(1));
  });

  it("highlights the differing tokens of the final utterances", async () => {
    const { controller } = makeController(
      "there is some extra bleeding",
      "there isn't some extra bleeding",
    );
    await controller.loadNext();
    renderTask(root, controller);
    const changed = Array.from(root.querySelectorAll(".diff-changed")).map(
      (node) => node.textContent,
    );
    expect(changed).toEqual(["is", "isn't"]);
  });

  it("shows a banner when the finals are identical", async () => {
    const { controller } = makeController("same words", "same words");
    await controller.loadNext();
    renderTask(root, controller);
    expect(root.querySelector(".banner.identical")).not.toBeNull();
    expect(root.querySelectorAll(".diff-changed").length).toBe(0);
  });

  it("displays the labeling question verbatim", async () => {
    const { controller } = makeController("a", "b");
    await controller.loadNext();
    renderTask(root, controller);
    expect(root.querySelector(".question-text")?.textContent).toContain(
      "If uncorrected, and if you could only read the transcription alone",
    );
  });

  it("keyboard shortcuts pick labels", async () => {
    const { controller } = makeController("a", "b");
    await controller.loadNext();
    renderTask(root, controller);
    bindShortcuts(root, controller, document);
    document.dispatchEvent(new KeyboardEvent("keydown", { key: "2", bubbles: true }));
    expect(controller.label).toBe(2);
    const selected = root.querySelector(".label-option.selected") as HTMLButtonElement;
    expect(selected.dataset.label).toBe("2");
  });
});
