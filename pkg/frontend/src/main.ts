import { ApiClient } from "./api";
import { AdjudicationController, AnnotationController } from "./controller";
import { bindShortcuts, renderAdjudication, renderTask } from "./ui";

function sessionValue(key: string, prompt_text: string): string {
  let value = sessionStorage.getItem(key);
  if (!value) {
    value = window.prompt(prompt_text) ?? "";
    sessionStorage.setItem(key, value);
  }
  return value;
}

function boot(): void {
  const annotator = sessionValue("clinasr.annotator", "Annotator id:");
  // Token lives in session scope only; never persisted.
  const token = sessionValue("clinasr.token", "Annotator token:");
  const api = new ApiClient("", token);

  const labelRoot = document.getElementById("label-root") as HTMLElement;
  const adjudicationRoot = document.getElementById("adjudication-root") as HTMLElement;
  const tabs = document.querySelectorAll<HTMLButtonElement>("nav button");

  const annotation = new AnnotationController(api, annotator);
  const adjudication = new AdjudicationController(api, annotator);
  bindShortcuts(labelRoot, annotation);

  function show(which: string): void {
    labelRoot.hidden = which !== "label";
    adjudicationRoot.hidden = which !== "adjudicate";
    if (which === "label") {
      void annotation.loadNext().then(() => renderTask(labelRoot, annotation));
    } else {
      void adjudication
        .loadQueue()
        .then(() => renderAdjudication(adjudicationRoot, adjudication));
    }
  }

  tabs.forEach((tab) => {
    tab.addEventListener("click", () => show(tab.dataset.view ?? "label"));
  });
  show("label");
}

document.addEventListener("DOMContentLoaded", boot);
