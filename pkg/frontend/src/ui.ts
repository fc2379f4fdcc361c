import type { AdjudicationController, AnnotationController } from "./controller";
import type { DiffSpan } from "./diff";
import { LABEL_DEFINITIONS, LABELING_QUESTION, type ImpactLabel } from "./types";

const LABELS: ImpactLabel[] = [0, 1, 2];

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

function renderSpans(target: HTMLElement, spans: DiffSpan[], sep: string): void {
  spans.forEach((span, i) => {
    if (i > 0 && sep) target.appendChild(document.createTextNode(sep));
    const node = el("span", span.changed ? "diff-changed" : "diff-same", span.text);
    target.appendChild(node);
  });
}

export function renderTask(root: HTMLElement, controller: AnnotationController): void {
  root.replaceChildren();
  if (controller.error) {
    const banner = el("div", "banner error", controller.error);
    const retry = el("button", "retry", "Retry");
    retry.addEventListener("click", () => {
      if (controller.task === null) {
        void controller.loadNext().then(() => renderTask(root, controller));
      } else {
        void controller.submit().then(() => renderTask(root, controller));
      }
    });
    banner.appendChild(retry);
    root.appendChild(banner);
    if (controller.task === null) return;
  }
  if (controller.finished) {
    root.appendChild(el("div", "banner done", "All examples are labeled. Thank you."));
    return;
  }
  const view = controller.task;
  if (view === null) {
    root.appendChild(el("div", "banner", "Loading the next example..."));
    return;
  }

  const progress = el(
    "div",
    "progress",
    `Labeled ${view.progress.done} of ${view.progress.total}`,
  );
  root.appendChild(progress);

  const context = el("section", "context");
  context.appendChild(el("h2", undefined, "Context"));
  for (const [speaker, text] of view.example.context.map(
    (t) => [t.speaker, t.text] as const,
  )) {
    const turn = el("p", `turn ${speaker}`);
    turn.appendChild(el("strong", undefined, `${speaker}: `));
    turn.appendChild(document.createTextNode(text));
    context.appendChild(turn);
  }
  root.appendChild(context);

  const pair = el("section", "pair");
  const goldBlock = el("div", "final gold");
  goldBlock.appendChild(el("h2", undefined, "Ground truth (final patient utterance)"));
  const goldP = el("p", "utterance");
  renderSpans(goldP, view.diff.gold, view.diff.granularity === "word" ? " " : "");
  goldBlock.appendChild(goldP);
  const hypBlock = el("div", "final hyp");
  hypBlock.appendChild(el("h2", undefined, "Transcription (final patient utterance)"));
  const hypP = el("p", "utterance");
  renderSpans(hypP, view.diff.hyp, view.diff.granularity === "word" ? " " : "");
  hypBlock.appendChild(hypP);
  pair.appendChild(goldBlock);
  pair.appendChild(hypBlock);
  root.appendChild(pair);

  if (view.diff.identical) {
    root.appendChild(
      el("div", "banner identical",
         "No differences detected between the two versions."),
    );
  }

  const question = el("section", "question");
  question.appendChild(el("p", "question-text", LABELING_QUESTION));
  root.appendChild(question);

  const options = el("section", "options");
  for (const label of LABELS) {
    const button = el("button", "label-option", `${label}`);
    button.dataset.label = String(label);
    if (controller.label === label) button.classList.add("selected");
    button.setAttribute("aria-pressed", String(controller.label === label));
    button.addEventListener("click", () => {
      controller.chooseLabel(label);
      renderTask(root, controller);
    });
    const wrap = el("div", "option");
    wrap.appendChild(button);
    wrap.appendChild(el("span", "definition", LABEL_DEFINITIONS[label]));
    options.appendChild(wrap);
  }
  root.appendChild(options);

  const justification = el("textarea", "justification") as HTMLTextAreaElement;
  justification.placeholder =
    "Brief justification (required for labels 1 and 2)";
  justification.value = controller.justification;
  justification.addEventListener("input", () => {
    controller.setJustification(justification.value);
    submit.disabled = !controller.canSubmit();
  });
  root.appendChild(justification);

  const submit = el("button", "submit", "Submit") as HTMLButtonElement;
  submit.disabled = !controller.canSubmit();
  submit.addEventListener("click", () => {
    void controller.submit().then(() => renderTask(root, controller));
  });
  root.appendChild(submit);
}

/** Keyboard shortcuts: 0/1/2 pick the label. */
export function bindShortcuts(
  root: HTMLElement,
  controller: AnnotationController,
  doc: Document = document,
): void {
  doc.addEventListener("keydown", (event) => {
    if (event.target instanceof HTMLTextAreaElement) return;
    if (event.key === "0" || event.key === "1" || event.key === "2") {
      controller.chooseLabel(Number(event.key) as ImpactLabel);
      renderTask(root, controller);
    }
  });
}

export function renderAdjudication(
  root: HTMLElement,
  controller: AdjudicationController,
): void {
  root.replaceChildren();
  if (controller.error) {
    const banner = el("div", "banner error", controller.error);
    const refresh = el("button", "retry", "Refresh queue");
    refresh.addEventListener("click", () => {
      void controller.loadQueue().then(() => renderAdjudication(root, controller));
    });
    banner.appendChild(refresh);
    root.appendChild(banner);
  }
  if (controller.bundles.length === 0) {
    root.appendChild(el("div", "banner", "No disagreements awaiting adjudication."));
    return;
  }
  for (const bundle of controller.bundles) {
    const card = el("section", "bundle");
    card.appendChild(el("h2", undefined, bundle.example_id));
    card.appendChild(
      el("p", "distance", `Label distance: ${bundle.max_label_distance}`),
    );
    const finals = el("div", "pair");
    const gold = el("p", "utterance gold", bundle.example.gold_final);
    const hyp = el("p", "utterance hyp", bundle.example.hyp_final);
    finals.appendChild(gold);
    finals.appendChild(hyp);
    card.appendChild(finals);

    const records = el("div", "records");
    for (const record of bundle.records) {
      const row = el("div", "record");
      row.appendChild(el("strong", undefined, record.annotator_id));
      row.appendChild(el("span", "record-label", ` labeled ${record.label}`));
      if (record.justification) {
        row.appendChild(el("p", "record-justification", record.justification));
      }
      records.appendChild(row);
    }
    card.appendChild(records);

    const select = el("select", "final-label") as HTMLSelectElement;
    for (const label of LABELS) {
      const option = el("option", undefined, `${label}`) as HTMLOptionElement;
      option.value = String(label);
      select.appendChild(option);
    }
    const note = el("input", "note") as HTMLInputElement;
    note.placeholder = "Resolution note";
    const resolve = el("button", "resolve", "Resolve") as HTMLButtonElement;
    resolve.addEventListener("click", () => {
      void controller
        .resolve(bundle.example_id, Number(select.value) as ImpactLabel, note.value)
        .then(() => renderAdjudication(root, controller));
    });
    card.appendChild(select);
    card.appendChild(note);
    card.appendChild(resolve);
    root.appendChild(card);
  }
}
