import { ApiClient, ApiError } from "./api";
import { wordDiff, type DiffResult } from "./diff";
import type {
  AdjudicationBundle,
  ImpactLabel,
  LabeledExample,
  Progress,
} from "./types";

export interface TaskView {
  example: LabeledExample;
  diff: DiffResult;
  progress: Progress;
}

/** Labeling flow state.
 *
 * The server is the single source of truth: nothing labeled locally
 * survives a submission, and a network failure keeps the typed
 * justification so the annotator can retry.
 */
export class AnnotationController {
  task: TaskView | null = null;
  finished = false;
  label: ImpactLabel | null = null;
  justification = "";
  error: string | null = null;
  busy = false;

  constructor(
    private readonly api: ApiClient,
    private readonly annotatorId: string,
  ) {}

  async loadNext(): Promise<void> {
    this.busy = true;
    try {
      const response = await this.api.nextTask(this.annotatorId);
      if (response.task === null) {
        this.task = null;
        this.finished = true;
      } else {
        this.task = {
          example: response.task,
          diff: wordDiff(response.task.gold_final, response.task.hyp_final),
          progress: response.progress,
        };
        this.finished = false;
      }
      this.label = null;
      this.justification = "";
      this.error = null;
    } catch (err) {
      this.error = describe(err);
    } finally {
      this.busy = false;
    }
  }

  chooseLabel(label: ImpactLabel): void {
    this.label = label;
  }

  setJustification(text: string): void {
    this.justification = text;
  }

  justificationRequired(): boolean {
    return this.label === 1 || this.label === 2;
  }

  /** Submit stays disabled until a label is chosen and the justification
   * rule is satisfied (labels 1 and 2 need a brief justification). */
  canSubmit(): boolean {
    if (this.task === null || this.busy || this.label === null) {
      return false;
    }
    return !this.justificationRequired() || this.justification.trim().length > 0;
  }

  async submit(): Promise<boolean> {
    if (!this.canSubmit() || this.task === null || this.label === null) {
      this.error = this.justificationRequired()
        ? "A brief justification is required for labels 1 and 2."
        : "Choose a label first.";
      return false;
    }
    this.busy = true;
    try {
      await this.api.submitLabel({
        example_id: this.task.example.id,
        annotator_id: this.annotatorId,
        label: this.label,
        justification: this.justification.trim(),
      });
    } catch (err) {
      // Keep the typed justification for the retry affordance.
      this.error = describe(err);
      this.busy = false;
      return false;
    }
    this.busy = false;
    await this.loadNext(); // optimistic fetch of the next task
    return true;
  }
}

export type ResolveOutcome = "resolved" | "conflict" | "error";

/** Adjudication flow: disagreements bundled with every annotator's label
 * and justification, resolved into one final label. */
export class AdjudicationController {
  bundles: AdjudicationBundle[] = [];
  error: string | null = null;

  constructor(
    private readonly api: ApiClient,
    private readonly resolverId: string,
  ) {}

  async loadQueue(): Promise<void> {
    try {
      this.bundles = await this.api.adjudicationQueue();
      this.error = null;
    } catch (err) {
      this.error = describe(err);
    }
  }

  /** Refreshes the queue first: a bundle resolved elsewhere in the
   * meantime is reported as a conflict instead of silently overwritten. */
  async resolve(
    exampleId: string,
    finalLabel: ImpactLabel,
    note: string,
  ): Promise<ResolveOutcome> {
    await this.loadQueue();
    if (!this.bundles.some((b) => b.example_id === exampleId)) {
      this.error = "This bundle was resolved elsewhere; the queue was refreshed.";
      return "conflict";
    }
    try {
      await this.api.resolve({
        example_id: exampleId,
        final_label: finalLabel,
        resolver_ids: [this.resolverId],
        note,
      });
    } catch (err) {
      this.error = describe(err);
      return "error";
    }
    await this.loadQueue();
    return "resolved";
  }
}

function describe(err: unknown): string {
  if (err instanceof ApiError) {
    return err.detail;
  }
  return err instanceof Error ? err.message : String(err);
}
