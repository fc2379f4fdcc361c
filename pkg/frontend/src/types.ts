/** Wire types matching the annotation service schemas. */

export type ImpactLabel = 0 | 1 | 2;

export interface ContextTurn {
  speaker: "doctor" | "patient";
  text: string;
}

export interface LabeledExample {
  id: string;
  context: ContextTurn[];
  gold_final: string;
  hyp_final: string;
  label: ImpactLabel | null;
  justification: string | null;
  split: string;
}

export interface Progress {
  done: number;
  total: number;
}

export interface NextTaskResponse {
  task: LabeledExample | null;
  progress: Progress;
}

export interface AnnotationRecord {
  example_id: string;
  annotator_id: string;
  label: ImpactLabel;
  justification: string;
}

export interface AgreementReport {
  percent_agreement: number;
  kappa: number;
  kappa_ci: [number, number];
  per_class_confusion: number[][];
  n: number;
  degenerate: boolean;
}

export interface AdjudicationBundle {
  example_id: string;
  example: LabeledExample;
  records: Array<AnnotationRecord & { created_at: string }>;
  max_label_distance: number;
}

export interface AdjudicationRecord {
  example_id: string;
  final_label: ImpactLabel;
  resolver_ids: string[];
  note: string;
}

export interface GoldLabel {
  example_id: string;
  annotator_id: string;
  label: ImpactLabel;
  justification: string;
  created_at: string;
}

export const LABEL_DEFINITIONS: Record<ImpactLabel, string> = {
  0: "It does not change my understanding of the patient's clinical condition.",
  1: "It changes my understanding of the patient's clinical condition, with minimal clinical impact.",
  2: "It changes my understanding of the patient's clinical condition, with significant clinical impact.",
};

export const LABELING_QUESTION =
  "If uncorrected, and if you could only read the transcription alone, " +
  "would it have changed your understanding of the patient's clinical condition?";
