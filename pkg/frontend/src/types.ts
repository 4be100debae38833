// Wire types for the review service under /api/v1. Field names mirror the
// server's JSON exactly; nothing here is renamed or enriched client-side.

export interface Box {
  x_min: number;
  y_min: number;
  x_max: number;
  y_max: number;
}

export interface SubtaskView {
  ann_id: string;
  image_id: string;
  image_uri: string;
  image_width: number;
  image_height: number;
  crop_viewport: Box;
  proposal_box: Box;
  current_class: string;
}

export interface HitView {
  hit_id: string;
  expires_at: number;
  classes: string[];
  subtasks: SubtaskView[];
}

export interface AnswerPayload {
  ann_id: string;
  class_label: string;
  box: Box | null;
}

export interface SubmitBody {
  worker_id: string;
  answers: AnswerPayload[];
}

export interface SubmitVerdict {
  status: "approved" | "rejected";
  reason: string;
}

export interface ProgressView {
  counts: Record<string, number>;
  background: number;
  approved_total: number;
  open_work: number;
}

export interface ExampleView {
  image_id: string;
  image_uri: string;
  box: Box;
}

export interface ExamplesView {
  class_label: string;
  examples: ExampleView[];
}

// Server-side label for "none of the above"; answers carrying it must have
// a null box. The class dropdown never shows the raw label.
export const BACKGROUND = "Background";
export const NONE_OF_THE_ABOVE = "None of the above";

export const HIT_SIZE = 10;

export function boxWidth(box: Box): number {
  return box.x_max - box.x_min;
}

export function boxHeight(box: Box): number {
  return box.y_max - box.y_min;
}
