import type { HitPayload } from "./schema";

// Client-side state is deliberately thin: it knows what the worker has
// picked so far and nothing about study conditions.  Items the server
// already has answers for (a resumed session) arrive locked.

export interface ItemState {
  reviewId: string;
  text: string;
  label: string | null;
  confidence: number | null;
  submitted: boolean;
}

export interface HitForm {
  hitId: string;
  labels: string[];
  confidenceMin: number;
  confidenceMax: number;
  completedHits: number;
  totalHits: number;
  items: ItemState[];
}

export function formFromPayload(p: HitPayload): HitForm {
  return {
    hitId: p.hit_id,
    labels: p.labels,
    confidenceMin: p.confidence_min,
    confidenceMax: p.confidence_max,
    completedHits: p.completed_hits,
    totalHits: p.total_hits,
    items: p.items.map((it) => ({
      reviewId: it.review_id,
      text: it.text,
      label: null,
      confidence: null,
      submitted: it.answered,
    })),
  };
}

/** Set an item's label. Returns false (and changes nothing) once submitted. */
export function setLabel(form: HitForm, index: number, label: string): boolean {
  const item = form.items[index];
  if (!item || item.submitted || !form.labels.includes(label)) return false;
  item.label = label;
  return true;
}

export function setConfidence(form: HitForm, index: number, value: number): boolean {
  const item = form.items[index];
  if (!item || item.submitted) return false;
  if (!Number.isInteger(value)) return false;
  if (value < form.confidenceMin || value > form.confidenceMax) return false;
  item.confidence = value;
  return true;
}

/** Submission gate: every still-open item needs both a label and a rating. */
export function canSubmit(form: HitForm): boolean {
  const open = form.items.filter((it) => !it.submitted);
  return open.length > 0 &&
    open.every((it) => it.label !== null && it.confidence !== null);
}

export function pendingItems(form: HitForm): ItemState[] {
  return form.items.filter((it) => !it.submitted);
}

export function markSubmitted(form: HitForm, index: number): void {
  const item = form.items[index];
  if (item) item.submitted = true;
}

/** Undo an optimistic submit after the server rejected it. */
export function rollback(form: HitForm, index: number): void {
  const item = form.items[index];
  if (!item) return;
  item.submitted = false;
  item.label = null;
  item.confidence = null;
}
