/** Pure view state for one open batch; DOM wiring lives in main.ts. */

import type { BatchDetail, LabelValue } from "./types.js";
import { schemaOptions } from "./types.js";

export interface BatchView {
  detail: BatchDetail;
  current: number; // index into detail.records
  chosen: Map<number, LabelValue>; // record_id -> draft label
}

export interface DraftStore {
  load(batchId: string): Record<string, LabelValue> | null;
  save(batchId: string, labels: Record<string, LabelValue>): void;
  clear(batchId: string): void;
}

/** Drafts survive reloads and network loss; keyed by batch id. */
export function browserDraftStore(storage: Storage): DraftStore {
  const key = (batchId: string) => `promptcal-draft-${batchId}`;
  return {
    load(batchId) {
      const raw = storage.getItem(key(batchId));
      return raw ? (JSON.parse(raw) as Record<string, LabelValue>) : null;
    },
    save(batchId, labels) {
      storage.setItem(key(batchId), JSON.stringify(labels));
    },
    clear(batchId) {
      storage.removeItem(key(batchId));
    },
  };
}

export function openBatch(detail: BatchDetail, draft?: Record<string, LabelValue> | null): BatchView {
  const chosen = new Map<number, LabelValue>();
  for (const [rid, value] of Object.entries(detail.submitted_labels)) {
    chosen.set(Number(rid), value);
  }
  if (draft) {
    for (const [rid, value] of Object.entries(draft)) {
      chosen.set(Number(rid), value);
    }
  }
  const firstUnlabeled = detail.records.findIndex((r) => !chosen.has(r.record_id));
  return {
    detail,
    current: firstUnlabeled === -1 ? 0 : firstUnlabeled,
    chosen,
  };
}

export function labelCurrent(view: BatchView, value: LabelValue): BatchView {
  const record = view.detail.records[view.current];
  if (!record) {
    return view;
  }
  const options = schemaOptions(view.detail.label_schema);
  if (!options.some((option) => option === value)) {
    return view; // labels outside the batch schema never enter the draft
  }
  const chosen = new Map(view.chosen);
  chosen.set(record.record_id, value);
  const next = Math.min(view.current + 1, view.detail.records.length - 1);
  return { ...view, chosen, current: next };
}

export function gotoSample(view: BatchView, index: number): BatchView {
  if (index < 0 || index >= view.detail.records.length) {
    return view;
  }
  return { ...view, current: index };
}

/** Index of the label option a keyboard shortcut selects, or null. */
export function shortcutOption(view: BatchView, key: string): LabelValue | null {
  const options = schemaOptions(view.detail.label_schema);
  if (/^[1-9]$/.test(key)) {
    const index = Number(key) - 1;
    return index < options.length ? options[index] : null;
  }
  if (view.detail.label_schema.kind === "class") {
    const match = options.find(
      (option) => String(option).toLowerCase().startsWith(key.toLowerCase()),
    );
    return match ?? null;
  }
  return null;
}

export function labeledCount(view: BatchView): number {
  return view.detail.records.filter((r) => view.chosen.has(r.record_id)).length;
}

export function progressFraction(view: BatchView): number {
  const total = view.detail.records.length;
  return total === 0 ? 1 : labeledCount(view) / total;
}

/** Submit is enabled only when every sample carries a label. */
export function canSubmit(view: BatchView): boolean {
  return labeledCount(view) === view.detail.records.length;
}

export function draftPayload(view: BatchView): Record<string, LabelValue> {
  const payload: Record<string, LabelValue> = {};
  for (const [rid, value] of view.chosen.entries()) {
    payload[String(rid)] = value;
  }
  return payload;
}
