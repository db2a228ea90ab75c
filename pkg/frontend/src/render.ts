/** HTML-string renderers; pure so tests can assert on their output. */

import type { BatchSummary, LabelValue } from "./types.js";
import { schemaOptions } from "./types.js";
import type { BatchView } from "./state.js";
import { canSubmit, labeledCount } from "./state.js";

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

export function renderBatchList(batches: BatchSummary[]): string {
  if (batches.length === 0) {
    return `<p class="empty">No batches yet. The optimizer publishes one per iteration; this list refreshes automatically.</p>`;
  }
  const rows = batches
    .map((batch) => {
      const open =
        batch.status === "pending"
          ? `<button class="open-batch" data-batch-id="${batch.batch_id}">Open</button>`
          : "";
      return `<tr>
        <td>${batch.batch_id}</td>
        <td>${escapeHtml(batch.task_description)}</td>
        <td>${batch.schema_kind}</td>
        <td>${batch.labeled}/${batch.total}</td>
        <td class="status-${batch.status}">${batch.status}</td>
        <td>${open}</td>
      </tr>`;
    })
    .join("\n");
  return `<table class="batches">
    <thead><tr><th>Batch</th><th>Task</th><th>Schema</th><th>Progress</th><th>Status</th><th></th></tr></thead>
    <tbody>${rows}</tbody>
  </table>`;
}

function renderOption(value: LabelValue, chosen: LabelValue | undefined, shortcut: string): string {
  const selected = chosen !== undefined && chosen === value ? " selected" : "";
  return `<button class="label-option${selected}" data-label="${escapeHtml(String(value))}">
      ${escapeHtml(String(value))} <kbd>${shortcut}</kbd>
    </button>`;
}

export function renderAnnotator(view: BatchView): string {
  const { detail } = view;
  const record = detail.records[view.current];
  const options = schemaOptions(detail.label_schema);
  const chosen = record ? view.chosen.get(record.record_id) : undefined;
  const shortcuts =
    detail.label_schema.kind === "class"
      ? options.map((option, i) => String(option).charAt(0).toLowerCase() || String(i + 1))
      : options.map((_, i) => String(i + 1));
  const buttons = options
    .map((option, i) => renderOption(option, chosen, shortcuts[i]))
    .join("\n");
  const submitDisabled = canSubmit(view) ? "" : " disabled";
  const position = `${view.current + 1}/${detail.records.length}`;
  return `<section class="annotator" data-batch-id="${detail.batch_id}">
    <aside class="task-panel">
      <h2>Task</h2>
      <p>${escapeHtml(detail.task_description)}</p>
    </aside>
    <div class="sample-panel">
      <header>
        <span class="position">Sample ${position}</span>
        <progress max="${detail.records.length}" value="${labeledCount(view)}"></progress>
        <span class="progress-text">${labeledCount(view)}/${detail.records.length} labeled</span>
      </header>
      <blockquote class="sample-text">${record ? escapeHtml(record.text) : ""}</blockquote>
      <div class="label-options">${buttons}</div>
      <nav>
        <button class="prev-sample"${view.current === 0 ? " disabled" : ""}>&larr; Prev</button>
        <button class="next-sample"${view.current >= detail.records.length - 1 ? " disabled" : ""}>Next &rarr;</button>
        <button class="submit-batch"${submitDisabled}>Submit batch</button>
      </nav>
    </div>
  </section>`;
}

export function renderBanner(kind: "error" | "info" | "retry", message: string): string {
  return `<div class="banner banner-${kind}">${escapeHtml(message)}</div>`;
}

export function renderCompletion(batchId: string): string {
  return `<section class="completed">
    <h2>Batch ${batchId} submitted</h2>
    <p>The optimizer picks the labels up within one poll interval and moves on.</p>
    <button class="back-to-list">Back to batches</button>
  </section>`;
}
