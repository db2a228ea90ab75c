/** DOM wiring: batch list polling, labeling, drafts, and submission. */

import { ApiClient, ApiError, NetworkError } from "./api.js";
import {
  BatchView,
  browserDraftStore,
  canSubmit,
  draftPayload,
  gotoSample,
  labelCurrent,
  openBatch,
  shortcutOption,
} from "./state.js";
import { renderAnnotator, renderBanner, renderBatchList, renderCompletion } from "./render.js";

const POLL_INTERVAL_MS = 2000;

const api = new ApiClient("");
const drafts = browserDraftStore(window.localStorage);

let view: BatchView | null = null;
let pollTimer: number | null = null;

const app = () => document.getElementById("app")!;
const bannerHost = () => document.getElementById("banner")!;

function showBanner(kind: "error" | "info" | "retry", message: string): void {
  bannerHost().innerHTML = renderBanner(kind, message);
}

function clearBanner(): void {
  bannerHost().innerHTML = "";
}

async function refreshList(): Promise<void> {
  try {
    const batches = await api.listBatches();
    clearBanner();
    app().innerHTML = renderBatchList(batches);
    for (const button of app().querySelectorAll<HTMLButtonElement>(".open-batch")) {
      button.addEventListener("click", () => {
        void openBatchById(button.dataset.batchId!);
      });
    }
  } catch (error) {
    if (error instanceof NetworkError) {
      showBanner("retry", "Service unreachable; retrying. Draft labels are safe.");
    } else {
      showBanner("error", String(error));
    }
  }
}

function startPolling(): void {
  stopPolling();
  pollTimer = window.setInterval(() => {
    if (view === null) {
      void refreshList();
    }
  }, POLL_INTERVAL_MS);
}

function stopPolling(): void {
  if (pollTimer !== null) {
    window.clearInterval(pollTimer);
    pollTimer = null;
  }
}

async function openBatchById(batchId: string): Promise<void> {
  try {
    const detail = await api.getBatch(batchId);
    view = openBatch(detail, drafts.load(batchId));
    draw();
  } catch (error) {
    showBanner("error", `Could not open batch ${batchId}: ${String(error)}`);
  }
}

function update(next: BatchView): void {
  view = next;
  drafts.save(next.detail.batch_id, draftPayload(next));
  draw();
}

async function submit(): Promise<void> {
  if (view === null || !canSubmit(view)) {
    return;
  }
  const batchId = view.detail.batch_id;
  try {
    await api.submitLabels(batchId, draftPayload(view));
    drafts.clear(batchId);
    view = null;
    clearBanner();
    app().innerHTML = renderCompletion(batchId);
    app()
      .querySelector<HTMLButtonElement>(".back-to-list")
      ?.addEventListener("click", () => void backToList());
  } catch (error) {
    if (error instanceof NetworkError) {
      showBanner("retry", "Submit failed: service unreachable. Your labels are kept; try again.");
    } else if (error instanceof ApiError) {
      showBanner("error", `Submit rejected (${error.status}): ${error.message}`);
    } else {
      showBanner("error", String(error));
    }
  }
}

async function backToList(): Promise<void> {
  view = null;
  await refreshList();
}

function draw(): void {
  if (view === null) {
    return;
  }
  app().innerHTML = renderAnnotator(view);
  const current = view;
  for (const button of app().querySelectorAll<HTMLButtonElement>(".label-option")) {
    button.addEventListener("click", () => {
      const raw = button.dataset.label!;
      const value = current.detail.label_schema.kind === "rank" ? Number(raw) : raw;
      update(labelCurrent(current, value));
    });
  }
  app()
    .querySelector<HTMLButtonElement>(".prev-sample")
    ?.addEventListener("click", () => update(gotoSample(current, current.current - 1)));
  app()
    .querySelector<HTMLButtonElement>(".next-sample")
    ?.addEventListener("click", () => update(gotoSample(current, current.current + 1)));
  app()
    .querySelector<HTMLButtonElement>(".submit-batch")
    ?.addEventListener("click", () => void submit());
}

document.addEventListener("keydown", (event) => {
  if (view === null) {
    return;
  }
  if (event.key === "ArrowLeft") {
    update(gotoSample(view, view.current - 1));
    return;
  }
  if (event.key === "ArrowRight") {
    update(gotoSample(view, view.current + 1));
    return;
  }
  if (event.key === "Enter" && canSubmit(view)) {
    void submit();
    return;
  }
  const option = shortcutOption(view, event.key);
  if (option !== null) {
    update(labelCurrent(view, option));
  }
});

void refreshList();
startPolling();
