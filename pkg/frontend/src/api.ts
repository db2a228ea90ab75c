/** Thin client over the annotation service REST API; no label transformation. */

import type { BatchDetail, BatchSummary, LabelValue } from "./types.js";

export class ApiError extends Error {
  constructor(
    readonly status: number,
    message: string,
  ) {
    super(message);
  }
}

/** Connection-level failure (server unreachable); labels stay in the draft. */
export class NetworkError extends Error {}

async function parseError(response: Response): Promise<ApiError> {
  let detail = response.statusText;
  try {
    const body = (await response.json()) as { error?: string };
    if (body.error) {
      detail = body.error;
    }
  } catch {
    // non-JSON error body; keep the status text
  }
  return new ApiError(response.status, detail);
}

export class ApiClient {
  constructor(private readonly baseUrl: string = "") {}

  private async request(path: string, init?: RequestInit): Promise<unknown> {
    let response: Response;
    try {
      response = await fetch(`${this.baseUrl}${path}`, init);
    } catch (error) {
      throw new NetworkError(String(error));
    }
    if (!response.ok) {
      throw await parseError(response);
    }
    return response.json();
  }

  async health(): Promise<boolean> {
    try {
      await this.request("/api/health");
      return true;
    } catch {
      return false;
    }
  }

  async listBatches(): Promise<BatchSummary[]> {
    const data = (await this.request("/api/batches")) as { batches: BatchSummary[] };
    return data.batches;
  }

  async getBatch(batchId: string): Promise<BatchDetail> {
    return (await this.request(`/api/batches/${batchId}`)) as BatchDetail;
  }

  async submitLabels(
    batchId: string,
    labels: Record<string, LabelValue>,
  ): Promise<string> {
    const data = (await this.request(`/api/batches/${batchId}/labels`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ labels }),
    })) as { status: string };
    return data.status;
  }
}
