/** HTTP client for the review service JSON API. */

import type { Api, Label, LabelAck, NextResponse, ReportView } from "./types.js";

export class ApiError extends Error {
  constructor(
    message: string,
    readonly status: number | null,
    readonly code: string | null,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

async function decode<T>(response: Response): Promise<T> {
  let body: unknown = null;
  try {
    body = await response.json();
  } catch {
    // non-JSON error bodies fall through to the status check below
  }
  if (!response.ok) {
    const doc = (body ?? {}) as { error?: string; message?: string };
    throw new ApiError(
      doc.message ?? `request failed with status ${response.status}`,
      response.status,
      doc.error ?? null,
    );
  }
  return body as T;
}

export class HttpApi implements Api {
  constructor(
    private readonly baseUrl: string = "",
    private readonly fetchFn: typeof fetch = fetch,
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    let response: Response;
    try {
      response = await this.fetchFn(this.baseUrl + path, init);
    } catch (err) {
      throw new ApiError(`service unreachable: ${String(err)}`, null, null);
    }
    return decode<T>(response);
  }

  nextPair(reviewerId: string): Promise<NextResponse> {
    const query = new URLSearchParams({ reviewer: reviewerId });
    return this.request<NextResponse>(`/api/queue/next?${query}`);
  }

  submitLabel(pairId: string, reviewerId: string, label: Label): Promise<LabelAck> {
    return this.request<LabelAck>("/api/labels", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ pair_id: pairId, reviewer_id: reviewerId, label }),
    });
  }

  report(): Promise<ReportView> {
    return this.request<ReportView>("/api/report");
  }
}
