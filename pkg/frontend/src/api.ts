/**
 * Thin fetch client for the mapping service.
 *
 * Every method maps one-to-one onto a /v1 endpoint.  Failures split into two
 * kinds the UI treats differently: ApiError (the service answered with an
 * error envelope, e.g. a decision conflict) and plain fetch rejections
 * (network trouble, worth retrying).
 */

import type {
  DecisionRequest,
  ErrorEnvelope,
  Health,
  JobEntry,
  JobOptions,
  JobStatus,
  PendingPage,
  ReviewItem,
  SearchResponse,
  SubmittedJob,
} from "./wire";

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  readonly status: number;
  readonly code: string;

  constructor(message: string, status: number, code: string) {
    super(message);
    this.name = "ApiError";
    this.status = status;
    this.code = code;
  }

  /** True when another reviewer already decided the item. */
  get isConflict(): boolean {
    return this.code === "not_pending" || this.status === 409;
  }
}

function delay(ms: number): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, ms));
}

export class ApiClient {
  readonly base: string;
  private readonly fetchImpl: FetchLike;

  constructor(base: string, fetchImpl?: FetchLike) {
    this.base = base.replace(/\/+$/, "");
    // Wrapped so window.fetch keeps its required this-binding.
    this.fetchImpl = fetchImpl ?? ((input, init) => globalThis.fetch(input, init));
  }

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const resp = await this.fetchImpl(this.base + path, init);
    if (!resp.ok) {
      let code = `http_${resp.status}`;
      let message = resp.statusText || code;
      try {
        const body = (await resp.json()) as ErrorEnvelope;
        if (body?.error?.code) {
          code = body.error.code;
          message = body.error.message || message;
        }
      } catch {
        // Non-JSON error body; keep the status-derived message.
      }
      throw new ApiError(message, resp.status, code);
    }
    return (await resp.json()) as T;
  }

  health(): Promise<Health> {
    return this.request("/v1/health");
  }

  fetchQueue(page = 1, pageSize = 50): Promise<PendingPage> {
    return this.request(`/v1/review/pending?page=${page}&page_size=${pageSize}`);
  }

  submitDecision(
    reviewId: string,
    body: DecisionRequest,
    idempotencyKey?: string,
  ): Promise<ReviewItem> {
    const headers: Record<string, string> = { "content-type": "application/json" };
    if (idempotencyKey) {
      headers["idempotency-key"] = idempotencyKey;
    }
    return this.request(`/v1/review/${encodeURIComponent(reviewId)}/decision`, {
      method: "POST",
      headers,
      body: JSON.stringify(body),
    });
  }

  searchConcepts(q: string, k = 10): Promise<SearchResponse> {
    return this.request(`/v1/search?q=${encodeURIComponent(q)}&k=${k}`);
  }

  submitJob(entries: JobEntry[], options: JobOptions = {}): Promise<SubmittedJob> {
    return this.request("/v1/jobs", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ entries, options }),
    });
  }

  getJob(jobId: string): Promise<JobStatus> {
    return this.request(`/v1/jobs/${encodeURIComponent(jobId)}`);
  }

  /** Poll a job until it settles; rejects if it does not finish in time. */
  async waitForJob(jobId: string, timeoutMs = 60_000, pollMs = 100): Promise<JobStatus> {
    const deadline = Date.now() + timeoutMs;
    for (;;) {
      const job = await this.getJob(jobId);
      if (job.state === "done" || job.state === "failed") {
        return job;
      }
      if (Date.now() >= deadline) {
        throw new Error(`job ${jobId} still ${job.state} after ${timeoutMs}ms`);
      }
      await delay(pollMs);
    }
  }
}
