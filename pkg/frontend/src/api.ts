// Thin typed wrappers over the /api/v1 endpoints. All server interaction in
// the client goes through this module, so tests can swap the fetch
// implementation and audit every body that reaches the UI.

import type { ExamplesView, HitView, ProgressView, SubmitBody, SubmitVerdict } from "./types.js";

export class ApiError extends Error {
  constructor(readonly status: number, readonly detail: unknown) {
    super(`HTTP ${status}: ${typeof detail === "string" ? detail : JSON.stringify(detail)}`);
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  constructor(
    private readonly baseUrl: string = "",
    private readonly fetchImpl: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private url(path: string): string {
    return `${this.baseUrl}/api/v1${path}`;
  }

  private async parseError(response: Response): Promise<never> {
    let detail: unknown;
    try {
      detail = (await response.json() as { detail?: unknown }).detail;
    } catch {
      detail = response.statusText;
    }
    throw new ApiError(response.status, detail);
  }

  // null means the pool is drained (204), not an error.
  async leaseNextHit(workerId: string): Promise<HitView | null> {
    const response = await this.fetchImpl(
      this.url(`/hits/next?worker_id=${encodeURIComponent(workerId)}`));
    if (response.status === 204) return null;
    if (!response.ok) return this.parseError(response);
    return await response.json() as HitView;
  }

  async submitAnswers(hitId: string, body: SubmitBody): Promise<SubmitVerdict> {
    const response = await this.fetchImpl(
      this.url(`/hits/${encodeURIComponent(hitId)}/answers`), {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify(body),
      });
    if (!response.ok) return this.parseError(response);
    return await response.json() as SubmitVerdict;
  }

  async getProgress(): Promise<ProgressView> {
    const response = await this.fetchImpl(this.url("/progress"));
    if (!response.ok) return this.parseError(response);
    return await response.json() as ProgressView;
  }

  async getExamples(classLabel: string): Promise<ExamplesView> {
    const response = await this.fetchImpl(
      this.url(`/examples/${encodeURIComponent(classLabel)}`));
    if (!response.ok) return this.parseError(response);
    return await response.json() as ExamplesView;
  }
}
