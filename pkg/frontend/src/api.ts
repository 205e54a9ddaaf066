// Thin typed client over fetch with retry/backoff for transient network
// failures. HTTP status codes are returned to the caller (they carry
// protocol meaning: 204 round exhausted, 409 conflict, 404 unknown).

import type { Choice, PairPresentation, Progress, ResultsTally, SessionDescriptor } from "./types.js";

export interface ApiOptions {
  baseUrl?: string;
  retries?: number;
  backoffMs?: number;
  fetchImpl?: typeof fetch;
}

export class HttpError extends Error {
  constructor(public status: number, public detail: string) {
    super(`HTTP ${status}: ${detail}`);
  }
}

export class ApiClient {
  private baseUrl: string;
  private retries: number;
  private backoffMs: number;
  private fetchImpl: typeof fetch;

  constructor(opts: ApiOptions = {}) {
    this.baseUrl = opts.baseUrl ?? "";
    this.retries = opts.retries ?? 4;
    this.backoffMs = opts.backoffMs ?? 250;
    this.fetchImpl = opts.fetchImpl ?? fetch.bind(globalThis);
  }

  private async request(path: string, init?: RequestInit): Promise<Response> {
    let attempt = 0;
    for (;;) {
      try {
        return await this.fetchImpl(this.baseUrl + path, init);
      } catch (err) {
        // network failure only; HTTP errors come back as responses
        attempt += 1;
        if (attempt > this.retries) throw err;
        await new Promise((r) => setTimeout(r, this.backoffMs * 2 ** (attempt - 1)));
      }
    }
  }

  private async json<T>(resp: Response): Promise<T> {
    if (!resp.ok) {
      let detail = resp.statusText;
      try {
        const body = (await resp.json()) as { detail?: string };
        if (body.detail) detail = body.detail;
      } catch {
        // non-JSON error body; keep the status text
      }
      throw new HttpError(resp.status, detail);
    }
    return (await resp.json()) as T;
  }

  async createSession(listener = "browser", phase = "training_query"): Promise<SessionDescriptor> {
    const resp = await this.request("/session", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ listener, phase }),
    });
    return this.json<SessionDescriptor>(resp);
  }

  /** null means 204: no pair pending in the current round. */
  async getPair(sessionId: string): Promise<PairPresentation | null> {
    const resp = await this.request(`/pair?session=${encodeURIComponent(sessionId)}`);
    if (resp.status === 204) return null;
    return this.json<PairPresentation>(resp);
  }

  async postFeedback(sessionId: string, pairId: string, choice: Choice): Promise<void> {
    const resp = await this.request("/feedback", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ session: sessionId, pair: pairId, choice }),
    });
    await this.json<{ ok: boolean }>(resp);
  }

  async getProgress(sessionId: string): Promise<Progress> {
    const resp = await this.request(`/progress?session=${encodeURIComponent(sessionId)}`);
    return this.json<Progress>(resp);
  }

  async getResults(sessionId: string): Promise<ResultsTally> {
    const resp = await this.request(`/results?session=${encodeURIComponent(sessionId)}`);
    return this.json<ResultsTally>(resp);
  }
}
