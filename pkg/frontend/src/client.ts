// Thin typed client over the wire protocol. The transport is injected so
// tests can run against an in-memory mock server.

import type {
  AnswerResponse,
  CreateSessionResponse,
  NextPayload,
  RankingPayload,
} from "./protocol.js";

export interface HttpResponse {
  status: number;
  json(): Promise<unknown>;
}

export type FetchLike = (
  url: string,
  init?: { method?: string; headers?: Record<string, string>; body?: string },
) => Promise<HttpResponse>;

export class HttpError extends Error {
  constructor(
    readonly status: number,
    readonly url: string,
    detail?: string,
  ) {
    super(`HTTP ${status} for ${url}${detail ? `: ${detail}` : ""}`);
  }
}

export class ApiClient {
  constructor(
    readonly baseUrl: string,
    private readonly fetchFn: FetchLike,
  ) {}

  resolve(path: string): string {
    if (/^https?:\/\//.test(path)) return path;
    const base = this.baseUrl.replace(/\/$/, "");
    return path.startsWith("/") ? base + path : `${base}/${path}`;
  }

  private async request<T>(path: string, init?: Parameters<FetchLike>[1]): Promise<T> {
    const url = this.resolve(path);
    const response = await this.fetchFn(url, init);
    if (response.status < 200 || response.status >= 300) {
      let detail: string | undefined;
      try {
        const body = (await response.json()) as { detail?: string };
        detail = body?.detail;
      } catch {
        // body may be empty; the status code is enough
      }
      throw new HttpError(response.status, url, detail);
    }
    return (await response.json()) as T;
  }

  createSession(
    annotatorId: string,
    emotion: string,
    seed = 0,
  ): Promise<CreateSessionResponse> {
    return this.request("/api/sessions", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ annotator_id: annotatorId, emotion, seed }),
    });
  }

  next(sessionId: string): Promise<NextPayload> {
    return this.request(`/api/sessions/${sessionId}/next`);
  }

  answer(sessionId: string, queryId: number, winner: number): Promise<AnswerResponse> {
    return this.request(`/api/sessions/${sessionId}/answer`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ query_id: queryId, winner }),
    });
  }

  ranking(sessionId: string): Promise<RankingPayload> {
    return this.request(`/api/sessions/${sessionId}/ranking`);
  }
}
