// In-memory implementation of the annotation wire protocol, with fault
// injection. Records every POST so tests can assert the one-POST-per-
// displayed-query contract.

import type { FetchLike, HttpResponse } from "../src/client.js";
import type { NextPayload, ProgressInfo } from "../src/protocol.js";

export interface PostRecord {
  queryId: number;
  winner: number;
}

interface Fault {
  kind: "network" | "conflict";
  count: number;
}

export class MockServer {
  /** queries remaining to serve, as [leftId, rightId] pairs */
  private queue: Array<[number, number]>;
  private answered: PostRecord[] = [];
  private fault: Fault | null = null;
  readonly posts: PostRecord[] = [];
  readonly servedNext: NextPayload[] = [];

  constructor(pairs: Array<[number, number]>, readonly emotion = "happiness") {
    this.queue = [...pairs];
  }

  get pending(): [number, number] | null {
    return this.queue.length ? this.queue[0] : null;
  }

  get pendingQueryId(): number {
    return this.answered.length;
  }

  get log(): PostRecord[] {
    return [...this.answered];
  }

  /** Simulate another tab answering the pending query. */
  answerExternally(): void {
    const pair = this.pending;
    if (!pair) throw new Error("nothing pending");
    this.answered.push({ queryId: this.pendingQueryId, winner: pair[0] });
    this.queue.shift();
  }

  failNext(kind: Fault["kind"], count = 1): void {
    this.fault = { kind, count };
  }

  private progress(): ProgressInfo {
    const total = this.answered.length + this.queue.length;
    return {
      answered: this.answered.length,
      worst_case: total,
      fraction: total ? this.answered.length / total : 1,
    };
  }

  private nextPayload(): NextPayload {
    const pair = this.pending;
    if (!pair) {
      return { completed: true, ranking_url: "/api/sessions/s1/ranking" };
    }
    return {
      completed: false,
      query_id: this.pendingQueryId,
      left_id: pair[0],
      right_id: pair[1],
      left: `/api/images/${pair[0]}.png`,
      right: `/api/images/${pair[1]}.png`,
      emotion: this.emotion,
      progress: this.progress(),
    };
  }

  private takeFault(kind: Fault["kind"]): boolean {
    if (this.fault && this.fault.kind === kind && this.fault.count > 0) {
      this.fault.count -= 1;
      if (this.fault.count === 0) this.fault = null;
      return true;
    }
    return false;
  }

  readonly fetch: FetchLike = async (url, init) => {
    const method = init?.method ?? "GET";
    if (method === "GET" && url.includes("/next")) {
      const payload = this.nextPayload();
      this.servedNext.push(payload);
      return respond(200, payload);
    }
    if (method === "POST" && url.includes("/answer")) {
      if (this.takeFault("network")) {
        throw new TypeError("network down");
      }
      const body = JSON.parse(init?.body ?? "{}") as {
        query_id: number;
        winner: number;
      };
      this.posts.push({ queryId: body.query_id, winner: body.winner });
      if (this.takeFault("conflict")) {
        return respond(409, { detail: "injected conflict" });
      }
      const pair = this.pending;
      if (!pair) return respond(409, { detail: "complete" });
      if (body.query_id !== this.pendingQueryId) {
        return respond(409, { detail: "stale" });
      }
      if (body.winner !== pair[0] && body.winner !== pair[1]) {
        return respond(400, { detail: "bad winner" });
      }
      this.answered.push({ queryId: body.query_id, winner: body.winner });
      this.queue.shift();
      return respond(200, {
        accepted: true,
        completed: this.queue.length === 0,
        progress: this.progress(),
      });
    }
    if (method === "POST" && url.endsWith("/api/sessions")) {
      return respond(200, {
        session_id: "s1",
        resumed: false,
        completed: this.queue.length === 0,
      });
    }
    return respond(404, { detail: `unhandled ${method} ${url}` });
  };
}

function respond(status: number, body: unknown): HttpResponse {
  return { status, json: async () => body };
}
