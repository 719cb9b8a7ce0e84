// Session view-model. Holds the single source of truth for what the page
// shows and guarantees the protocol contract: the rendered pair is always
// the server's pending query, and every displayed query produces at most
// one POST (input is disabled from the moment a choice is made until the
// next pair is fully loaded).

import { ApiClient, HttpError } from "./client.js";
import type { PendingQueryPayload, ProgressInfo } from "./protocol.js";

export type Side = "left" | "right";

export interface QueryView {
  queryId: number;
  leftId: number;
  rightId: number;
  leftUrl: string;
  rightUrl: string;
}

export interface ViewState {
  phase: "loading" | "ready" | "posting" | "completed" | "error";
  sessionId: string;
  emotion?: string;
  query?: QueryView;
  progress?: ProgressInfo;
  rankingUrl?: string;
  message?: string;
}

export type Preloader = (url: string) => Promise<void>;
export type Listener = (state: ViewState) => void;

const noPreload: Preloader = () => Promise.resolve();

export class SessionController {
  private state: ViewState;
  private epoch = 0; // invalidates in-flight refreshes superseded by newer ones

  constructor(
    private readonly client: ApiClient,
    readonly sessionId: string,
    private readonly listener: Listener,
    private readonly preload: Preloader = noPreload,
  ) {
    this.state = { phase: "loading", sessionId };
  }

  get view(): ViewState {
    return this.state;
  }

  private emit(state: ViewState): void {
    this.state = state;
    this.listener(state);
  }

  async start(): Promise<void> {
    await this.refresh();
  }

  /** Fetch the pending query (or completion) and render it. Images are
   * preloaded before input is enabled so a choice can never refer to a
   * half-shown pair. */
  private async refresh(): Promise<void> {
    const epoch = ++this.epoch;
    this.emit({ ...this.state, phase: "loading", query: undefined });
    try {
      const next = await this.client.next(this.sessionId);
      if (epoch !== this.epoch) return;
      if (next.completed) {
        this.emit({
          phase: "completed",
          sessionId: this.sessionId,
          emotion: this.state.emotion,
          rankingUrl: next.ranking_url,
          progress: this.state.progress,
        });
        return;
      }
      const pending = next as PendingQueryPayload;
      const leftUrl = this.client.resolve(pending.left);
      const rightUrl = this.client.resolve(pending.right);
      await Promise.all([this.preload(leftUrl), this.preload(rightUrl)]);
      if (epoch !== this.epoch) return;
      this.emit({
        phase: "ready",
        sessionId: this.sessionId,
        emotion: pending.emotion,
        progress: pending.progress,
        query: {
          queryId: pending.query_id,
          leftId: pending.left_id,
          rightId: pending.right_id,
          leftUrl,
          rightUrl,
        },
      });
    } catch (error) {
      if (epoch !== this.epoch) return;
      this.emit({
        ...this.state,
        phase: "error",
        query: undefined,
        message: String(error),
      });
    }
  }

  /** Submit the displayed pair's winner. No-op unless a pair is displayed
   * and input is enabled, so double clicks and key repeats cannot produce
   * a second POST for the same query. */
  async choose(side: Side): Promise<void> {
    if (this.state.phase !== "ready" || !this.state.query) return;
    const query = this.state.query;
    this.emit({ ...this.state, phase: "posting" });
    const winner = side === "left" ? query.leftId : query.rightId;
    try {
      await this.client.answer(this.sessionId, query.queryId, winner);
      await this.refresh();
    } catch (error) {
      if (error instanceof HttpError && (error.status === 409 || error.status === 400)) {
        // someone else advanced the session (another tab) or our view was
        // stale; resync silently without losing anything
        await this.refresh();
        return;
      }
      // network failure: the answer is NOT queued; the user retries once
      // the server is reachable and confirms the submission
      this.emit({
        ...this.state,
        phase: "error",
        query: undefined,
        message: String(error),
      });
    }
  }

  /** Keyboard mapping: ArrowLeft and ArrowRight mirror the two buttons. */
  async handleKey(key: string): Promise<void> {
    if (key === "ArrowLeft") await this.choose("left");
    else if (key === "ArrowRight") await this.choose("right");
  }

  async retry(): Promise<void> {
    if (this.state.phase === "error") await this.refresh();
  }
}
