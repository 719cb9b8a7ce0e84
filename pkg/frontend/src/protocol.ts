// Wire types of the annotation service HTTP API.

export interface ProgressInfo {
  answered: number;
  worst_case: number;
  fraction: number;
}

export interface PendingQueryPayload {
  completed: false;
  query_id: number;
  left_id: number;
  right_id: number;
  left: string;
  right: string;
  emotion: string;
  progress: ProgressInfo;
}

export interface CompletedPayload {
  completed: true;
  ranking_url: string;
}

export type NextPayload = PendingQueryPayload | CompletedPayload;

export interface AnswerResponse {
  accepted: boolean;
  completed: boolean;
  progress: ProgressInfo;
}

export interface CreateSessionResponse {
  session_id: string;
  resumed: boolean;
  completed: boolean;
}

export interface RankingPayload {
  session_id: string;
  emotion: string;
  ranking: number[];
  consistency: number;
}
