/** Shapes exchanged with the search service's JSON API. */

export interface Envelope<T> {
  ok: boolean;
  data: T | null;
  error?: string;
  seed: number | null;
  timings: Timings | null;
}

export interface Timings {
  t_train: number;
  t_query: number;
  t_total: number;
}

export interface SessionConfig {
  variant?: "B" | "Ts" | "Ta";
  p?: number | null;
  mu?: number;
  p_m?: number;
  M?: number;
  seed?: number;
}

export interface LabelItem {
  id: number;
  label: 0 | 1;
}

export interface QueryData {
  positive_ids: number[];
  per_branch_counts: [number, number][];
}

export interface QueryOutcome {
  ids: number[];
  timings: Timings | null;
  seed: number | null;
}

export interface CatalogPoint {
  id: number;
  features: number[];
  x: number;
  y: number;
}

export interface CatalogSummary {
  n: number;
  d: number;
  k: number;
  D: number;
  layout: string;
  ids: number[];
  projection: [number, number][];
}

export interface SessionSnapshot {
  session_id: string;
  config: Required<SessionConfig>;
  labels: LabelItem[];
  last_result: QueryData | null;
}

/** One recorded user interaction; a session is replayable from its log. */
export type LogEntry =
  | { kind: "create"; config: SessionConfig }
  | { kind: "labels"; items: LabelItem[] }
  | { kind: "query"; seed: number | null };
