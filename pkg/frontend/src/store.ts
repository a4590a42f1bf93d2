import type { ApiClient } from "./api.js";
import type { LabelItem, LogEntry, QueryOutcome, SessionConfig, Timings } from "./types.js";

export type StoreListener = () => void;

/**
 * Client-side session state. Invariants:
 *  - the local label map mirrors server state after every acknowledged
 *    mutation (optimistic writes roll back on failure);
 *  - at most one query is in flight;
 *  - result ids are exactly the last server response, never synthesized.
 */
export class SessionStore {
  sessionId: string | null = null;
  labels = new Map<number, 0 | 1>();
  resultIds: number[] = [];
  timings: Timings | null = null;
  pending = false;
  lastError: string | null = null;
  readonly log: LogEntry[] = [];
  private listeners: StoreListener[] = [];

  constructor(private readonly api: ApiClient) {}

  subscribe(fn: StoreListener): void {
    this.listeners.push(fn);
  }

  private notify(): void {
    for (const fn of this.listeners) fn();
  }

  get positiveCount(): number {
    let count = 0;
    for (const v of this.labels.values()) if (v === 1) count += 1;
    return count;
  }

  get canQuery(): boolean {
    return this.sessionId !== null && this.positiveCount > 0 && !this.pending;
  }

  async init(config: SessionConfig): Promise<void> {
    this.sessionId = await this.api.createSession(config);
    this.log.push({ kind: "create", config });
    this.notify();
  }

  /** Optimistic label write; restores the previous values if the POST fails. */
  async labelSelection(ids: number[], label: 0 | 1): Promise<boolean> {
    if (this.sessionId === null || ids.length === 0) return false;
    const unique = [...new Set(ids)];
    const previous = new Map<number, 0 | 1 | undefined>();
    for (const id of unique) {
      previous.set(id, this.labels.get(id));
      this.labels.set(id, label);
    }
    this.notify();
    const items: LabelItem[] = unique.map((id) => ({ id, label }));
    try {
      await this.api.addLabels(this.sessionId, items);
      this.log.push({ kind: "labels", items });
      this.lastError = null;
      return true;
    } catch (err) {
      for (const [id, old] of previous) {
        if (old === undefined) this.labels.delete(id);
        else this.labels.set(id, old);
      }
      this.lastError = err instanceof Error ? err.message : String(err);
      return false;
    } finally {
      this.notify();
    }
  }

  /** The refinement gesture: relabel ids taken from the current result set. */
  async adoptResultsAsLabels(subset: number[], label: 0 | 1): Promise<boolean> {
    const resultSet = new Set(this.resultIds);
    const outside = subset.filter((id) => !resultSet.has(id));
    if (outside.length > 0) {
      this.lastError = `ids not in the current result set: ${outside.slice(0, 3)}`;
      this.notify();
      return false;
    }
    return this.labelSelection(subset, label);
  }

  /** One query in flight at a time; returns null when the guard rejects. */
  async runQuery(seed: number | null = null): Promise<QueryOutcome | null> {
    if (!this.canQuery || this.sessionId === null) return null;
    this.pending = true;
    this.notify();
    try {
      const body = seed === null ? {} : { seed };
      const outcome = await this.api.query(this.sessionId, body);
      this.resultIds = outcome.ids;
      this.timings = outcome.timings;
      this.log.push({ kind: "query", seed });
      this.lastError = null;
      return outcome;
    } catch (err) {
      this.lastError = err instanceof Error ? err.message : String(err);
      return null;
    } finally {
      this.pending = false;
      this.notify();
    }
  }

  /** Rebuild the local label map from the server (page refresh path). */
  async rehydrate(sessionId: string): Promise<void> {
    const snapshot = await this.api.getSession(sessionId);
    this.sessionId = snapshot.session_id;
    this.labels = new Map(snapshot.labels.map((it) => [it.id, it.label]));
    this.resultIds = snapshot.last_result?.positive_ids ?? [];
    this.notify();
  }
}

/** Replay a recorded interaction log against a (fresh) service session. */
export async function replayLog(
  api: ApiClient,
  log: readonly LogEntry[],
): Promise<number[]> {
  let sessionId: string | null = null;
  let lastIds: number[] = [];
  for (const entry of log) {
    if (entry.kind === "create") {
      sessionId = await api.createSession(entry.config);
    } else if (sessionId === null) {
      throw new Error("log does not start with a create entry");
    } else if (entry.kind === "labels") {
      await api.addLabels(sessionId, entry.items);
    } else {
      const outcome = await api.query(
        sessionId,
        entry.seed === null ? {} : { seed: entry.seed },
      );
      lastIds = outcome.ids;
    }
  }
  return lastIds;
}
