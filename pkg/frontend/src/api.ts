import type {
  CatalogPoint,
  CatalogSummary,
  Envelope,
  LabelItem,
  QueryData,
  QueryOutcome,
  SessionConfig,
  SessionSnapshot,
} from "./types.js";

export class ApiError extends Error {
  constructor(message: string, readonly status: number) {
    super(message);
  }
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

/** Thin typed client over the service's envelope responses. */
export class ApiClient {
  constructor(
    private readonly base: string = "",
    private readonly fetchImpl: FetchLike = (url, init) => fetch(url, init),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<Envelope<T>> {
    const resp = await this.fetchImpl(this.base + path, init);
    let body: Envelope<T>;
    try {
      body = (await resp.json()) as Envelope<T>;
    } catch {
      throw new ApiError(`non-JSON response (${resp.status})`, resp.status);
    }
    if (!resp.ok || !body.ok) {
      throw new ApiError(body.error ?? `request failed (${resp.status})`, resp.status);
    }
    return body;
  }

  private post<T>(path: string, payload: unknown): Promise<Envelope<T>> {
    return this.request<T>(path, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(payload),
    });
  }

  async createSession(config: SessionConfig): Promise<string> {
    const env = await this.post<{ session_id: string }>("/sessions", config);
    return env.data!.session_id;
  }

  async addLabels(sessionId: string, items: LabelItem[]): Promise<void> {
    await this.post(`/sessions/${sessionId}/labels`, items);
  }

  async query(
    sessionId: string,
    body: { random_negatives?: number; seed?: number | null } = {},
  ): Promise<QueryOutcome> {
    const env = await this.post<QueryData>(`/sessions/${sessionId}/query`, body);
    return { ids: env.data!.positive_ids, timings: env.timings, seed: env.seed };
  }

  async getSession(sessionId: string): Promise<SessionSnapshot> {
    const env = await this.request<SessionSnapshot>(`/sessions/${sessionId}`);
    return env.data!;
  }

  async getPoints(ids: number[]): Promise<CatalogPoint[]> {
    const env = await this.request<{ points: CatalogPoint[] }>(
      `/catalog/points?ids=${ids.join(",")}`,
    );
    return env.data!.points;
  }

  async getSummary(): Promise<CatalogSummary> {
    const env = await this.request<CatalogSummary>("/catalog/summary");
    return env.data!;
  }
}
