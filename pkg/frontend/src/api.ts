/** Typed client for the gateway HTTP API. All requests go through fetch so
 * tests can inject a stub implementation. */

export interface Citation {
  origin_id: string;
  local_id: number;
  title: string;
  source_uri: string;
}

export interface AskResponse {
  query_id: string;
  answer_text: string;
  citations: Citation[];
  no_answer: boolean;
  variant: string;
}

export interface SearchHit {
  origin_id: string;
  local_id: number;
  title: string;
  snippet: string;
  source_uri: string;
  score: number;
  rank: number;
}

export type Thumbs = "up" | "down";

export class ApiError extends Error {
  constructor(
    public readonly status: number,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

export interface ClientOptions {
  agentId: string;
  role?: string;
  roleHeader?: string;
  fetchImpl?: typeof fetch;
}

export class GatewayClient {
  private readonly baseUrl: string;
  private readonly agentId: string;
  private readonly role?: string;
  private readonly roleHeader: string;
  private readonly fetchImpl: typeof fetch;

  constructor(baseUrl: string, options: ClientOptions) {
    this.baseUrl = baseUrl.replace(/\/+$/, "");
    this.agentId = options.agentId;
    this.role = options.role;
    this.roleHeader = options.roleHeader ?? "x-agent-role";
    this.fetchImpl = options.fetchImpl ?? fetch;
  }

  private headers(json: boolean): Record<string, string> {
    const h: Record<string, string> = {};
    if (json) h["content-type"] = "application/json";
    if (this.role !== undefined) h[this.roleHeader] = this.role;
    return h;
  }

  private async request<T>(path: string, init: RequestInit): Promise<T> {
    const res = await this.fetchImpl(`${this.baseUrl}${path}`, init);
    if (!res.ok) {
      let detail = res.statusText;
      try {
        const body = (await res.json()) as { detail?: unknown };
        if (typeof body.detail === "string") detail = body.detail;
      } catch {
        // non-JSON error body; keep the status text
      }
      throw new ApiError(res.status, detail);
    }
    return (await res.json()) as T;
  }

  async health(): Promise<boolean> {
    try {
      const body = await this.request<{ status: string }>("/v1/healthz", {
        method: "GET",
        headers: this.headers(false),
      });
      return body.status === "ok";
    } catch {
      return false;
    }
  }

  ask(question: string): Promise<AskResponse> {
    return this.request<AskResponse>("/v1/ask", {
      method: "POST",
      headers: this.headers(true),
      body: JSON.stringify({ question, agent_id: this.agentId }),
    });
  }

  feedback(queryId: string, thumbs: Thumbs): Promise<{ ok: boolean }> {
    return this.request<{ ok: boolean }>("/v1/feedback", {
      method: "POST",
      headers: this.headers(true),
      body: JSON.stringify({ query_id: queryId, thumbs }),
    });
  }

  async search(q: string, k = 5): Promise<SearchHit[]> {
    const params = new URLSearchParams({ q, k: String(k) });
    const body = await this.request<{ hits: SearchHit[] }>(
      `/v1/search?${params.toString()}`,
      { method: "GET", headers: this.headers(false) },
    );
    return body.hits;
  }
}
