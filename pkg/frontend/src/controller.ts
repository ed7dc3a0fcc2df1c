/** State machine driving the console. Rendering is a subscriber; the
 * controller only mutates state and notifies. */
import { ApiError, AskResponse, SearchHit, Thumbs } from "./api.js";

export interface AskClient {
  ask(question: string): Promise<AskResponse>;
  feedback(queryId: string, thumbs: Thumbs): Promise<{ ok: boolean }>;
  search(q: string, k?: number): Promise<SearchHit[]>;
}

export type Phase = "idle" | "asking" | "answered" | "fallback";

export interface ConsoleState {
  phase: Phase;
  question: string;
  answer: AskResponse | null;
  /** Prefilled with the failed question when the engine returns no answer. */
  fallbackQuery: string;
  searchResults: SearchHit[];
  feedbackEnabled: boolean;
  feedbackInFlight: boolean;
  /** Last thumbs accepted by the gateway; repeated toggles overwrite it. */
  feedbackSent: Thumbs | null;
  error: string | null;
}

function initialState(): ConsoleState {
  return {
    phase: "idle",
    question: "",
    answer: null,
    fallbackQuery: "",
    searchResults: [],
    feedbackEnabled: false,
    feedbackInFlight: false,
    feedbackSent: null,
    error: null,
  };
}

export type Listener = (state: ConsoleState) => void;

export class ConsoleController {
  private state: ConsoleState = initialState();
  private listeners: Listener[] = [];
  private askGeneration = 0;

  constructor(private readonly client: AskClient) {}

  getState(): ConsoleState {
    return this.state;
  }

  subscribe(listener: Listener): () => void {
    this.listeners.push(listener);
    return () => {
      this.listeners = this.listeners.filter((l) => l !== listener);
    };
  }

  private set(patch: Partial<ConsoleState>): void {
    this.state = { ...this.state, ...patch };
    for (const listener of this.listeners) listener(this.state);
  }

  /** Submit a question. A newer ask supersedes any in-flight one: the stale
   * response is discarded without rendering. */
  async ask(question: string): Promise<void> {
    const trimmed = question.trim();
    if (!trimmed) {
      this.set({ error: "question must not be empty" });
      return;
    }
    const generation = ++this.askGeneration;
    this.set({
      phase: "asking",
      question: trimmed,
      answer: null,
      searchResults: [],
      fallbackQuery: "",
      feedbackEnabled: false,
      feedbackInFlight: false,
      feedbackSent: null,
      error: null,
    });
    let response: AskResponse;
    try {
      response = await this.client.ask(trimmed);
    } catch (err) {
      if (generation !== this.askGeneration) return;
      this.set({ phase: "idle", error: describe(err) });
      return;
    }
    if (generation !== this.askGeneration) return;
    if (response.no_answer) {
      await this.runFallbackSearch(trimmed, generation, response);
      return;
    }
    this.set({ phase: "answered", answer: response, feedbackEnabled: true });
  }

  private async runFallbackSearch(
    query: string,
    generation: number,
    answer: AskResponse,
  ): Promise<void> {
    let hits: SearchHit[] = [];
    let error: string | null = null;
    try {
      hits = await this.client.search(query);
    } catch (err) {
      error = describe(err);
    }
    if (generation !== this.askGeneration) return;
    this.set({
      phase: "fallback",
      answer,
      fallbackQuery: query,
      searchResults: hits,
      feedbackEnabled: false,
      error,
    });
  }

  /** Re-run the fallback search, defaulting to the prefilled query. */
  async searchFallback(query?: string): Promise<void> {
    const q = (query ?? this.state.fallbackQuery).trim();
    if (!q) {
      this.set({ error: "search query must not be empty" });
      return;
    }
    try {
      const hits = await this.client.search(q);
      this.set({ phase: "fallback", fallbackQuery: q, searchResults: hits, error: null });
    } catch (err) {
      this.set({ error: describe(err) });
    }
  }

  /** Thumbs feedback on the shown answer. Repeats are allowed and the last
   * accepted value wins, matching the gateway's idempotency rule. */
  async sendFeedback(thumbs: Thumbs): Promise<void> {
    const { answer, feedbackEnabled, feedbackInFlight } = this.state;
    if (!answer || !feedbackEnabled || feedbackInFlight) return;
    this.set({ feedbackInFlight: true, error: null });
    try {
      await this.client.feedback(answer.query_id, thumbs);
      this.set({ feedbackInFlight: false, feedbackSent: thumbs });
    } catch (err) {
      // a 404 means the gateway no longer knows the query; surface it and
      // leave the buttons usable so the agent can retry or move on
      this.set({ feedbackInFlight: false, error: describe(err) });
    }
  }

  reset(): void {
    this.askGeneration++;
    this.state = initialState();
    for (const listener of this.listeners) listener(this.state);
  }
}

function describe(err: unknown): string {
  if (err instanceof ApiError) return `gateway error ${err.status}: ${err.message}`;
  if (err instanceof Error) return err.message;
  return String(err);
}
