// Typed client for the evaluation service JSON API. Every method maps
// 1:1 to one endpoint; non-2xx responses become ApiError with the
// server's {code, message} payload.

export interface DomainGoalView {
  constraints: Record<string, string>;
  requests: string[];
  requires_entity: boolean;
}

export type GoalCardView = Record<string, DomainGoalView>;

export interface TurnView {
  speaker: "user" | "system";
  text: string;
  state: string | null;
  knowledge_kind: string | null;
}

export type SessionStatus = "open" | "rated" | "abandoned";

export interface SessionView {
  id: string;
  model_name: string;
  goal_card: GoalCardView;
  turns: TurnView[];
  status: SessionStatus;
  created_at: number;
}

export interface MessageReply {
  reply: string;
  state: string;
  knowledge_kind: string;
}

export interface RatingBody {
  success: boolean;
  appropriateness: number;
  engagingness: number;
}

export type PairwiseChoice = "a" | "b" | "tie";

export interface PairwiseBody {
  dialog_a_id: string;
  dialog_b_id: string;
  overall: PairwiseChoice;
  a_appropriateness: number;
  a_engagingness: number;
  b_appropriateness: number;
  b_engagingness: number;
}

export interface AggregatesView {
  ratings: Record<
    string,
    Record<string, { mean: number; std: number; n: number }>
  >;
  pairwise: Record<string, Record<string, number>>;
}

export class ApiError extends Error {
  readonly code: string;
  readonly status: number;

  constructor(status: number, code: string, message: string) {
    super(message);
    this.code = code;
    this.status = status;
  }
}

export class TransportFailure extends Error {}

export class Client {
  constructor(
    private readonly baseUrl: string,
    private readonly raterId: string = "anonymous",
    private readonly fetchFn: typeof fetch = fetch,
  ) {}

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    let response: Response;
    try {
      response = await this.fetchFn(`${this.baseUrl}${path}`, {
        method,
        headers: {
          "Content-Type": "application/json",
          "X-Rater-Id": this.raterId,
        },
        body: body === undefined ? undefined : JSON.stringify(body),
      });
    } catch (err) {
      throw new TransportFailure(`service unreachable: ${String(err)}`);
    }
    if (!response.ok) {
      let code = "error";
      let message = `HTTP ${response.status}`;
      try {
        const payload = (await response.json()) as { code?: string; message?: string };
        code = payload.code ?? code;
        message = payload.message ?? message;
      } catch {
        // non-JSON error body; keep the defaults
      }
      throw new ApiError(response.status, code, message);
    }
    return (await response.json()) as T;
  }

  createSession(modelName: string): Promise<SessionView> {
    return this.request<SessionView>("POST", "/sessions", { model_name: modelName });
  }

  getSession(id: string): Promise<SessionView> {
    return this.request<SessionView>("GET", `/sessions/${id}`);
  }

  async listSessions(): Promise<SessionView[]> {
    const body = await this.request<{ sessions: SessionView[] }>("GET", "/sessions");
    return body.sessions;
  }

  postMessage(sessionId: string, text: string): Promise<MessageReply> {
    return this.request<MessageReply>("POST", `/sessions/${sessionId}/messages`, { text });
  }

  submitRating(sessionId: string, rating: RatingBody): Promise<{ status: string }> {
    return this.request<{ status: string }>("POST", `/sessions/${sessionId}/rating`, rating);
  }

  submitPairwise(judgment: PairwiseBody): Promise<{ status: string }> {
    return this.request<{ status: string }>("POST", "/pairwise", judgment);
  }

  aggregates(): Promise<AggregatesView> {
    return this.request<AggregatesView>("GET", "/aggregates");
  }
}
