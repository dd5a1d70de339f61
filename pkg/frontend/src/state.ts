// View-state machines for the chat and pairwise screens. These hold all
// behavior the DOM layer renders from, so they are unit-testable without
// a browser: optimistic sends reconciled against server acks, phase
// transitions, error banners that never drop state, and the
// complete-scores gate on pairwise submission.

import {
  ApiError,
  Client,
  GoalCardView,
  PairwiseChoice,
  SessionView,
  TransportFailure,
} from "./api.js";

export type Phase = "chatting" | "rating" | "done";

export interface ChatMessage {
  speaker: "user" | "system";
  text: string;
  // true until the server acknowledged the exchange this message is part of
  pending: boolean;
  state: string | null;
  knowledgeKind: string | null;
}

export type Scale = 1 | 2 | 3 | 4 | 5;

export const SCALE_OPTIONS: readonly Scale[] = [1, 2, 3, 4, 5];

function checkScale(value: number): asserts value is Scale {
  if (!Number.isInteger(value) || value < 1 || value > 5) {
    throw new Error(`scale values are 1..5, got ${value}`);
  }
}

export class ChatView {
  sessionId: string | null = null;
  modelName: string | null = null;
  goalCard: GoalCardView | null = null;
  messages: ChatMessage[] = [];
  composer = "";
  phase: Phase = "chatting";
  sessionStatus: SessionView["status"] | null = null;
  awaitingReply = false;
  error: string | null = null;

  constructor(private readonly client: Client) {}

  get canSend(): boolean {
    return (
      this.phase === "chatting" &&
      this.sessionId !== null &&
      !this.awaitingReply &&
      this.composer.trim().length > 0
    );
  }

  get ratingEnabled(): boolean {
    return this.phase === "rating";
  }

  private applySession(session: SessionView): void {
    this.sessionId = session.id;
    this.modelName = session.model_name;
    this.goalCard = session.goal_card;
    this.sessionStatus = session.status;
    this.messages = session.turns.map((turn) => ({
      speaker: turn.speaker,
      text: turn.text,
      pending: false,
      state: turn.state,
      knowledgeKind: turn.knowledge_kind,
    }));
    this.phase = session.status === "open" ? "chatting" : "done";
  }

  async start(modelName: string): Promise<void> {
    this.error = null;
    this.applySession(await this.client.createSession(modelName));
  }

  /** Restore a session after a page reload. */
  async resume(sessionId: string): Promise<void> {
    this.error = null;
    this.applySession(await this.client.getSession(sessionId));
  }

  async send(): Promise<void> {
    if (!this.canSend || this.sessionId === null) {
      return;
    }
    const text = this.composer.trim();
    // optimistic render; reconciled or rolled back below
    const optimistic: ChatMessage = {
      speaker: "user",
      text,
      pending: true,
      state: null,
      knowledgeKind: null,
    };
    this.messages.push(optimistic);
    this.composer = "";
    this.awaitingReply = true;
    this.error = null;
    try {
      const reply = await this.client.postMessage(this.sessionId, text);
      optimistic.pending = false;
      this.messages.push({
        speaker: "system",
        text: reply.reply,
        pending: false,
        state: reply.state,
        knowledgeKind: reply.knowledge_kind,
      });
    } catch (err) {
      // roll back the unacknowledged message and preserve the composer
      this.messages = this.messages.filter((m) => m !== optimistic);
      this.composer = text;
      this.error =
        err instanceof TransportFailure
          ? "could not reach the service; your message was kept - retry"
          : err instanceof ApiError
            ? err.message
            : String(err);
    } finally {
      this.awaitingReply = false;
    }
  }

  /** Move to the rating phase once at least one exchange happened. */
  finishChat(): void {
    if (this.phase !== "chatting") {
      return;
    }
    if (!this.messages.some((m) => m.speaker === "system")) {
      this.error = "chat with the model before rating it";
      return;
    }
    this.phase = "rating";
    this.error = null;
  }

  async submitRating(
    success: boolean,
    appropriateness: number,
    engagingness: number,
  ): Promise<void> {
    if (this.phase !== "rating" || this.sessionId === null) {
      this.error = "rating is only available after finishing the chat";
      return;
    }
    checkScale(appropriateness);
    checkScale(engagingness);
    try {
      await this.client.submitRating(this.sessionId, {
        success,
        appropriateness,
        engagingness,
      });
      this.phase = "done";
      this.sessionStatus = "rated";
      this.error = null;
    } catch (err) {
      // banner only; transcript, phase, and form state stay intact
      this.error = err instanceof Error ? err.message : String(err);
    }
  }
}

export interface PairwiseScores {
  aAppropriateness: Scale | null;
  aEngagingness: Scale | null;
  bAppropriateness: Scale | null;
  bEngagingness: Scale | null;
}

export class PairwiseView {
  dialogA: SessionView | null = null;
  dialogB: SessionView | null = null;
  overall: PairwiseChoice | null = null;
  scores: PairwiseScores = {
    aAppropriateness: null,
    aEngagingness: null,
    bAppropriateness: null,
    bEngagingness: null,
  };
  submitted = false;
  error: string | null = null;

  constructor(private readonly client: Client) {}

  async load(idA: string, idB: string): Promise<void> {
    if (idA === idB) {
      throw new Error("pick two distinct dialogs");
    }
    this.dialogA = await this.client.getSession(idA);
    this.dialogB = await this.client.getSession(idB);
    this.overall = null;
    this.scores = {
      aAppropriateness: null,
      aEngagingness: null,
      bAppropriateness: null,
      bEngagingness: null,
    };
    this.submitted = false;
    this.error = null;
  }

  setScore(key: keyof PairwiseScores, value: number): void {
    checkScale(value);
    this.scores[key] = value;
  }

  get canSubmit(): boolean {
    return (
      !this.submitted &&
      this.dialogA !== null &&
      this.dialogB !== null &&
      this.overall !== null &&
      this.scores.aAppropriateness !== null &&
      this.scores.aEngagingness !== null &&
      this.scores.bAppropriateness !== null &&
      this.scores.bEngagingness !== null
    );
  }

  /** Fields still blocking submission, for inline hints. */
  get missing(): string[] {
    const out: string[] = [];
    if (this.overall === null) out.push("overall choice");
    if (this.scores.aAppropriateness === null) out.push("appropriateness (A)");
    if (this.scores.aEngagingness === null) out.push("engagingness (A)");
    if (this.scores.bAppropriateness === null) out.push("appropriateness (B)");
    if (this.scores.bEngagingness === null) out.push("engagingness (B)");
    return out;
  }

  async submit(): Promise<void> {
    if (!this.canSubmit || !this.dialogA || !this.dialogB) {
      this.error = `missing: ${this.missing.join(", ")}`;
      return;
    }
    try {
      await this.client.submitPairwise({
        dialog_a_id: this.dialogA.id,
        dialog_b_id: this.dialogB.id,
        overall: this.overall as PairwiseChoice,
        a_appropriateness: this.scores.aAppropriateness as number,
        a_engagingness: this.scores.aEngagingness as number,
        b_appropriateness: this.scores.bAppropriateness as number,
        b_engagingness: this.scores.bEngagingness as number,
      });
      this.submitted = true;
      this.error = null;
    } catch (err) {
      this.error = err instanceof Error ? err.message : String(err);
    }
  }
}
