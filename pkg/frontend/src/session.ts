/**
 * Client-side session state machine.
 *
 * Phases: executing (moves allowed) -> reviewing (execution path shown)
 * -> feedback (the two questions) -> executing again or done.  Guards
 * enforce that moves only happen while executing and feedback only after
 * the review was shown.
 */

import { ApiClient, FeedbackAnswers } from "./api.js";
import {
  Action,
  GameOverPayload,
  InstructionPayload,
  ReviewPayload,
  ViewPayload,
} from "./protocol.js";

export type Phase = "executing" | "reviewing" | "feedback" | "done";

export class PhaseError extends Error {}

function randomKey(): string {
  return Math.random().toString(36).slice(2) + Date.now().toString(36);
}

export class ClientSession {
  phase: Phase = "done";
  sessionId = "";
  instruction = "";
  view: ViewPayload | null = null;
  review: ReviewPayload | null = null;
  moveHistory: Action[] = [];
  finalScore: number | null = null;
  terminated = false;
  private feedbackKey = "";

  constructor(private readonly api: ApiClient) {}

  async start(): Promise<void> {
    const payload = await this.api.createSession();
    this.sessionId = payload.session_id;
    this.applyInstruction(payload);
  }

  private applyInstruction(payload: InstructionPayload | GameOverPayload): void {
    if (payload.game_over) {
      this.phase = "done";
      this.finalScore = payload.score;
      this.instruction = "";
      return;
    }
    this.phase = "executing";
    this.instruction = payload.instruction;
    this.view = payload.view;
    this.moveHistory = [];
    this.terminated = false;
    this.review = null;
  }

  canMove(): boolean {
    return this.phase === "executing";
  }

  async move(action: Action): Promise<boolean> {
    if (!this.canMove()) {
      throw new PhaseError(`cannot move while ${this.phase}`);
    }
    const res = await this.api.move(this.sessionId, action);
    this.view = res.view;
    if (res.legal) this.moveHistory.push(action);
    return res.legal;
  }

  /** Mark the instruction done (or impossible) and fetch the review. */
  async complete(terminated = false): Promise<ReviewPayload> {
    if (this.phase !== "executing") {
      throw new PhaseError(`cannot complete while ${this.phase}`);
    }
    this.terminated = terminated;
    const res = await this.api.complete(this.sessionId, terminated);
    this.review = res.review;
    this.phase = "reviewing";
    return res.review;
  }

  /** Acknowledge the review; the feedback questions become answerable. */
  acknowledgeReview(): void {
    if (this.phase !== "reviewing") {
      throw new PhaseError(`no review pending while ${this.phase}`);
    }
    this.phase = "feedback";
    this.feedbackKey = randomKey();
  }

  async submitFeedback(answers: FeedbackAnswers): Promise<void> {
    if (this.phase !== "feedback") {
      throw new PhaseError(`cannot submit feedback while ${this.phase}`);
    }
    const payload = await this.api.feedback(
      this.sessionId,
      answers,
      this.feedbackKey,
    );
    this.applyInstruction(payload);
  }
}
