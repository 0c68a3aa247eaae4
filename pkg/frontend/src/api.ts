/**
 * Thin HTTP client for the session service.  Feedback posts carry an
 * idempotency key and retry on network failure; the server replays the
 * original response for a repeated key, so retries never double-record.
 */

import {
  Action,
  CompleteResponse,
  GameOverPayload,
  InstructionPayload,
  MoveResponse,
  parseCompleteResponse,
  parseInstructionOrGameOver,
  parseMoveResponse,
} from "./protocol.js";

export interface FeedbackAnswers {
  perceived_correct: boolean;
  grammatical: boolean;
}

export class ApiError extends Error {
  constructor(
    public status: number,
    message: string,
  ) {
    super(message);
  }
}

async function post(base: string, path: string, body: unknown): Promise<unknown> {
  const res = await fetch(`${base}${path}`, {
    method: "POST",
    headers: { "content-type": "application/json" },
    body: JSON.stringify(body ?? {}),
  });
  const text = await res.text();
  if (!res.ok) {
    throw new ApiError(res.status, `${path} failed (${res.status}): ${text}`);
  }
  return JSON.parse(text);
}

export class ApiClient {
  constructor(private readonly base: string) {}

  async createSession(): Promise<InstructionPayload | GameOverPayload> {
    return parseInstructionOrGameOver(await post(this.base, "/v1/sessions", {}));
  }

  async move(sessionId: string, action: Action): Promise<MoveResponse> {
    return parseMoveResponse(
      await post(this.base, `/v1/sessions/${sessionId}/move`, { action }),
    );
  }

  async complete(sessionId: string, terminated: boolean): Promise<CompleteResponse> {
    return parseCompleteResponse(
      await post(this.base, `/v1/sessions/${sessionId}/complete`, { terminated }),
    );
  }

  async feedback(
    sessionId: string,
    answers: FeedbackAnswers,
    idempotencyKey: string,
    retries = 2,
  ): Promise<InstructionPayload | GameOverPayload> {
    let lastError: unknown;
    for (let attempt = 0; attempt <= retries; attempt += 1) {
      try {
        return parseInstructionOrGameOver(
          await post(this.base, `/v1/sessions/${sessionId}/feedback`, {
            ...answers,
            idempotency_key: idempotencyKey,
          }),
        );
      } catch (err) {
        if (err instanceof ApiError) throw err; // server answered; don't retry
        lastError = err; // network failure: safe to retry with the same key
      }
    }
    throw lastError;
  }
}
