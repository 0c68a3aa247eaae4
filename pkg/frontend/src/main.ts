/**
 * Browser wiring: keyboard and button input, screen switching, and the
 * feedback form.  All game state is authoritative on the server; this file
 * only reflects the ClientSession state machine onto the DOM.
 */

import { ApiClient } from "./api.js";
import { Action, ProtocolError } from "./protocol.js";
import { paint, reviewToOps, viewToOps } from "./render.js";
import { ClientSession } from "./session.js";

const KEY_ACTIONS: Record<string, Action> = {
  ArrowUp: "forward",
  ArrowDown: "back",
  ArrowLeft: "turn-left",
  ArrowRight: "turn-right",
};

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function showBanner(message: string): void {
  const banner = el<HTMLDivElement>("banner");
  banner.textContent = message;
  banner.hidden = false;
}

export function wireUp(): void {
  const api = new ApiClient("");
  const session = new ClientSession(api);
  const canvas = el<HTMLCanvasElement>("board");
  const ctx = canvas.getContext("2d");
  if (!ctx) throw new Error("canvas 2d context unavailable");

  function redraw(): void {
    ctx!.clearRect(0, 0, canvas.width, canvas.height);
    ctx!.save();
    ctx!.translate(40, 40);
    if (session.phase === "reviewing" && session.review) {
      paint(ctx!, reviewToOps(session.review));
    } else if (session.view) {
      paint(ctx!, viewToOps(session.view));
    }
    ctx!.restore();
    el("instruction").textContent = session.instruction || "(game over)";
    el("score").textContent =
      session.finalScore !== null
        ? `final score ${session.finalScore}`
        : `score ${session.view?.score ?? 0} | moves left ${session.view?.moves_left ?? 0}`;
    el("execute-controls").hidden = session.phase !== "executing";
    el("review-controls").hidden = session.phase !== "reviewing";
    el("feedback-controls").hidden = session.phase !== "feedback";
  }

  async function guard(fn: () => Promise<void>): Promise<void> {
    try {
      await fn();
    } catch (err) {
      if (err instanceof ProtocolError) {
        showBanner(`bad server payload: ${err.message}`);
      } else {
        showBanner(String(err));
      }
    }
    redraw();
  }

  document.addEventListener("keydown", (event) => {
    const action = KEY_ACTIONS[event.key];
    if (action && session.canMove()) {
      event.preventDefault();
      void guard(() => session.move(action).then(() => undefined));
    }
  });

  for (const action of ["forward", "back", "turn-left", "turn-right"] as Action[]) {
    el(`btn-${action}`).addEventListener("click", () =>
      guard(() => session.move(action).then(() => undefined)),
    );
  }
  el("btn-done").addEventListener("click", () =>
    guard(async () => {
      await session.complete(false);
    }),
  );
  el("btn-cant-follow").addEventListener("click", () =>
    guard(async () => {
      await session.complete(true);
    }),
  );
  el("btn-reviewed").addEventListener("click", () =>
    guard(async () => {
      session.acknowledgeReview();
    }),
  );
  el("btn-submit-feedback").addEventListener("click", () =>
    guard(async () => {
      const correct = el<HTMLInputElement>("fb-correct").checked;
      const grammatical = el<HTMLInputElement>("fb-grammatical").checked;
      await session.submitFeedback({
        perceived_correct: correct,
        grammatical: grammatical,
      });
    }),
  );

  void guard(() => session.start());
}

if (typeof document !== "undefined") {
  document.addEventListener("DOMContentLoaded", wireUp);
}
