/**
 * End-to-end test against the real session service.  Spawns
 * `hexloop serve --oracle` as a child process, plays a complete game through
 * the ClientSession state machine, and checks that the persisted session
 * records use the same schema as records written by the simulator loop.
 */

import { ChildProcess, spawn } from "node:child_process";
import { mkdtempSync, readFileSync, readdirSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { ApiClient } from "../src/api.js";
import { ClientSession } from "../src/session.js";

const PORT = 8931;
const BASE = `http://127.0.0.1:${PORT}`;

let server: ChildProcess;
let recordsDir: string;

async function waitForServer(timeoutMs = 30_000): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  while (Date.now() < deadline) {
    try {
      await fetch(`${BASE}/docs`);
      return;
    } catch {
      await new Promise((r) => setTimeout(r, 200));
    }
  }
  throw new Error("server did not come up in time");
}

beforeAll(async () => {
  recordsDir = mkdtempSync(join(tmpdir(), "hexloop-e2e-"));
  server = spawn(
    "hexloop",
    ["serve", "--oracle", "--port", String(PORT), "--seed", "7", "--records-dir", recordsDir],
    { stdio: "ignore" },
  );
  await waitForServer();
}, 40_000);

afterAll(() => {
  server.kill();
});

describe("full game against the live service", () => {
  it("plays to game over and persists simulator-shaped records", async () => {
    const session = new ClientSession(new ApiClient(BASE));
    await session.start();
    expect(session.phase).toBe("executing");
    expect(session.instruction.length).toBeGreaterThan(0);

    let rounds = 0;
    while (session.phase !== "done" && rounds < 200) {
      rounds += 1;
      // take a few steps so move traffic is exercised; legality is the
      // server's call and either answer is fine here
      await session.move("forward");
      await session.move("turn-right");
      await session.complete(false);
      expect(session.phase).toBe("reviewing");
      expect(session.review?.path.length).toBeGreaterThanOrEqual(1);
      session.acknowledgeReview();
      await session.submitFeedback({
        perceived_correct: true,
        grammatical: true,
      });
    }

    expect(session.phase).toBe("done");
    expect(session.finalScore).not.toBeNull();

    const files = readdirSync(recordsDir).filter(
      (f) => f.startsWith("session-") && f.endsWith(".jsonl"),
    );
    expect(files.length).toBeGreaterThanOrEqual(1);

    const persisted = readFileSync(join(recordsDir, files[0]!), "utf-8")
      .trim()
      .split("\n")
      .map((line) => JSON.parse(line) as Record<string, unknown>);
    expect(persisted.length).toBe(rounds);

    const simLines = readFileSync(
      new URL("./fixtures/sim-records.jsonl", import.meta.url),
      "utf-8",
    )
      .trim()
      .split("\n")
      .map((line) => JSON.parse(line) as Record<string, unknown>);

    const simKeys = [...Object.keys(simLines[0]!)].sort();
    for (const rec of persisted) {
      expect([...Object.keys(rec)].sort()).toEqual(simKeys);
      expect(typeof rec.perceived_correct).toBe("boolean");
      expect(typeof rec.grammatical).toBe("boolean");
    }
  }, 120_000);

  it("rejects feedback before completion with a conflict", async () => {
    const session = new ClientSession(new ApiClient(BASE));
    await session.start();
    const res = await fetch(`${BASE}/v1/sessions/${session.sessionId}/feedback`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({
        perceived_correct: true,
        grammatical: true,
        idempotency_key: "premature",
      }),
    });
    expect(res.status).toBe(409);
  }, 30_000);
});
