/**
 * Wire types for the session service and runtime validators for them.
 *
 * The server never sends the plan or its target cards; the validators
 * reject payloads carrying unexpected plan-like fields so a regression on
 * the server side fails loudly in the client.
 */

export type Action = "forward" | "back" | "turn-left" | "turn-right";

export const ACTIONS: readonly Action[] = [
  "forward",
  "back",
  "turn-left",
  "turn-right",
];

export interface LandmarkInfo {
  kind: string;
  color: string;
}

export interface CardInfo {
  count: number;
  color: string;
  shape: string;
  selected: boolean;
}

export interface ViewCell {
  cell: [number, number];
  terrain: string;
  landmark?: LandmarkInfo;
  card?: CardInfo;
}

export interface ViewPayload {
  schema_version: number;
  pose: [number, number, number];
  height: number;
  width: number;
  cells: ViewCell[];
  score: number;
  moves_left: number;
  turns_left: number;
}

export interface InstructionPayload {
  schema_version: number;
  session_id: string;
  instruction: string;
  view: ViewPayload;
  game_over: false;
}

export interface GameOverPayload {
  schema_version: number;
  session_id: string;
  game_over: true;
  score: number;
}

export interface MoveResponse {
  view: ViewPayload;
  legal: boolean;
  moves_exhausted: boolean;
}

export interface ReviewCell {
  cell: [number, number];
  terrain: string;
  landmark?: LandmarkInfo;
  card?: CardInfo;
}

export interface ReviewPayload {
  schema_version: number;
  cells: ReviewCell[];
  path: [number, number, number][];
  score: number;
}

export interface CompleteResponse {
  status: "awaiting_feedback";
  review: ReviewPayload;
}

export class ProtocolError extends Error {}

const FORBIDDEN_KEYS = ["plan", "plan_poses", "plan_targets", "target_cards", "targets", "leader_actions"];

function assertNoPlanFields(value: unknown, where: string): void {
  if (value === null || typeof value !== "object") return;
  for (const [key, child] of Object.entries(value as Record<string, unknown>)) {
    if (FORBIDDEN_KEYS.includes(key)) {
      throw new ProtocolError(`${where}: payload contains hidden-plan field '${key}'`);
    }
    assertNoPlanFields(child, where);
  }
}

function fail(where: string, what: string): never {
  throw new ProtocolError(`${where}: ${what}`);
}

function isRecord(v: unknown): v is Record<string, unknown> {
  return typeof v === "object" && v !== null && !Array.isArray(v);
}

function asTriple(v: unknown, where: string): [number, number, number] {
  if (!Array.isArray(v) || v.length !== 3 || v.some((x) => typeof x !== "number")) {
    fail(where, "expected a [number, number, number]");
  }
  return [v[0] as number, v[1] as number, v[2] as number];
}

function asPair(v: unknown, where: string): [number, number] {
  if (!Array.isArray(v) || v.length !== 2 || v.some((x) => typeof x !== "number")) {
    fail(where, "expected a [number, number]");
  }
  return [v[0] as number, v[1] as number];
}

function parseCell(v: unknown, where: string): ViewCell {
  if (!isRecord(v)) fail(where, "cell entry is not an object");
  const out: ViewCell = {
    cell: asPair(v.cell, where),
    terrain: typeof v.terrain === "string" ? v.terrain : fail(where, "missing terrain"),
  };
  if (v.landmark !== undefined) {
    if (!isRecord(v.landmark)) fail(where, "bad landmark");
    out.landmark = {
      kind: String(v.landmark.kind),
      color: String(v.landmark.color),
    };
  }
  if (v.card !== undefined) {
    if (!isRecord(v.card)) fail(where, "bad card");
    out.card = {
      count: Number(v.card.count),
      color: String(v.card.color),
      shape: String(v.card.shape),
      selected: Boolean(v.card.selected),
    };
  }
  return out;
}

export function parseView(v: unknown, where = "view"): ViewPayload {
  if (!isRecord(v)) fail(where, "not an object");
  assertNoPlanFields(v, where);
  if (!Array.isArray(v.cells)) fail(where, "missing cells");
  return {
    schema_version: Number(v.schema_version),
    pose: asTriple(v.pose, where),
    height: Number(v.height),
    width: Number(v.width),
    cells: v.cells.map((c, i) => parseCell(c, `${where}.cells[${i}]`)),
    score: Number(v.score),
    moves_left: Number(v.moves_left),
    turns_left: Number(v.turns_left),
  };
}

export function parseInstructionOrGameOver(
  v: unknown,
): InstructionPayload | GameOverPayload {
  const where = "session";
  if (!isRecord(v)) fail(where, "not an object");
  assertNoPlanFields(v, where);
  if (typeof v.session_id !== "string") fail(where, "missing session_id");
  if (v.game_over === true) {
    return {
      schema_version: Number(v.schema_version),
      session_id: v.session_id,
      game_over: true,
      score: Number(v.score),
    };
  }
  if (typeof v.instruction !== "string" || !v.instruction) {
    fail(where, "missing instruction");
  }
  return {
    schema_version: Number(v.schema_version),
    session_id: v.session_id,
    instruction: v.instruction,
    view: parseView(v.view),
    game_over: false,
  };
}

export function parseMoveResponse(v: unknown): MoveResponse {
  const where = "move";
  if (!isRecord(v)) fail(where, "not an object");
  assertNoPlanFields(v, where);
  return {
    view: parseView(v.view),
    legal: Boolean(v.legal),
    moves_exhausted: Boolean(v.moves_exhausted),
  };
}

export function parseCompleteResponse(v: unknown): CompleteResponse {
  const where = "complete";
  if (!isRecord(v)) fail(where, "not an object");
  assertNoPlanFields(v, where);
  if (v.status !== "awaiting_feedback") fail(where, "unexpected status");
  const r = v.review;
  if (!isRecord(r) || !Array.isArray(r.cells) || !Array.isArray(r.path)) {
    fail(where, "bad review payload");
  }
  return {
    status: "awaiting_feedback",
    review: {
      schema_version: Number(r.schema_version),
      cells: r.cells.map((c, i) => parseCell(c, `${where}.cells[${i}]`)),
      path: r.path.map((p, i) => asTriple(p, `${where}.path[${i}]`)),
      score: Number(r.score),
    },
  };
}
