/**
 * Rendering for the two screens: the follower's partial view and the
 * top-down review with the execution path.
 *
 * Rendering is split in two stages so it can be tested without a DOM:
 * a pure payload -> draw-op list stage (snapshot tested against golden
 * files), and a tiny draw-op -> canvas stage.
 */

import { ReviewPayload, ViewPayload } from "./protocol.js";

export const HEX_SIZE = 22;

export type DrawOp =
  | { op: "hex"; x: number; y: number; fill: string; stroke: string }
  | { op: "disc"; x: number; y: number; r: number; fill: string }
  | { op: "text"; x: number; y: number; text: string; fill: string; size: number }
  | { op: "arrow"; x: number; y: number; angle: number; fill: string }
  | { op: "line"; x1: number; y1: number; x2: number; y2: number; stroke: string; width: number };

const TERRAIN_FILL: Record<string, string> = {
  plain: "#e8e3d0",
  water: "#7db4d8",
  landmark: "#c9b287",
};

const CARD_FILL: Record<string, string> = {
  red: "#d2504b",
  green: "#4d9e56",
  blue: "#4a6fc4",
};

/** Cartesian center of an axial hex cell (pointy-top, q = column, r = row). */
export function hexCenter(h: number, w: number, size = HEX_SIZE): [number, number] {
  const q = w;
  const r = h;
  const x = size * Math.sqrt(3) * (q + r / 2);
  const y = size * 1.5 * r;
  return [Math.round(x * 100) / 100, Math.round(y * 100) / 100];
}

/** Facing angle in radians for an orientation index (turn-left increases). */
export function facingAngle(alpha: number): number {
  return (-alpha * Math.PI) / 3 + Math.PI / 6;
}

function cardOps(x: number, y: number, card: { count: number; color: string; shape: string; selected: boolean }): DrawOp[] {
  const fill = CARD_FILL[card.color] ?? "#999";
  const ops: DrawOp[] = [
    { op: "disc", x, y, r: HEX_SIZE * 0.55, fill },
    {
      op: "text",
      x,
      y,
      text: `${card.count}${card.shape[0] ?? "?"}`,
      fill: "#ffffff",
      size: 11,
    },
  ];
  if (card.selected) {
    ops.push({ op: "disc", x, y: y - HEX_SIZE * 0.75, r: 3, fill: "#f5c542" });
  }
  return ops;
}

export function viewToOps(view: ViewPayload): DrawOp[] {
  const ops: DrawOp[] = [];
  const sorted = [...view.cells].sort(
    (a, b) => a.cell[0] - b.cell[0] || a.cell[1] - b.cell[1],
  );
  for (const cell of sorted) {
    const [x, y] = hexCenter(cell.cell[0], cell.cell[1]);
    ops.push({
      op: "hex",
      x,
      y,
      fill: TERRAIN_FILL[cell.terrain] ?? "#cccccc",
      stroke: "#6b6657",
    });
    if (cell.landmark) {
      ops.push({
        op: "text",
        x,
        y,
        text: cell.landmark.kind,
        fill: "#3d3322",
        size: 9,
      });
    }
    if (cell.card) {
      ops.push(...cardOps(x, y, cell.card));
    }
  }
  // the follower sits at the cone apex, drawn last so it is on top
  const [h, w, alpha] = view.pose;
  const [x, y] = hexCenter(h, w);
  ops.push({ op: "hex", x, y, fill: "#fdf6da", stroke: "#b5442e" });
  ops.push({ op: "arrow", x, y, angle: facingAngle(alpha), fill: "#b5442e" });
  return ops;
}

export function reviewToOps(review: ReviewPayload): DrawOp[] {
  const ops: DrawOp[] = [];
  for (const cell of review.cells) {
    const [x, y] = hexCenter(cell.cell[0], cell.cell[1]);
    ops.push({
      op: "hex",
      x,
      y,
      fill: TERRAIN_FILL[cell.terrain] ?? "#cccccc",
      stroke: "#6b6657",
    });
    if (cell.card) {
      ops.push(...cardOps(x, y, cell.card));
    }
  }
  // execution path highlighted on top of the whole board
  for (let i = 1; i < review.path.length; i += 1) {
    const prev = review.path[i - 1]!;
    const cur = review.path[i]!;
    if (prev[0] === cur[0] && prev[1] === cur[1]) continue; // turn in place
    const [x1, y1] = hexCenter(prev[0], prev[1]);
    const [x2, y2] = hexCenter(cur[0], cur[1]);
    ops.push({ op: "line", x1, y1, x2, y2, stroke: "#b5442e", width: 3 });
  }
  const first = review.path[0];
  if (first) {
    const [x, y] = hexCenter(first[0], first[1]);
    ops.push({ op: "disc", x, y, r: 5, fill: "#b5442e" });
  }
  return ops;
}

/** Paint draw ops onto a canvas 2D context. */
export function paint(ctx: CanvasRenderingContext2D, ops: DrawOp[], size = HEX_SIZE): void {
  for (const op of ops) {
    switch (op.op) {
      case "hex": {
        ctx.beginPath();
        for (let k = 0; k < 6; k += 1) {
          const angle = (Math.PI / 180) * (60 * k - 30);
          const px = op.x + size * Math.cos(angle);
          const py = op.y + size * Math.sin(angle);
          if (k === 0) ctx.moveTo(px, py);
          else ctx.lineTo(px, py);
        }
        ctx.closePath();
        ctx.fillStyle = op.fill;
        ctx.fill();
        ctx.strokeStyle = op.stroke;
        ctx.stroke();
        break;
      }
      case "disc":
        ctx.beginPath();
        ctx.arc(op.x, op.y, op.r, 0, 2 * Math.PI);
        ctx.fillStyle = op.fill;
        ctx.fill();
        break;
      case "text":
        ctx.fillStyle = op.fill;
        ctx.font = `${op.size}px sans-serif`;
        ctx.textAlign = "center";
        ctx.textBaseline = "middle";
        ctx.fillText(op.text, op.x, op.y);
        break;
      case "arrow": {
        ctx.beginPath();
        ctx.moveTo(op.x + 10 * Math.cos(op.angle), op.y - 10 * Math.sin(op.angle));
        ctx.lineTo(
          op.x + 6 * Math.cos(op.angle + (2.5 * Math.PI) / 3),
          op.y - 6 * Math.sin(op.angle + (2.5 * Math.PI) / 3),
        );
        ctx.lineTo(
          op.x + 6 * Math.cos(op.angle - (2.5 * Math.PI) / 3),
          op.y - 6 * Math.sin(op.angle - (2.5 * Math.PI) / 3),
        );
        ctx.closePath();
        ctx.fillStyle = op.fill;
        ctx.fill();
        break;
      }
      case "line":
        ctx.beginPath();
        ctx.moveTo(op.x1, op.y1);
        ctx.lineTo(op.x2, op.y2);
        ctx.strokeStyle = op.stroke;
        ctx.lineWidth = op.width;
        ctx.stroke();
        break;
    }
  }
}
