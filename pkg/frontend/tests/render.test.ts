import { readFileSync } from "node:fs";
import { describe, expect, it } from "vitest";

import {
  facingAngle,
  hexCenter,
  reviewToOps,
  viewToOps,
} from "../src/render.js";
import { parseCompleteResponse, parseView } from "../src/protocol.js";

function fixture(name: string): unknown {
  return JSON.parse(
    readFileSync(new URL(`./fixtures/${name}.json`, import.meta.url), "utf-8"),
  );
}

describe("hexCenter", () => {
  it("offsets odd rows by half a hex", () => {
    const [x0] = hexCenter(0, 0);
    const [x1, y1] = hexCenter(1, 0);
    expect(x0).toBe(0);
    expect(x1).toBeGreaterThan(x0);
    expect(y1).toBeGreaterThan(0);
  });

  it("gives adjacent columns equal spacing", () => {
    const [xa] = hexCenter(2, 3);
    const [xb] = hexCenter(2, 4);
    const [xc] = hexCenter(2, 5);
    // centers are rounded to two decimals, so spacing can differ by 0.01
    expect(xb - xa).toBeCloseTo(xc - xb, 1);
  });
});

describe("facingAngle", () => {
  it("advances by sixty degrees per orientation step", () => {
    for (let alpha = 0; alpha < 6; alpha += 1) {
      const delta = facingAngle(alpha) - facingAngle(alpha + 1);
      expect(delta).toBeCloseTo(Math.PI / 3, 9);
    }
  });
});

describe("viewToOps", () => {
  for (const name of ["view0", "view1", "view2"]) {
    it(`matches the golden draw list for ${name}`, () => {
      const ops = viewToOps(parseView(fixture(name)));
      expect(ops).toMatchSnapshot();
    });
  }

  it("draws the follower marker last", () => {
    const ops = viewToOps(parseView(fixture("view0")));
    const last = ops[ops.length - 1]!;
    expect(last.op).toBe("arrow");
  });

  it("emits one hex per visible cell plus the follower cell", () => {
    const view = parseView(fixture("view0"));
    const hexes = viewToOps(view).filter((op) => op.op === "hex");
    expect(hexes).toHaveLength(view.cells.length + 1);
  });
});

describe("reviewToOps", () => {
  it("matches the golden draw list for review0", () => {
    const review = parseCompleteResponse({
      status: "awaiting_feedback",
      review: fixture("review0"),
    }).review;
    expect(reviewToOps(review)).toMatchSnapshot();
  });

  it("draws path segments only for actual cell changes", () => {
    const review = parseCompleteResponse({
      status: "awaiting_feedback",
      review: fixture("review0"),
    }).review;
    const lines = reviewToOps(review).filter((op) => op.op === "line");
    let changes = 0;
    for (let i = 1; i < review.path.length; i += 1) {
      const prev = review.path[i - 1]!;
      const cur = review.path[i]!;
      if (prev[0] !== cur[0] || prev[1] !== cur[1]) changes += 1;
    }
    expect(lines).toHaveLength(changes);
  });
});
