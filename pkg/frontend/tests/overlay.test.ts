import { describe, expect, it } from "vitest";
import {
  DirectiveBatch,
  DrawCtx,
  NormBox,
  animationPhase,
  boxCenter,
  lerpBox,
  renderBatch,
  renderDirective,
  scaleBox,
  scalePoint,
} from "../src/overlay.js";

function mulberry32(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a = (a + 0x6d2b79f5) >>> 0;
    let t = a;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

class FakeCtx implements DrawCtx {
  strokeStyle = "";
  fillStyle = "";
  lineWidth = 0;
  font = "";
  globalAlpha = 1;
  calls: Array<[string, ...unknown[]]> = [];
  beginPath() { this.calls.push(["beginPath"]); }
  moveTo(x: number, y: number) { this.calls.push(["moveTo", x, y]); }
  lineTo(x: number, y: number) { this.calls.push(["lineTo", x, y]); }
  arc(x: number, y: number, r: number, a0: number, a1: number) { this.calls.push(["arc", x, y, r, a0, a1]); }
  closePath() { this.calls.push(["closePath"]); }
  stroke() { this.calls.push(["stroke"]); }
  fill() { this.calls.push(["fill"]); }
  strokeRect(x: number, y: number, w: number, h: number) { this.calls.push(["strokeRect", x, y, w, h]); }
  fillRect(x: number, y: number, w: number, h: number) { this.calls.push(["fillRect", x, y, w, h]); }
  fillText(text: string, x: number, y: number) { this.calls.push(["fillText", text, x, y]); }
}

function anchor(box: NormBox | null) {
  return { position: [0, 0, 1] as [number, number, number], sourceBox: box, confidence: "DepthHit" };
}

describe("coordinate scaling", () => {
  it("scales the documented example box exactly", () => {
    // [400,400,600,600] over a 1000x800 display lands at (400,320)-(600,480)
    const rect = scaleBox([400, 400, 600, 600], 1000, 800);
    expect(rect).toEqual({ x: 400, y: 320, w: 200, h: 160 });
  });

  it("matches exact integer rounding for 500 random box/display pairs", () => {
    const rand = mulberry32(20260808);
    for (let i = 0; i < 500; i++) {
      const x0 = Math.floor(rand() * 1000);
      const y0 = Math.floor(rand() * 1000);
      const x1 = x0 + Math.floor(rand() * (1000 - x0));
      const y1 = y0 + Math.floor(rand() * (1000 - y0));
      const w = 16 + Math.floor(rand() * 3000);
      const h = 16 + Math.floor(rand() * 2000);
      const rect = scaleBox([x0, y0, x1, y1], w, h);
      // oracle: independent rounding of each scaled coordinate
      expect(rect.x).toBe(Math.round((x0 / 1000) * w));
      expect(rect.y).toBe(Math.round((y0 / 1000) * h));
      expect(rect.x + rect.w).toBe(Math.round((x1 / 1000) * w));
      expect(rect.y + rect.h).toBe(Math.round((y1 / 1000) * h));
      expect(Number.isInteger(rect.x && rect.y && rect.w && rect.h)).toBe(true);
      // scaled corners stay inside the display
      expect(rect.x).toBeGreaterThanOrEqual(0);
      expect(rect.y).toBeGreaterThanOrEqual(0);
      expect(rect.x + rect.w).toBeLessThanOrEqual(w);
      expect(rect.y + rect.h).toBeLessThanOrEqual(h);
    }
  });

  it("centers and points scale consistently", () => {
    expect(boxCenter([400, 400, 600, 600])).toEqual([500, 500]);
    expect(scalePoint(500, 500, 640, 480)).toEqual([320, 240]);
  });
});

describe("animation timing", () => {
  it("loops with a 2 second period", () => {
    expect(animationPhase(0)).toBe(0);
    expect(animationPhase(1000)).toBeCloseTo(0.5);
    expect(animationPhase(2000)).toBe(0);
    expect(animationPhase(2500)).toBeCloseTo(0.25);
  });

  it("lerps boxes linearly", () => {
    expect(lerpBox([0, 0, 100, 100], [200, 0, 300, 100], 0.5)).toEqual([100, 0, 200, 100]);
  });
});

describe("directive rendering", () => {
  it("outline draws the scaled rectangle", () => {
    const ctx = new FakeCtx();
    renderDirective(
      ctx,
      { kind: "Outline", anchors: [anchor([400, 400, 600, 600])], rotation: null, asset: null, payload: {} },
      1000,
      800,
      0,
      () => null,
    );
    expect(ctx.calls).toContainEqual(["strokeRect", 400, 320, 200, 160]);
  });

  it("translation arrow connects box centers", () => {
    const ctx = new FakeCtx();
    renderDirective(
      ctx,
      {
        kind: "ArrowTranslation",
        anchors: [anchor([0, 0, 200, 200]), anchor([800, 800, 1000, 1000])],
        rotation: null,
        asset: null,
        payload: {},
      },
      1000,
      1000,
      0,
      () => null,
    );
    expect(ctx.calls).toContainEqual(["moveTo", 100, 100]);
    expect(ctx.calls).toContainEqual(["lineTo", 900, 900]);
  });

  it("animated preview without mask draws the interpolated box", () => {
    const ctx = new FakeCtx();
    renderDirective(
      ctx,
      {
        kind: "AnimatedShapePreview",
        anchors: [anchor([0, 0, 100, 100]), anchor([200, 0, 300, 100])],
        rotation: null,
        asset: { digest: "d", kind: "Mask" },
        payload: { loopSeconds: 2.0 },
      },
      1000,
      1000,
      1000, // half way through the loop
      () => null,
    );
    expect(ctx.calls).toContainEqual(["strokeRect", 100, 0, 100, 100]);
  });

  it("preview with a fetched mask draws its polygons", () => {
    const ctx = new FakeCtx();
    renderDirective(
      ctx,
      {
        kind: "ShapePreview",
        anchors: [anchor([0, 0, 100, 100])],
        rotation: null,
        asset: { digest: "d", kind: "Mask" },
        payload: {},
      },
      1000,
      1000,
      0,
      () => [
        [
          [0, 0],
          [100, 0],
          [100, 100],
        ],
      ],
    );
    expect(ctx.calls).toContainEqual(["moveTo", 0, 0]);
    expect(ctx.calls).toContainEqual(["lineTo", 100, 0]);
  });

  it("unknown kinds are ignored with a warning", () => {
    const ctx = new FakeCtx();
    const warnings: string[] = [];
    renderDirective(
      ctx,
      { kind: "HologramDance", anchors: [], rotation: null, asset: null, payload: {} },
      640,
      480,
      0,
      () => null,
      (m) => warnings.push(m),
    );
    expect(ctx.calls).toEqual([]);
    expect(warnings.length).toBe(1);
  });

  it("renderBatch draws every canvas directive and skips panel/audio", () => {
    const ctx = new FakeCtx();
    const batch: DirectiveBatch = {
      version: 1,
      stepIndex: 0,
      directives: [
        { kind: "StatePanel", anchors: [], rotation: null, asset: null, payload: { goal: "g" } },
        { kind: "Outline", anchors: [anchor([0, 0, 500, 500])], rotation: null, asset: null, payload: {} },
      ],
    };
    renderBatch(ctx, batch, 100, 100, 0, () => null);
    expect(ctx.calls).toEqual([["strokeRect", 0, 0, 50, 50]]);
  });
});
