import { describe, expect, it } from "vitest";
import { Envelope } from "../src/protocol.js";
import { applyMessage, initialView, replayView } from "../src/view.js";

function msg(type: string, seq: number, payload: Record<string, unknown>): Envelope {
  return { type, sessionId: "s0001", seq, payload };
}

const SESSION: Envelope[] = [
  msg("SessionAccepted", 1, { sessionId: "s0001" }),
  msg("PlanReady", 2, {
    goal: "Make a latte with the coffee machine",
    steps: ["Fill the milk container", "Place the glass", "Press the button"],
    statuses: ["Active", "Pending", "Pending"],
    stepTypes: ["R2R", "R2R", "R2R"],
    activeIndex: 0,
  }),
  msg("DirectiveBatch", 3, {
    version: 1,
    stepIndex: 0,
    directives: [
      { kind: "StatePanel", anchors: [], rotation: null, asset: null, payload: { goal: "g" } },
      { kind: "Outline", anchors: [], rotation: null, asset: null, payload: {} },
    ],
  }),
  msg("VerificationResult", 4, { stepIndex: 0, success: true, check: "", planComplete: false }),
  msg("AudioCue", 5, { cue: "Correct" }),
  msg("DirectiveBatch", 6, {
    version: 1,
    stepIndex: 1,
    directives: [
      { kind: "StatePanel", anchors: [], rotation: null, asset: null, payload: {} },
      { kind: "Outline", anchors: [], rotation: null, asset: null, payload: {} },
    ],
  }),
];

describe("view reducer", () => {
  it("builds the outline from PlanReady and tracks badges from results", () => {
    const view = replayView(SESSION);
    expect(view.goal).toBe("Make a latte with the coffee machine");
    expect(view.steps.map((s) => s.badge)).toEqual(["Completed", "Active", "Pending"]);
    expect(view.activeIndex).toBe(1);
    expect(view.lastCue).toBe("Correct");
    expect(view.batch?.stepIndex).toBe(1);
  });

  it("is pure: the input view is never mutated", () => {
    const before = initialView();
    const frozen = JSON.stringify(before);
    applyMessage(before, SESSION[0]!);
    expect(JSON.stringify(before)).toBe(frozen);
  });

  it("replay reproduces the identical view (reconnect purity)", () => {
    const once = replayView(SESSION);
    const again = replayView(SESSION);
    expect(again).toEqual(once);
    // partial view then re-fold from scratch also converges
    let partial = initialView();
    for (const m of SESSION.slice(0, 3)) partial = applyMessage(partial, m);
    const resumed = replayView(SESSION);
    expect(resumed).toEqual(once);
    expect(partial).not.toEqual(once);
  });

  it("inserts substeps after their parent", () => {
    const messages = [
      ...SESSION.slice(0, 3),
      msg("SubPlanInserted", 7, {
        parent: 0,
        substeps: [
          { index: 3, instruction: "Sub A" },
          { index: 4, instruction: "Sub B" },
        ],
      }),
    ];
    const view = replayView(messages);
    expect(view.steps.map((s) => s.instruction)).toEqual([
      "Fill the milk container",
      "Sub A",
      "Sub B",
      "Place the glass",
      "Press the button",
    ]);
    expect(view.steps[1]!.isSubstep).toBe(true);
  });

  it("directive batch for a later step marks earlier steps completed", () => {
    const messages = [
      ...SESSION.slice(0, 3),
      msg("DirectiveBatch", 7, {
        version: 1,
        stepIndex: 2,
        directives: [{ kind: "StatePanel", anchors: [], rotation: null, asset: null, payload: {} }],
      }),
    ];
    const view = replayView(messages);
    expect(view.steps.map((s) => s.badge)).toEqual(["Completed", "Completed", "Active"]);
  });

  it("session end and plan completion reach the final state", () => {
    const messages = [
      ...SESSION,
      msg("VerificationResult", 8, { stepIndex: 1, success: true, planComplete: false }),
      msg("VerificationResult", 9, { stepIndex: 2, success: true, planComplete: true }),
      msg("SessionEnded", 10, { finalStatus: "Done" }),
    ];
    const view = replayView(messages);
    expect(view.planComplete).toBe(true);
    expect(view.finalStatus).toBe("Done");
  });

  it("errors land in the ticker and the error counter", () => {
    const view = replayView([
      ...SESSION.slice(0, 2),
      msg("Error", 9, { code: "NoFrame", detail: "verify needs a frame first" }),
    ]);
    expect(view.errors).toBe(1);
    expect(view.ticker.at(-1)!.text).toContain("NoFrame");
  });

  it("unknown message types are tolerated", () => {
    const view = replayView([...SESSION, msg("FutureThing", 11, {})]);
    expect(view.ticker.at(-1)!.text).toContain("FutureThing");
  });
});
