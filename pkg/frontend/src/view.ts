// Pure view reducer: the console's entire state is a fold over the server
// message stream. No task logic lives client side, so replaying the same
// messages (e.g. after a reconnect Attach) reproduces the identical view.

import type { Envelope } from "./protocol.js";
import type { DirectiveBatch } from "./overlay.js";

export type StepBadge = "Pending" | "Active" | "Completed" | "Failed";

export interface StepView {
  index: number;
  instruction: string;
  badge: StepBadge;
  isSubstep: boolean;
}

export interface TickerEntry {
  seq: number;
  text: string;
}

export interface ConsoleView {
  connection: "idle" | "connected" | "closed";
  sessionId: string;
  goal: string;
  steps: StepView[];
  activeIndex: number | null;
  batch: DirectiveBatch | null;
  lastCue: string | null;
  lastAnswer: string | null;
  finalStatus: string | null;
  planComplete: boolean;
  ticker: TickerEntry[];
  errors: number;
}

export function initialView(): ConsoleView {
  return {
    connection: "idle",
    sessionId: "",
    goal: "",
    steps: [],
    activeIndex: null,
    batch: null,
    lastCue: null,
    lastAnswer: null,
    finalStatus: null,
    planComplete: false,
    ticker: [],
    errors: 0,
  };
}

function cloneView(view: ConsoleView): ConsoleView {
  return JSON.parse(JSON.stringify(view)) as ConsoleView;
}

function tick(view: ConsoleView, seq: number, text: string): void {
  view.ticker.push({ seq, text });
  if (view.ticker.length > 200) view.ticker.shift();
}

function positionOf(view: ConsoleView, index: number): number {
  return view.steps.findIndex((s) => s.index === index);
}

function focusStep(view: ConsoleView, index: number): void {
  const pos = positionOf(view, index);
  if (pos < 0) return;
  view.steps.forEach((step, i) => {
    if (i < pos && (step.badge === "Active" || step.badge === "Pending")) {
      step.badge = "Completed";
    }
  });
  const step = view.steps[pos];
  if (step && step.badge !== "Completed") step.badge = "Active";
  view.activeIndex = index;
}

export function applyMessage(view: ConsoleView, message: Envelope): ConsoleView {
  const next = cloneView(view);
  const p = message.payload as Record<string, any>;
  switch (message.type) {
    case "SessionAccepted": {
      next.sessionId = String(p["sessionId"] ?? "");
      next.connection = "connected";
      tick(next, message.seq, `session ${next.sessionId} accepted`);
      break;
    }
    case "PlanReady": {
      next.goal = String(p["goal"] ?? "");
      const instructions: string[] = p["steps"] ?? [];
      const statuses: string[] = p["statuses"] ?? [];
      next.steps = instructions.map((instruction, i) => ({
        index: i,
        instruction,
        badge:
          statuses[i] === "Completed"
            ? "Completed"
            : statuses[i] === "Active"
              ? "Active"
              : "Pending",
        isSubstep: false,
      }));
      next.activeIndex = typeof p["activeIndex"] === "number" ? p["activeIndex"] : null;
      tick(next, message.seq, `plan ready: ${next.goal} (${next.steps.length} steps)`);
      break;
    }
    case "DirectiveBatch": {
      next.batch = p as unknown as DirectiveBatch;
      focusStep(next, Number(p["stepIndex"]));
      tick(
        next,
        message.seq,
        `directives for step ${p["stepIndex"]}: ${(p["directives"] ?? [])
          .map((d: any) => d.kind)
          .join(", ")}`,
      );
      break;
    }
    case "VerificationResult": {
      const index = Number(p["stepIndex"]);
      const pos = positionOf(next, index);
      if (pos >= 0) {
        const step = next.steps[pos]!;
        step.badge = p["success"] ? "Completed" : "Active";
      }
      if (p["planComplete"]) next.planComplete = true;
      tick(next, message.seq, `verify step ${index}: ${p["success"] ? "success" : "not yet"}`);
      break;
    }
    case "AudioCue": {
      next.lastCue = String(p["cue"]);
      tick(next, message.seq, `cue: ${next.lastCue}`);
      break;
    }
    case "SubPlanInserted": {
      const parent = Number(p["parent"]);
      const pos = positionOf(next, parent);
      const substeps: Array<{ index: number; instruction: string }> = p["substeps"] ?? [];
      const views: StepView[] = substeps.map((s) => ({
        index: s.index,
        instruction: s.instruction,
        badge: "Pending",
        isSubstep: true,
      }));
      if (pos >= 0) next.steps.splice(pos + 1, 0, ...views);
      tick(next, message.seq, `sub-plan of ${substeps.length} inserted after step ${parent}`);
      break;
    }
    case "Answer": {
      next.lastAnswer = String(p["answer"] ?? "");
      tick(next, message.seq, `answer: ${next.lastAnswer}`);
      break;
    }
    case "SessionEnded": {
      next.finalStatus = String(p["finalStatus"]);
      if (next.finalStatus === "Done") next.planComplete = true;
      tick(next, message.seq, `session ended: ${next.finalStatus}`);
      break;
    }
    case "Error": {
      next.errors += 1;
      tick(next, message.seq, `error ${p["code"]}: ${p["detail"]}`);
      break;
    }
    default: {
      tick(next, message.seq, `(ignored ${message.type})`);
    }
  }
  return next;
}

export function replayView(messages: Envelope[]): ConsoleView {
  let view = initialView();
  for (const message of messages) view = applyMessage(view, message);
  return view;
}
