// DOM wiring: websocket session, webcam/file frames, canvas overlay loop,
// controls, ticker, and audio cues. All task state comes from the server
// via the pure reducer in view.ts.

import { Envelope, SeqCounter, decode, encode, makeEnvelope } from "./protocol.js";
import { ConsoleView, applyMessage, initialView } from "./view.js";
import { DirectiveBatch, renderBatch } from "./overlay.js";

const DEFAULT_WS = `ws://${location.hostname}:8731`;
const DEFAULT_BLOBS = `http://${location.hostname}:8732`;
const COFFEE_PROMPT = "How to make a latte with the coffee machine?";

interface Session {
  ws: WebSocket | null;
  seq: SeqCounter;
  sessionId: string;
  view: ConsoleView;
  messages: Envelope[];
  masks: Map<string, Array<Array<[number, number]>> | null>;
}

const session: Session = {
  ws: null,
  seq: new SeqCounter(),
  sessionId: "",
  view: initialView(),
  messages: [],
  masks: new Map(),
};

const $ = (id: string) => document.getElementById(id)!;
const canvas = () => $("overlay") as HTMLCanvasElement;
const video = () => $("webcam") as HTMLVideoElement;
const frameImage = new Image();

function send(type: string, payload: Record<string, unknown> = {}): void {
  if (!session.ws || session.ws.readyState !== WebSocket.OPEN) {
    note("not connected");
    return;
  }
  session.ws.send(encode(makeEnvelope(type, session.sessionId, session.seq, payload)));
}

function note(text: string): void {
  const ticker = $("ticker");
  const line = document.createElement("div");
  line.textContent = text;
  ticker.prepend(line);
}

function beep(correct: boolean): void {
  try {
    const ctx = new AudioContext();
    const osc = ctx.createOscillator();
    const gain = ctx.createGain();
    osc.frequency.value = correct ? 880 : 220;
    gain.gain.value = 0.08;
    osc.connect(gain).connect(ctx.destination);
    osc.start();
    osc.stop(ctx.currentTime + 0.18);
    osc.onended = () => ctx.close();
  } catch {
    // audio is best-effort; the toast still shows
  }
}

function toast(text: string, correct: boolean): void {
  const el = $("toast");
  el.textContent = text;
  el.className = correct ? "toast ok" : "toast err";
  el.style.opacity = "1";
  setTimeout(() => (el.style.opacity = "0"), 1500);
}

async function fetchMask(digest: string): Promise<void> {
  if (session.masks.has(digest)) return;
  session.masks.set(digest, null);
  try {
    const resp = await fetch(`${blobsUrl()}/blobs/${digest}`);
    if (!resp.ok) return;
    const doc = await resp.json();
    if (doc && Array.isArray(doc.polygons)) {
      session.masks.set(digest, doc.polygons);
    }
  } catch {
    console.warn(`mask ${digest.slice(0, 12)} not fetchable`);
  }
}

function onMessage(raw: string): void {
  let envelope: Envelope;
  try {
    envelope = decode(raw);
  } catch (err) {
    console.warn("undecodable message", err);
    return;
  }
  session.messages.push(envelope);
  const before = session.view;
  session.view = applyMessage(session.view, envelope);
  if (envelope.type === "SessionAccepted") {
    session.sessionId = session.view.sessionId;
  }
  if (envelope.type === "AudioCue") {
    const cue = String((envelope.payload as any).cue);
    beep(cue === "Correct");
    toast(cue === "Correct" ? "✓ step verified" : "✗ not there yet", cue === "Correct");
  }
  if (envelope.type === "DirectiveBatch") {
    const batch = envelope.payload as unknown as DirectiveBatch;
    for (const d of batch.directives) {
      if (d.asset && (d.kind === "ShapePreview" || d.kind === "AnimatedShapePreview")) {
        void fetchMask(d.asset.digest);
      }
    }
  }
  if (before !== session.view) renderView();
}

function wsUrl(): string {
  return (($("ws-url") as HTMLInputElement).value || DEFAULT_WS).trim();
}

function blobsUrl(): string {
  return (($("blobs-url") as HTMLInputElement).value || DEFAULT_BLOBS).trim();
}

function connect(attach: boolean): void {
  const ws = new WebSocket(wsUrl());
  ws.onopen = () => {
    note(`connected to ${wsUrl()}`);
    session.ws = ws;
    session.view = { ...session.view, connection: "connected" };
    if (attach && session.sessionId) {
      // rebuild the view purely from the server's replayed messages
      session.view = initialView();
      session.messages = [];
      send("Attach");
    }
    renderView();
  };
  ws.onmessage = (event) => onMessage(String(event.data));
  ws.onclose = () => {
    session.ws = null;
    session.view = { ...session.view, connection: "closed" };
    note("connection closed");
    renderView();
  };
  ws.onerror = () => note("websocket error");
}

function startTask(): void {
  const prompt = (($("prompt") as HTMLInputElement).value || COFFEE_PROMPT).trim();
  send("StartTask", { prompt });
}

function currentFrameB64(): { b64: string; width: number; height: number } | null {
  const v = video();
  const staging = document.createElement("canvas");
  let w = 640;
  let h = 480;
  const ctx = staging.getContext("2d")!;
  if (v.videoWidth > 0) {
    w = v.videoWidth;
    h = v.videoHeight;
    staging.width = w;
    staging.height = h;
    ctx.drawImage(v, 0, 0, w, h);
  } else if (frameImage.naturalWidth > 0) {
    w = frameImage.naturalWidth;
    h = frameImage.naturalHeight;
    staging.width = w;
    staging.height = h;
    ctx.drawImage(frameImage, 0, 0, w, h);
  } else {
    note("no frame source: enable the webcam or load an image");
    return null;
  }
  const dataUrl = staging.toDataURL("image/png");
  return { b64: dataUrl.slice(dataUrl.indexOf(",") + 1), width: w, height: h };
}

function sendFrame(): void {
  const frame = currentFrameB64();
  if (!frame) return;
  send("FrameUpdate", { imageB64: frame.b64, width: frame.width, height: frame.height });
  note(`frame sent (${frame.width}x${frame.height})`);
}

function renderView(): void {
  const view = session.view;
  $("status").textContent =
    `${view.connection} | session ${view.sessionId || "-"} | ` +
    (view.finalStatus ? `final: ${view.finalStatus}` : view.planComplete ? "plan complete" : "running");
  $("goal").textContent = view.goal || "(no plan yet)";
  const list = $("steps");
  list.innerHTML = "";
  for (const step of view.steps) {
    const li = document.createElement("li");
    li.className = `step ${step.badge.toLowerCase()}${step.isSubstep ? " substep" : ""}`;
    const badge = document.createElement("span");
    badge.className = "badge";
    badge.textContent = step.badge;
    const label = document.createElement("span");
    label.textContent = ` ${step.index}: ${step.instruction} `;
    const skip = document.createElement("button");
    skip.textContent = "skip";
    skip.onclick = () => send("SkipStep", { index: step.index, reason: "operator skip" });
    li.append(badge, label);
    if (step.badge === "Pending" || step.badge === "Active") li.append(skip);
    list.append(li);
  }
  if (view.lastAnswer) $("answer").textContent = view.lastAnswer;
  const controlsReady = view.steps.length > 0;
  (["verify", "send-frame", "ask", "end"] as const).forEach((id) => {
    ($(id) as HTMLButtonElement).disabled = !controlsReady;
  });
  const ticker = $("ticker");
  ticker.innerHTML = "";
  for (const entry of [...view.ticker].reverse().slice(0, 60)) {
    const line = document.createElement("div");
    line.textContent = `#${entry.seq} ${entry.text}`;
    ticker.append(line);
  }
}

function animationLoop(): void {
  const c = canvas();
  const ctx = c.getContext("2d")!;
  ctx.clearRect(0, 0, c.width, c.height);
  const v = video();
  if (v.videoWidth > 0) {
    ctx.drawImage(v, 0, 0, c.width, c.height);
  } else if (frameImage.naturalWidth > 0) {
    ctx.drawImage(frameImage, 0, 0, c.width, c.height);
  }
  const batch = session.view.batch;
  if (batch) {
    renderBatch(
      ctx as unknown as import("./overlay.js").DrawCtx,
      batch,
      c.width,
      c.height,
      performance.now(),
      (digest) => session.masks.get(digest) ?? null,
      (msg) => console.warn(msg),
    );
    const panel = batch.directives.find((d) => d.kind === "StatePanel");
    if (panel) {
      const p = panel.payload as any;
      $("panel-goal").textContent = String(p.goal ?? "");
      $("panel-current").textContent = `now: ${p.current ?? ""} [${p.status ?? ""}]`;
      $("panel-next").textContent = p.next ? `next: ${p.next}` : "next: (last step)";
    }
  }
  requestAnimationFrame(animationLoop);
}

async function enableWebcam(): Promise<void> {
  try {
    const stream = await navigator.mediaDevices.getUserMedia({ video: true });
    video().srcObject = stream;
    await video().play();
    note("webcam enabled");
  } catch (err) {
    note(`webcam unavailable: ${err}`);
  }
}

function wire(): void {
  $("connect").onclick = () => connect(false);
  $("reconnect").onclick = () => connect(true);
  $("start").onclick = () => startTask();
  $("send-frame").onclick = () => sendFrame();
  $("verify").onclick = () => send("VerifyRequest");
  $("ask").onclick = () => {
    const text = ($("question") as HTMLInputElement).value.trim();
    if (text) send("VoiceQuery", { text });
  };
  $("end").onclick = () => send("EndSession");
  $("webcam-on").onclick = () => void enableWebcam();
  ($("file") as HTMLInputElement).onchange = (event) => {
    const file = (event.target as HTMLInputElement).files?.[0];
    if (file) {
      frameImage.src = URL.createObjectURL(file);
      note(`loaded frame image ${file.name}`);
    }
  };
  ($("prompt") as HTMLInputElement).value = COFFEE_PROMPT;
  renderView();
  requestAnimationFrame(animationLoop);
}

if (typeof document !== "undefined") {
  document.addEventListener("DOMContentLoaded", wire);
}
