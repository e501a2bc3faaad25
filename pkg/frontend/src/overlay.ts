// 2D overlay math and drawing. All directive coordinates arrive as
// integers normalized to [0, 1000] over the source image; the console
// scales them to the displayed canvas with exact integer rounding so the
// mapping is reproducible pixel for pixel.

export type NormBox = [number, number, number, number]; // x_min, y_min, x_max, y_max

export interface PixelRect {
  x: number;
  y: number;
  w: number;
  h: number;
}

export function scalePoint(
  u: number,
  v: number,
  displayW: number,
  displayH: number,
): [number, number] {
  return [Math.round((u / 1000) * displayW), Math.round((v / 1000) * displayH)];
}

export function scaleBox(box: NormBox, displayW: number, displayH: number): PixelRect {
  const [x0, y0] = scalePoint(box[0], box[1], displayW, displayH);
  const [x1, y1] = scalePoint(box[2], box[3], displayW, displayH);
  return { x: x0, y: y0, w: x1 - x0, h: y1 - y0 };
}

export function boxCenter(box: NormBox): [number, number] {
  return [(box[0] + box[2]) / 2, (box[1] + box[3]) / 2];
}

// Linear interpolation between two boxes, used by the animated preview:
// t in [0, 1] maps start -> end.
export function lerpBox(a: NormBox, b: NormBox, t: number): NormBox {
  const mix = (x: number, y: number) => x + (y - x) * t;
  return [mix(a[0], b[0]), mix(a[1], b[1]), mix(a[2], b[2]), mix(a[3], b[3])];
}

export const ANIMATION_LOOP_SECONDS = 2.0;

export function animationPhase(nowMs: number, loopSeconds = ANIMATION_LOOP_SECONDS): number {
  const period = loopSeconds * 1000;
  return (nowMs % period) / period;
}

// The subset of CanvasRenderingContext2D the renderer touches; tests pass a
// recording fake instead of a real canvas.
export interface DrawCtx {
  strokeStyle: string;
  fillStyle: string;
  lineWidth: number;
  font: string;
  globalAlpha: number;
  beginPath(): void;
  moveTo(x: number, y: number): void;
  lineTo(x: number, y: number): void;
  arc(x: number, y: number, r: number, a0: number, a1: number): void;
  closePath(): void;
  stroke(): void;
  fill(): void;
  strokeRect(x: number, y: number, w: number, h: number): void;
  fillRect(x: number, y: number, w: number, h: number): void;
  fillText(text: string, x: number, y: number): void;
}

export interface Anchor {
  position: [number, number, number];
  sourceBox: NormBox | null;
  confidence: string;
}

export interface Directive {
  kind: string;
  anchors: Anchor[];
  rotation: { pivot: Anchor; axis: number[]; direction: string } | null;
  asset: { digest: string; kind: string } | null;
  payload: Record<string, unknown>;
}

export interface DirectiveBatch {
  version: number;
  stepIndex: number;
  directives: Directive[];
}

export type MaskLookup = (digest: string) => Array<Array<[number, number]>> | null;

const OUTLINE_COLOR = "#2ecc40";
const ARROW_COLOR = "#ffdc00";
const PREVIEW_COLOR = "rgba(46, 204, 64, 0.45)";

function drawArrow(ctx: DrawCtx, x0: number, y0: number, x1: number, y1: number): void {
  ctx.strokeStyle = ARROW_COLOR;
  ctx.fillStyle = ARROW_COLOR;
  ctx.lineWidth = 3;
  ctx.beginPath();
  ctx.moveTo(x0, y0);
  ctx.lineTo(x1, y1);
  ctx.stroke();
  const angle = Math.atan2(y1 - y0, x1 - x0);
  const head = 10;
  ctx.beginPath();
  ctx.moveTo(x1, y1);
  ctx.lineTo(x1 - head * Math.cos(angle - 0.5), y1 - head * Math.sin(angle - 0.5));
  ctx.lineTo(x1 - head * Math.cos(angle + 0.5), y1 - head * Math.sin(angle + 0.5));
  ctx.closePath();
  ctx.fill();
}

function drawPolygon(
  ctx: DrawCtx,
  polygon: Array<[number, number]>,
  displayW: number,
  displayH: number,
  offset: [number, number] = [0, 0],
): void {
  ctx.beginPath();
  polygon.forEach(([u, v], i) => {
    const [x, y] = scalePoint(u + offset[0], v + offset[1], displayW, displayH);
    if (i === 0) ctx.moveTo(x, y);
    else ctx.lineTo(x, y);
  });
  ctx.closePath();
  ctx.fillStyle = PREVIEW_COLOR;
  ctx.fill();
  ctx.strokeStyle = OUTLINE_COLOR;
  ctx.lineWidth = 2;
  ctx.stroke();
}

function anchorBox(directive: Directive, index = 0): NormBox | null {
  const anchor = directive.anchors[index];
  if (anchor && anchor.sourceBox) return anchor.sourceBox;
  if (directive.rotation && directive.rotation.pivot.sourceBox) {
    return directive.rotation.pivot.sourceBox;
  }
  return null;
}

function drawLabeledPoint(ctx: DrawCtx, x: number, y: number, label: string): void {
  ctx.beginPath();
  ctx.arc(x, y, 14, 0, Math.PI * 2);
  ctx.fillStyle = "rgba(255, 220, 0, 0.7)";
  ctx.fill();
  ctx.fillStyle = "#111";
  ctx.font = "12px sans-serif";
  ctx.fillText(label, x + 18, y + 4);
}

export function renderDirective(
  ctx: DrawCtx,
  directive: Directive,
  displayW: number,
  displayH: number,
  nowMs: number,
  masks: MaskLookup,
  warn: (message: string) => void = () => {},
): void {
  const kind = directive.kind;
  if (kind === "Outline") {
    const box = anchorBox(directive);
    if (!box) return;
    const rect = scaleBox(box, displayW, displayH);
    ctx.strokeStyle = OUTLINE_COLOR;
    ctx.lineWidth = 3;
    ctx.strokeRect(rect.x, rect.y, rect.w, rect.h);
    return;
  }
  if (kind === "ShapePreview" || kind === "AnimatedShapePreview") {
    const base = anchorBox(directive, 0);
    if (!base) return;
    let offset: [number, number] = [0, 0];
    if (kind === "AnimatedShapePreview") {
      const end = anchorBox(directive, 1);
      if (end) {
        const t = animationPhase(nowMs);
        const moved = lerpBox(base, end, t);
        offset = [moved[0] - base[0], moved[1] - base[1]];
      }
    }
    const polygons = directive.asset ? masks(directive.asset.digest) : null;
    if (polygons) {
      for (const polygon of polygons) drawPolygon(ctx, polygon, displayW, displayH, offset);
    } else {
      // mask bytes not fetched (yet): show the box shifted by the animation
      const rect = scaleBox(
        [base[0] + offset[0], base[1] + offset[1], base[2] + offset[0], base[3] + offset[1]],
        displayW,
        displayH,
      );
      ctx.strokeStyle = OUTLINE_COLOR;
      ctx.lineWidth = 2;
      ctx.strokeRect(rect.x, rect.y, rect.w, rect.h);
    }
    return;
  }
  if (kind === "ArrowTranslation") {
    const start = anchorBox(directive, 0);
    const end = anchorBox(directive, 1);
    if (!start || !end) return;
    const [cx0, cy0] = boxCenter(start);
    const [cx1, cy1] = boxCenter(end);
    const [x0, y0] = scalePoint(cx0, cy0, displayW, displayH);
    const [x1, y1] = scalePoint(cx1, cy1, displayW, displayH);
    drawArrow(ctx, x0, y0, x1, y1);
    return;
  }
  if (kind === "ArrowRotation") {
    const box = anchorBox(directive);
    if (!box) return;
    const [cu, cv] = boxCenter(box);
    const [x, y] = scalePoint(cu, cv, displayW, displayH);
    const clockwise = directive.rotation?.direction === "Positive";
    ctx.strokeStyle = ARROW_COLOR;
    ctx.lineWidth = 3;
    ctx.beginPath();
    ctx.arc(x, y, 24, 0.3, Math.PI * 1.6);
    ctx.stroke();
    const tipAngle = clockwise ? Math.PI * 1.6 : 0.3;
    const tx = x + 24 * Math.cos(tipAngle);
    const ty = y + 24 * Math.sin(tipAngle);
    drawArrow(ctx, x + 18 * Math.cos(tipAngle - 0.3), y + 18 * Math.sin(tipAngle - 0.3), tx, ty);
    return;
  }
  if (kind === "GestureOverlay" || kind === "ToolOverlay" || kind === "TextBadge") {
    const box = anchorBox(directive);
    if (!box) return;
    const [cu, cv] = boxCenter(box);
    const [x, y] = scalePoint(cu, cv, displayW, displayH);
    const label =
      (directive.payload["actionType"] as string) ??
      (directive.payload["text"] as string) ??
      kind;
    drawLabeledPoint(ctx, x, y, label);
    return;
  }
  if (kind === "ReferenceImage") {
    const box = anchorBox(directive);
    if (!box) return;
    const rect = scaleBox(box, displayW, displayH);
    ctx.strokeStyle = "#7fdbff";
    ctx.lineWidth = 1;
    ctx.strokeRect(rect.x + rect.w + 8, rect.y, 72, 54);
    ctx.fillStyle = "#7fdbff";
    ctx.font = "10px sans-serif";
    ctx.fillText("ref", rect.x + rect.w + 12, rect.y + 12);
    return;
  }
  if (kind === "StatePanel" || kind === "AudioCue") {
    return; // rendered by the DOM layer, not the canvas
  }
  warn(`unknown directive kind ${kind} ignored`);
}

export function renderBatch(
  ctx: DrawCtx,
  batch: DirectiveBatch,
  displayW: number,
  displayH: number,
  nowMs: number,
  masks: MaskLookup,
  warn: (message: string) => void = () => {},
): void {
  for (const directive of batch.directives) {
    renderDirective(ctx, directive, displayW, displayH, nowMs, masks, warn);
  }
}
