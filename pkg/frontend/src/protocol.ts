// Typed envelopes for the session wire protocol (see docs/protocol.md).
// The console owns one strictly increasing seq counter per session; it must
// survive reconnects because the server validates seq across the whole
// session, not per connection.

export interface Envelope {
  type: string;
  sessionId: string;
  seq: number;
  payload: Record<string, unknown>;
}

export const CLIENT_TYPES = [
  "StartTask",
  "Attach",
  "FrameUpdate",
  "VerifyRequest",
  "VoiceQuery",
  "FireSignal",
  "SkipStep",
  "EndSession",
] as const;

export class SeqCounter {
  private last = 0;

  next(): number {
    this.last += 1;
    return this.last;
  }

  get current(): number {
    return this.last;
  }
}

export function makeEnvelope(
  type: string,
  sessionId: string,
  seq: SeqCounter,
  payload: Record<string, unknown> = {},
): Envelope {
  return { type, sessionId, seq: seq.next(), payload };
}

export function encode(envelope: Envelope): string {
  return JSON.stringify(envelope);
}

export function decode(raw: string): Envelope {
  const obj = JSON.parse(raw) as Partial<Envelope>;
  if (typeof obj.type !== "string") throw new Error("envelope missing type");
  if (typeof obj.seq !== "number") throw new Error("envelope missing seq");
  return {
    type: obj.type,
    sessionId: String(obj.sessionId ?? ""),
    seq: obj.seq,
    payload: (obj.payload ?? {}) as Record<string, unknown>,
  };
}
