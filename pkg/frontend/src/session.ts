// Viewer session state machine, transport-agnostic.
//
// The UI never computes camera state; it forwards input events and displays
// whatever murals the master pushes back. The master is the single source
// of truth.

import { canvasToNorm, wheelToDelta } from "./gestures.js";
import {
  decodePush,
  encodePointerDown,
  encodePointerMove,
  encodePointerUp,
  encodeQuit,
  encodeSetMode,
  encodeToggleCache,
  encodeWheel,
  Hello,
  MSG,
  parseFrame,
  parseHello,
  parseStats,
  FrameMsg,
  Stats,
} from "./protocol.js";

export interface Channel {
  send(data: Uint8Array): void;
  close(): void;
}

export type SessionState = "connecting" | "ready" | "closed" | "error";

export interface SessionEvents {
  onHello?(h: Hello): void;
  onFrame?(f: FrameMsg): void;
  onStats?(s: Stats): void;
  onStateChange?(state: SessionState, detail?: string): void;
}

function concat(a: Uint8Array, b: Uint8Array): Uint8Array {
  if (a.length === 0) return b;
  const out = new Uint8Array(a.length + b.length);
  out.set(a);
  out.set(b, a.length);
  return out;
}

export class UiSession {
  state: SessionState = "connecting";
  hello: Hello | null = null;
  stats: Stats | null = null;
  framesReceived = 0;
  framesSkipped = 0;

  private seq = 0;
  private buf: Uint8Array = new Uint8Array(0);

  constructor(private channel: Channel, private events: SessionEvents = {}) {}

  /** Feed raw bytes from the transport. */
  feed(data: Uint8Array): void {
    this.buf = concat(this.buf, data);
    let offset = 0;
    for (;;) {
      let msg;
      try {
        msg = decodePush(this.buf, offset);
      } catch (err) {
        this.setState("error", String(err));
        return;
      }
      if (msg === null) break;
      offset += msg.used;
      this.dispatch(msg.kind, msg.body);
    }
    this.buf = this.buf.slice(offset);
  }

  private dispatch(kind: number, body: Uint8Array): void {
    if (kind === MSG.HELLO) {
      this.hello = parseHello(body);
      this.setState("ready");
      this.events.onHello?.(this.hello);
    } else if (kind === MSG.FRAME) {
      try {
        const frame = parseFrame(body);
        this.framesReceived++;
        this.events.onFrame?.(frame);
      } catch (err) {
        // malformed frame: skip it, keep the session alive
        this.framesSkipped++;
        console.error("skipping malformed frame:", err);
      }
    } else if (kind === MSG.STATS) {
      this.stats = parseStats(body);
      this.events.onStats?.(this.stats);
    }
  }

  closed(detail?: string): void {
    this.setState("closed", detail);
  }

  private setState(state: SessionState, detail?: string): void {
    this.state = state;
    this.events.onStateChange?.(state, detail);
  }

  private post(data: Uint8Array): void {
    if (this.state !== "ready") return; // events are dropped when disconnected
    this.channel.send(data);
  }

  // -- input handlers: canvas pixels in, protocol bytes out ------------------

  get canvasW(): number {
    return this.hello?.muralW ?? 0;
  }

  get canvasH(): number {
    return this.hello?.muralH ?? 0;
  }

  pointerDown(px: number, py: number, button: number): void {
    const [x, y] = canvasToNorm(px, py, this.canvasW, this.canvasH);
    this.post(encodePointerDown(++this.seq, button, x, y));
  }

  pointerMove(px: number, py: number, button: number): void {
    const [x, y] = canvasToNorm(px, py, this.canvasW, this.canvasH);
    this.post(encodePointerMove(++this.seq, button, x, y));
  }

  pointerUp(button: number): void {
    this.post(encodePointerUp(++this.seq, button));
  }

  wheel(deltaY: number, deltaMode = 0): void {
    this.post(encodeWheel(++this.seq, wheelToDelta(deltaY, deltaMode)));
  }

  setMode(mode: "tiled" | "composited"): void {
    this.post(encodeSetMode(++this.seq, mode === "composited" ? 1 : 0));
  }

  toggleCache(): void {
    this.post(encodeToggleCache(++this.seq));
  }

  quit(): void {
    this.post(encodeQuit(++this.seq));
  }
}
