// Binary protocol shared with the cluster master.
//
// UI -> master: event frames, 10-byte header (magic "PM", version 1, kind,
// seq u32, payload_length u16), all little-endian.
// master -> UI: push messages, 12-byte header (same magic/version, length
// widened to u32): 0x20 hello, 0x21 frame (per-row RLE RGBA), 0x22 stats.

export const EVENT_HEADER_LEN = 10;
export const PUSH_HEADER_LEN = 12;
export const PROTOCOL_VERSION = 1;

export const EV = {
  POINTER_DOWN: 0x01,
  POINTER_MOVE: 0x02,
  POINTER_UP: 0x03,
  WHEEL: 0x04,
  KEY: 0x05,
  SET_MODE: 0x06,
  QUIT: 0x07,
  TOGGLE_CACHE: 0x08,
} as const;

export const MSG = {
  HELLO: 0x20,
  FRAME: 0x21,
  STATS: 0x22,
} as const;

function eventFrame(kind: number, seq: number, payload: Uint8Array): Uint8Array {
  const out = new Uint8Array(EVENT_HEADER_LEN + payload.length);
  const v = new DataView(out.buffer);
  out[0] = 0x50; // 'P'
  out[1] = 0x4d; // 'M'
  out[2] = PROTOCOL_VERSION;
  out[3] = kind;
  v.setUint32(4, seq >>> 0, true);
  v.setUint16(8, payload.length, true);
  out.set(payload, EVENT_HEADER_LEN);
  return out;
}

function f32pair(button: number, x: number, y: number): Uint8Array {
  const p = new Uint8Array(9);
  const v = new DataView(p.buffer);
  p[0] = button;
  v.setFloat32(1, Math.fround(x), true);
  v.setFloat32(5, Math.fround(y), true);
  return p;
}

export function encodePointerDown(seq: number, button: number, x: number, y: number) {
  return eventFrame(EV.POINTER_DOWN, seq, f32pair(button, x, y));
}

export function encodePointerMove(seq: number, button: number, x: number, y: number) {
  return eventFrame(EV.POINTER_MOVE, seq, f32pair(button, x, y));
}

export function encodePointerUp(seq: number, button: number) {
  return eventFrame(EV.POINTER_UP, seq, Uint8Array.of(button));
}

export function encodeWheel(seq: number, delta: number) {
  const p = new Uint8Array(4);
  new DataView(p.buffer).setFloat32(0, Math.fround(delta), true);
  return eventFrame(EV.WHEEL, seq, p);
}

export function encodeKey(seq: number, code: number, down: boolean) {
  const p = new Uint8Array(5);
  new DataView(p.buffer).setUint32(0, code >>> 0, true);
  p[4] = down ? 1 : 0;
  return eventFrame(EV.KEY, seq, p);
}

export function encodeSetMode(seq: number, mode: number) {
  return eventFrame(EV.SET_MODE, seq, Uint8Array.of(mode));
}

export function encodeQuit(seq: number) {
  return eventFrame(EV.QUIT, seq, new Uint8Array(0));
}

export function encodeToggleCache(seq: number) {
  return eventFrame(EV.TOGGLE_CACHE, seq, new Uint8Array(0));
}

// -- master -> UI push messages ---------------------------------------------

export interface PushMessage {
  kind: number;
  seq: number;
  body: Uint8Array;
  used: number;
}

/** Parse one push message at offset; null if more bytes are needed. */
export function decodePush(buf: Uint8Array, offset = 0): PushMessage | null {
  if (buf.length - offset < PUSH_HEADER_LEN) return null;
  if (buf[offset] !== 0x50 || buf[offset + 1] !== 0x4d) {
    throw new Error("bad push magic");
  }
  const v = new DataView(buf.buffer, buf.byteOffset + offset);
  const version = buf[offset + 2];
  if (version !== PROTOCOL_VERSION) throw new Error(`bad push version ${version}`);
  const kind = buf[offset + 3];
  const seq = v.getUint32(4, true);
  const plen = v.getUint32(8, true);
  if (buf.length - offset < PUSH_HEADER_LEN + plen) return null;
  const body = buf.slice(offset + PUSH_HEADER_LEN, offset + PUSH_HEADER_LEN + plen);
  return { kind, seq, body, used: PUSH_HEADER_LEN + plen };
}

export interface Hello {
  muralW: number;
  muralH: number;
  mode: "tiled" | "composited";
  caching: boolean;
}

export function parseHello(body: Uint8Array): Hello {
  const v = new DataView(body.buffer, body.byteOffset);
  return {
    muralW: v.getUint16(0, true),
    muralH: v.getUint16(2, true),
    mode: body[4] === 1 ? "composited" : "tiled",
    caching: body[5] === 1,
  };
}

export interface FrameMsg {
  frameNo: number;
  w: number;
  h: number;
  rgba: Uint8ClampedArray<ArrayBuffer>;
}

export function parseFrame(body: Uint8Array): FrameMsg {
  const v = new DataView(body.buffer, body.byteOffset);
  const frameNo = v.getUint32(0, true);
  const w = v.getUint16(4, true);
  const h = v.getUint16(6, true);
  return { frameNo, w, h, rgba: rleDecode(body.subarray(8), w, h) };
}

/** Per-row RLE: runs of (count u16, r, g, b, a) covering each row exactly. */
export function rleDecode(data: Uint8Array, w: number, h: number): Uint8ClampedArray<ArrayBuffer> {
  const out = new Uint8ClampedArray(w * h * 4);
  const v = new DataView(data.buffer, data.byteOffset);
  let pos = 0;
  for (let y = 0; y < h; y++) {
    let x = 0;
    while (x < w) {
      const count = v.getUint16(pos, true);
      const r = data[pos + 2];
      const g = data[pos + 3];
      const b = data[pos + 4];
      const a = data[pos + 5];
      pos += 6;
      let at = (y * w + x) * 4;
      for (let i = 0; i < count; i++) {
        out[at] = r;
        out[at + 1] = g;
        out[at + 2] = b;
        out[at + 3] = a;
        at += 4;
      }
      x += count;
    }
    if (x !== w) throw new Error(`row ${y}: RLE does not cover the row`);
  }
  if (pos !== data.length) throw new Error("trailing bytes after RLE image");
  return out;
}

export interface Stats {
  fps: number;
  bytesPerLink: number[];
}

export function parseStats(body: Uint8Array): Stats {
  const v = new DataView(body.buffer, body.byteOffset);
  const fps = v.getFloat32(0, true);
  const links = v.getUint16(4, true);
  const bytesPerLink: number[] = [];
  for (let i = 0; i < links; i++) {
    bytesPerLink.push(Number(v.getBigUint64(6 + 8 * i, true)));
  }
  return { fps, bytesPerLink };
}
