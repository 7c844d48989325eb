// Browser entry point: wire DOM events to a UiSession over a WebSocket.

import { UiSession } from "./session.js";
import { connectWebSocket } from "./transport.js";

const canvas = document.getElementById("mural") as HTMLCanvasElement;
const statsEl = document.getElementById("stats") as HTMLElement;
const stateEl = document.getElementById("state") as HTMLElement;
const retryBtn = document.getElementById("retry") as HTMLButtonElement;
const modeBtn = document.getElementById("mode") as HTMLButtonElement;
const cacheBtn = document.getElementById("cache") as HTMLButtonElement;

let session: UiSession | null = null;
let mode: "tiled" | "composited" = "tiled";

function fmtBytes(n: number): string {
  if (n >= 1 << 20) return (n / (1 << 20)).toFixed(2) + " MiB";
  if (n >= 1 << 10) return (n / (1 << 10)).toFixed(1) + " KiB";
  return n + " B";
}

function connect(): void {
  const url = `ws://${location.hostname}:${(window as any).TILEWIRE_UI_PORT ?? 7650}`;
  stateEl.textContent = `connecting to ${url}...`;
  retryBtn.hidden = true;

  const channel = connectWebSocket(url, {
    onData: (data) => session?.feed(data),
    onClose: () => {
      session?.closed();
      stateEl.textContent = "disconnected";
      retryBtn.hidden = false;
    },
    onError: (detail) => {
      stateEl.textContent = `connection failed: ${detail}`;
      retryBtn.hidden = false;
    },
  });

  session = new UiSession(channel, {
    onHello: (h) => {
      canvas.width = h.muralW;
      canvas.height = h.muralH;
      mode = h.mode;
      stateEl.textContent = `connected: ${h.muralW}x${h.muralH} mural, ${h.mode}, caching ${h.caching ? "on" : "off"}`;
    },
    onFrame: (f) => {
      const ctx = canvas.getContext("2d")!;
      ctx.putImageData(new ImageData(f.rgba, f.w, f.h), 0, 0);
    },
    onStats: (s) => {
      const total = s.bytesPerLink.reduce((a, b) => a + b, 0);
      statsEl.textContent =
        `${s.fps.toFixed(1)} fps | ${fmtBytes(total)}/frame over ` +
        `${s.bytesPerLink.length} links | per link: ` +
        s.bytesPerLink.map(fmtBytes).join(", ");
    },
  });
}

canvas.addEventListener("pointerdown", (e) => {
  e.preventDefault();
  canvas.setPointerCapture(e.pointerId);
  session?.pointerDown(e.offsetX, e.offsetY, e.button);
});
canvas.addEventListener("pointermove", (e) => {
  if (e.buttons !== 0) session?.pointerMove(e.offsetX, e.offsetY, e.button === -1 ? 0 : e.button);
});
canvas.addEventListener("pointerup", (e) => session?.pointerUp(e.button));
canvas.addEventListener("wheel", (e) => {
  e.preventDefault();
  session?.wheel(e.deltaY, e.deltaMode);
});
canvas.addEventListener("contextmenu", (e) => e.preventDefault());

modeBtn.addEventListener("click", () => {
  mode = mode === "tiled" ? "composited" : "tiled";
  session?.setMode(mode);
  modeBtn.textContent = `mode: ${mode}`;
});
cacheBtn.addEventListener("click", () => session?.toggleCache());
retryBtn.addEventListener("click", connect);

connect();
