// Browser transport: a binary WebSocket to the master's viewer port.

import { Channel } from "./session.js";

export interface WsCallbacks {
  onData(data: Uint8Array): void;
  onClose(): void;
  onError(detail: string): void;
}

export function connectWebSocket(url: string, cb: WsCallbacks): Channel {
  const ws = new WebSocket(url);
  ws.binaryType = "arraybuffer";
  ws.onmessage = (ev) => cb.onData(new Uint8Array(ev.data as ArrayBuffer));
  ws.onclose = () => cb.onClose();
  ws.onerror = () => cb.onError(`websocket error (${url})`);
  return {
    send(data: Uint8Array) {
      if (ws.readyState === WebSocket.OPEN) ws.send(data);
    },
    close() {
      ws.close();
    },
  };
}
