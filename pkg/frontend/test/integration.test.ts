// End-to-end against the real cluster: spawn `tilewire local` with a viewer
// port, connect over plain TCP, steer the render, and watch the stats react.

import { spawn, ChildProcess } from "node:child_process";
import { mkdtempSync, writeFileSync } from "node:fs";
import net from "node:net";
import { createServer } from "node:net";
import { tmpdir } from "node:os";
import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { Stats } from "../src/protocol.js";
import { UiSession } from "../src/session.js";

const repoRoot = join(dirname(fileURLToPath(import.meta.url)), "..", "..");

function freePort(): Promise<number> {
  return new Promise((resolve, reject) => {
    const srv = createServer();
    srv.listen(0, "127.0.0.1", () => {
      const port = (srv.address() as net.AddressInfo).port;
      srv.close(() => resolve(port));
    });
    srv.on("error", reject);
  });
}

interface Live {
  session: UiSession;
  sock: net.Socket;
  helloSeen: Promise<void>;
  stats: Stats[];
  frames: number[];
  waitStats(count: number, timeoutMs: number): Promise<void>;
}

function connectViewer(port: number): Promise<Live> {
  return new Promise((resolve, reject) => {
    const sock = net.createConnection(port, "127.0.0.1");
    sock.on("error", reject);
    sock.on("connect", () => {
      const stats: Stats[] = [];
      const frames: number[] = [];
      let helloResolve: () => void;
      const helloSeen = new Promise<void>((r) => (helloResolve = r));
      const waiters: Array<{ n: number; fn: () => void }> = [];
      const session = new UiSession(
        { send: (d) => sock.write(d), close: () => sock.end() },
        {
          onHello: () => helloResolve(),
          onFrame: (f) => frames.push(f.frameNo),
          onStats: (s) => {
            stats.push(s);
            for (const w of [...waiters]) {
              if (stats.length >= w.n) {
                waiters.splice(waiters.indexOf(w), 1);
                w.fn();
              }
            }
          },
        },
      );
      sock.on("data", (d) => session.feed(new Uint8Array(d)));
      resolve({
        session,
        sock,
        helloSeen,
        stats,
        frames,
        waitStats: (count, timeoutMs) =>
          new Promise<void>((res, rej) => {
            if (stats.length >= count) return res();
            const t = setTimeout(() => rej(new Error(`only ${stats.length} stats after ${timeoutMs}ms`)), timeoutMs);
            waiters.push({ n: count, fn: () => (clearTimeout(t), res()) });
          }),
      });
    });
  });
}

describe("live cluster integration", () => {
  let proc: ChildProcess;
  let port: number;

  beforeAll(async () => {
    port = await freePort();
    const config = {
      app_nodes: 4,
      tile_rows: 2,
      tile_cols: 2,
      tile_width: 64,
      tile_height: 64,
      ui_addr: `127.0.0.1:${port}`,
      master_addr: `127.0.0.1:${await freePort()}`,
      scene: { kind: "synthetic", bytes: 480192, seed: 5 },
    };
    const cfgPath = join(mkdtempSync(join(tmpdir(), "tilewire-ui-")), "job.json");
    writeFileSync(cfgPath, JSON.stringify(config));
    proc = spawn("python3", ["-m", "tilewire.cli", "local", "--config", cfgPath], {
      cwd: repoRoot,
      env: { ...process.env, PYTHONPATH: join(repoRoot, "src") },
    });
    proc.stderr!.on("data", (d) => process.stderr.write(`[cluster] ${d}`));
    // wait for the viewer port to accept
    for (let i = 0; i < 100; i++) {
      try {
        await connectViewer(port).then((l) => l.sock.destroy());
        return;
      } catch {
        await new Promise((r) => setTimeout(r, 100));
      }
    }
    throw new Error("cluster viewer port never came up");
  }, 30_000);

  afterAll(() => {
    proc?.kill("SIGKILL");
  });

  it("handshake sizes the canvas and caching toggle collapses traffic", async () => {
    const live = await connectViewer(port);
    await live.helloSeen;
    expect(live.session.canvasW).toBe(128);
    expect(live.session.canvasH).toBe(128);
    expect(live.session.hello!.caching).toBe(false);

    // lock-step drag: one move per presented frame (bursts would coalesce)
    const step = async (k: number) => {
      const want = live.stats.length + 1;
      live.session.pointerMove(64 + 4 * k, 64, 0);
      await live.waitStats(want, 20_000);
      return live.stats[live.stats.length - 1].bytesPerLink.reduce((a, b) => a + b, 0);
    };
    live.session.pointerDown(64, 64, 0);
    await step(1);
    const uncached = await step(2);
    expect(uncached).toBeGreaterThan(400_000);
    expect(live.frames.length).toBeGreaterThan(0);

    // flip display-list caching on: the next frame re-sends geometry as
    // list definitions, every frame after that is control + CALL_LIST only
    const beforeToggle = live.stats.length;
    live.session.toggleCache();
    await live.waitStats(beforeToggle + 1, 20_000);
    await step(3);
    const cached = await step(4);
    expect(cached).toBeLessThan(uncached * 0.01);

    live.session.quit();
    live.sock.destroy();
  }, 60_000);
});
