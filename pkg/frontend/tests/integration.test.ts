/**
 * Console round-trip against a live serve session (acceptance criterion for
 * the console): spawns the python server, connects over WebSocket, checks
 * the broadcast rate and that a place_obstacle command is reflected in the
 * state within 500 ms.
 */

import { spawn, ChildProcess } from "node:child_process";
import { createServer } from "node:net";
import { afterAll, beforeAll, describe, expect, it } from "vitest";
import WebSocket from "ws";

import { ConsoleConnection } from "../src/transport.js";
import { placeObstacleEvent } from "../src/commands.js";
import { ViewModel } from "../src/viewmodel.js";

function freePort(): Promise<number> {
  return new Promise((resolve, reject) => {
    const srv = createServer();
    srv.listen(0, "127.0.0.1", () => {
      const address = srv.address();
      if (address && typeof address === "object") {
        const port = address.port;
        srv.close(() => resolve(port));
      } else {
        reject(new Error("no port"));
      }
    });
  });
}

let proc: ChildProcess | null = null;
let port = 0;

beforeAll(async () => {
  port = await freePort();
  proc = spawn(
    "python3",
    ["-m", "telehaptic.cli", "serve", "--port", String(port), "--seed", "3"],
    { cwd: new URL("../..", import.meta.url).pathname, stdio: "pipe" },
  );
  await new Promise<void>((resolve, reject) => {
    const timer = setTimeout(
      () => reject(new Error("server did not start")),
      30000,
    );
    proc!.stdout!.on("data", (chunk: Buffer) => {
      if (chunk.toString().includes("serving on")) {
        clearTimeout(timer);
        resolve();
      }
    });
    proc!.on("exit", (code) => reject(new Error(`server exited ${code}`)));
  });
}, 60000);

afterAll(() => {
  proc?.kill("SIGINT");
});

async function connect(): Promise<{
  conn: ConsoleConnection;
  vm: ViewModel;
  nextBroadcast: () => Promise<void>;
}> {
  const conn = new ConsoleConnection();
  const vm = new ViewModel();
  const waiters: Array<() => void> = [];
  conn.onMessage = (raw) => {
    const result = vm.decodeState(raw);
    if (result.kind === "ok") {
      for (const w of waiters.splice(0)) w();
    }
  };
  const socket = new WebSocket(`ws://127.0.0.1:${port}`);
  await conn.attach(socket as never);
  const nextBroadcast = () =>
    new Promise<void>((resolve) => waiters.push(resolve));
  return { conn, vm, nextBroadcast };
}

describe("live console round trip", () => {
  it("first message is a full snapshot with schema and bounds", async () => {
    const { conn, vm, nextBroadcast } = await connect();
    await nextBroadcast();
    expect(vm.latest?.schema).toBe(1);
    expect(vm.latest?.scene_bounds).toHaveLength(2);
    expect(vm.latest?.robot.pose).toHaveLength(3);
    conn.close();
  });

  it("receives at least 10 broadcasts per second", async () => {
    const { conn, vm, nextBroadcast } = await connect();
    await nextBroadcast();
    let count = 0;
    const t0 = Date.now();
    while (Date.now() - t0 < 1500) {
      await nextBroadcast();
      count += 1;
    }
    const rate = count / ((Date.now() - t0) / 1000);
    expect(rate).toBeGreaterThanOrEqual(10);
    conn.close();
  }, 20000);

  it("place_obstacle appears in the broadcast within 500 ms", async () => {
    const { conn, vm, nextBroadcast } = await connect();
    // wait for the session's ground plane: obstacles need it
    const deadline = Date.now() + 20000;
    while (Date.now() < deadline) {
      await nextBroadcast();
      if ((vm.latest?.t_ms ?? 0) > 3000) break;
    }
    const before = vm.latest!.obstacles.length;
    const event = placeObstacleEvent([5.0, 5.0], 0.2);
    conn.sendEvent(event);
    vm.markPending(event);
    const sent = Date.now();
    let reflected: number | null = null;
    while (Date.now() - sent < 2000) {
      await nextBroadcast();
      if (vm.latest!.obstacles.length > before) {
        reflected = Date.now() - sent;
        break;
      }
    }
    expect(reflected).not.toBeNull();
    expect(reflected!).toBeLessThan(500);
    conn.close();
  }, 40000);

  it("malformed commands get an error reply and the stream survives", async () => {
    const { conn, vm, nextBroadcast } = await connect();
    await nextBroadcast();
    let sawError = false;
    conn.onMessage = (raw) => {
      const result = vm.decodeState(raw);
      if (result.kind === "reply" && result.type === "error") sawError = true;
    };
    (conn as unknown as { socket: { send(d: string): void } });
    // bypass validation to send garbage on purpose
    (conn as never as { ["socket"]: WebSocket })["socket"]?.send?.("{nope");
    const t0 = Date.now();
    while (Date.now() - t0 < 3000 && !sawError) {
      await new Promise((r) => setTimeout(r, 50));
    }
    expect(sawError).toBe(true);
    conn.close();
  }, 20000);
});
