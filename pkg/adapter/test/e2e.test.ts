/** End-to-end lifecycle tests against the built adapter process. */

import { ChildProcessWithoutNullStreams, spawn } from "node:child_process";
import path from "node:path";
import readline from "node:readline";
import { fileURLToPath } from "node:url";

import { afterEach, beforeAll, describe, expect, it } from "vitest";
import { execFileSync } from "node:child_process";

const here = path.dirname(fileURLToPath(import.meta.url));
const MAIN = path.resolve(here, "..", "dist", "main.js");

let child: ChildProcessWithoutNullStreams | null = null;
let lines: AsyncIterableIterator<string> | null = null;

beforeAll(() => {
  execFileSync("npx", ["tsc"], { cwd: path.resolve(here, "..") });
});

function start(args: string[] = []) {
  child = spawn("node", [MAIN, ...args], { stdio: ["pipe", "pipe", "inherit"] });
  const rl = readline.createInterface({ input: child.stdout, crlfDelay: Infinity });
  lines = rl[Symbol.asyncIterator]();
}

function send(msg: unknown) {
  child!.stdin.write(JSON.stringify(msg) + "\n");
}

async function recv(timeoutMs = 5000): Promise<any> {
  const next = lines!.next();
  const timer = new Promise<never>((_, reject) =>
    setTimeout(() => reject(new Error("adapter reply timed out")), timeoutMs),
  );
  const result = (await Promise.race([next, timer])) as IteratorResult<string>;
  if (result.done) throw new Error("adapter closed its stream");
  return JSON.parse(result.value);
}

afterEach(() => {
  child?.kill();
  child = null;
  lines = null;
});

describe("adapter lifecycle", () => {
  it("handshakes and forecasts with the naive model", async () => {
    start();
    send({ msg_type: "hello", id: "h1", payload: { protocol_version: 1 } });
    const caps = await recv();
    expect(caps.msg_type).toBe("capabilities");
    expect(caps.id).toBe("h1");
    expect(caps.payload.model_id).toBe("naive-constant");
    expect(caps.payload.reference_naive).toBe(true);

    send({
      msg_type: "forecast_request",
      id: "f1",
      payload: { context: [1.0, 2.0, 3.5], horizon: 4 },
    });
    const reply = await recv();
    expect(reply.msg_type).toBe("forecast_response");
    expect(reply.id).toBe("f1");
    expect(reply.payload.values).toEqual([3.5, 3.5, 3.5, 3.5]);
    expect(reply.payload.inference_walltime).toBeGreaterThanOrEqual(0);
  });

  it("answers bad requests with error and stays alive", async () => {
    start();
    send({ msg_type: "hello", id: "h", payload: {} });
    await recv();
    send({ msg_type: "forecast_request", id: "bad", payload: { context: [1, 2], horizon: -1 } });
    const err = await recv();
    expect(err.msg_type).toBe("error");
    expect(err.id).toBe("bad");
    expect(String(err.payload.message)).toMatch(/horizon/);

    send({ msg_type: "forecast_request", id: "ok", payload: { context: [1, 2], horizon: 2 } });
    const reply = await recv();
    expect(reply.msg_type).toBe("forecast_response");
    expect(reply.payload.values).toEqual([2, 2]);
  });

  it("exits cleanly on shutdown", async () => {
    start();
    send({ msg_type: "hello", id: "h", payload: {} });
    await recv();
    const exited = new Promise<number | null>((resolve) => child!.on("exit", resolve));
    send({ msg_type: "shutdown", id: "s", payload: {} });
    expect(await exited).toBe(0);
  });

  it("serves the drift model when asked", async () => {
    start(["--model=drift"]);
    send({ msg_type: "hello", id: "h", payload: {} });
    const caps = await recv();
    expect(caps.payload.model_id).toBe("drift");
    expect(caps.payload.reference_naive).toBeUndefined();
  });

  it("injects the malformed fault only when requested", async () => {
    start(["--fault=malformed"]);
    send({ msg_type: "hello", id: "h", payload: {} });
    await recv();
    send({ msg_type: "forecast_request", id: "f", payload: { context: [1, 2], horizon: 1 } });
    const next = lines!.next();
    const raw = (await next).value as string;
    expect(() => JSON.parse(raw)).toThrow();
  });
});
