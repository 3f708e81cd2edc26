/**
 * Wire protocol types and line framing.
 *
 * Messages are newline-delimited JSON objects over stdin/stdout:
 *   { "msg_type": ..., "id": ..., "payload": {...} }
 *
 * Lifecycle: the harness sends `hello`, the adapter answers `capabilities`
 * with the same id; every `forecast_request` is answered exactly once by a
 * `forecast_response` (or `error`) carrying the request id; `shutdown` ends
 * the process. JSON.stringify/parse round-trips finite doubles bit-exactly,
 * which the harness's conformance suite checks.
 */

import readline from "node:readline";

export const PROTOCOL_VERSION = 1;

export type MsgType =
  | "hello"
  | "capabilities"
  | "forecast_request"
  | "forecast_response"
  | "error"
  | "shutdown";

export interface Message {
  msg_type: MsgType;
  id: string;
  payload: Record<string, unknown>;
}

export interface ForecastRequest {
  context: number[];
  horizon: number;
  channel_index?: number;
  dt_lyap?: number;
}

export interface Capabilities {
  model_id: string;
  protocol_version: number;
  modes: string[];
  reference_naive?: boolean;
}

const MSG_TYPES: ReadonlySet<string> = new Set([
  "hello",
  "capabilities",
  "forecast_request",
  "forecast_response",
  "error",
  "shutdown",
]);

export function parseMessage(line: string): Message {
  const doc = JSON.parse(line) as Record<string, unknown>;
  const msgType = doc["msg_type"];
  if (typeof msgType !== "string" || !MSG_TYPES.has(msgType)) {
    throw new Error(`invalid msg_type: ${String(msgType)}`);
  }
  const id = doc["id"];
  if (typeof id !== "string" && typeof id !== "number") {
    throw new Error("message lacks an id");
  }
  const payload = (doc["payload"] ?? {}) as Record<string, unknown>;
  return { msg_type: msgType as MsgType, id: String(id), payload };
}

export function formatMessage(msg: Message): string {
  return JSON.stringify(msg);
}

export function writeMessage(stream: NodeJS.WritableStream, msg: Message): void {
  stream.write(formatMessage(msg) + "\n");
}

export async function* readMessages(stream: NodeJS.ReadableStream): AsyncIterable<Message> {
  const rl = readline.createInterface({ input: stream, crlfDelay: Infinity });
  for await (const line of rl) {
    const trimmed = line.trim();
    if (!trimmed) continue;
    yield parseMessage(trimmed);
  }
}

export function parseForecastRequest(payload: Record<string, unknown>): ForecastRequest {
  const context = payload["context"];
  const horizon = payload["horizon"];
  if (!Array.isArray(context) || context.length < 2 || !context.every((v) => Number.isFinite(v))) {
    throw new Error("context must be a finite numeric array of length >= 2");
  }
  if (typeof horizon !== "number" || !Number.isInteger(horizon) || horizon < 1) {
    throw new Error(`horizon must be a positive integer, got ${String(horizon)}`);
  }
  return {
    context: context as number[],
    horizon,
    channel_index: typeof payload["channel_index"] === "number" ? (payload["channel_index"] as number) : 0,
    dt_lyap: typeof payload["dt_lyap"] === "number" ? (payload["dt_lyap"] as number) : 1 / 30,
  };
}
