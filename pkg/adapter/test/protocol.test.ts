import { describe, expect, it } from "vitest";

import {
  formatMessage,
  parseForecastRequest,
  parseMessage,
} from "../src/protocol.js";

describe("message framing", () => {
  it("round-trips a message", () => {
    const msg = {
      msg_type: "forecast_response" as const,
      id: "m7",
      payload: { values: [1.5, -2.25], inference_walltime: 0.001 },
    };
    expect(parseMessage(formatMessage(msg))).toEqual(msg);
  });

  it("round-trips awkward doubles bit-exactly", () => {
    const values = [0.1, 1 / 3, 1e-300, 1e300, -7.234561234e-17, 12345.6789];
    const parsed = parseMessage(
      formatMessage({ msg_type: "forecast_response", id: "x", payload: { values } }),
    );
    const back = parsed.payload["values"] as number[];
    values.forEach((v, i) => expect(Object.is(back[i], v)).toBe(true));
  });

  it("rejects unknown msg_type and missing id", () => {
    expect(() => parseMessage('{"msg_type": "nope", "id": "1"}')).toThrow(/msg_type/);
    expect(() => parseMessage('{"msg_type": "hello"}')).toThrow(/id/);
  });
});

describe("forecast request validation", () => {
  it("accepts a well-formed request with defaults", () => {
    const req = parseForecastRequest({ context: [1, 2, 3], horizon: 5 });
    expect(req.horizon).toBe(5);
    expect(req.channel_index).toBe(0);
    expect(req.dt_lyap).toBeCloseTo(1 / 30);
  });

  it("rejects bad horizons and contexts", () => {
    expect(() => parseForecastRequest({ context: [1, 2], horizon: 0 })).toThrow(/horizon/);
    expect(() => parseForecastRequest({ context: [1, 2], horizon: -5 })).toThrow(/horizon/);
    expect(() => parseForecastRequest({ context: [1], horizon: 3 })).toThrow(/context/);
    expect(() => parseForecastRequest({ context: [1, NaN], horizon: 3 })).toThrow(/context/);
  });
});
