/**
 * Adapter server loop: one model served over stdio.
 *
 * Model exceptions never kill the process; they come back as `error`
 * messages carrying the stack so the harness can log them and keep going.
 * Fault injection (for harness fault-tolerance tests) is explicit and
 * opt-in via options, never ambient.
 */

import {
  Capabilities,
  Message,
  PROTOCOL_VERSION,
  parseForecastRequest,
  readMessages,
  writeMessage,
} from "./protocol.js";
import { ForecastModel } from "./models.js";

export type Fault = "" | "timeout-second" | "malformed" | "wrong-len" | "die";

export interface ServerOptions {
  fault?: Fault;
}

export async function serve(
  model: ForecastModel,
  input: NodeJS.ReadableStream,
  output: NodeJS.WritableStream,
  options: ServerOptions = {},
): Promise<void> {
  const fault = options.fault ?? "";
  let forecastCount = 0;

  for await (const msg of readMessages(input)) {
    switch (msg.msg_type) {
      case "hello": {
        const caps: Capabilities = {
          model_id: model.modelId,
          protocol_version: PROTOCOL_VERSION,
          modes: ["point"],
        };
        if (model.referenceNaive) caps.reference_naive = true;
        writeMessage(output, { msg_type: "capabilities", id: msg.id, payload: { ...caps } });
        break;
      }
      case "forecast_request": {
        forecastCount += 1;
        if (fault === "timeout-second" && forecastCount >= 2) {
          continue; // silently never answer: the harness must time out
        }
        if (fault === "malformed") {
          output.write("{ this is not valid json\n");
          continue;
        }
        try {
          const request = parseForecastRequest(msg.payload);
          const t0 = process.hrtime.bigint();
          model.fit(request.context);
          let values = model.predict(request.horizon);
          const walltime = Number(process.hrtime.bigint() - t0) / 1e9;
          if (values.length !== request.horizon) {
            throw new Error(
              `model emitted ${values.length} values for horizon ${request.horizon}`,
            );
          }
          if (fault === "wrong-len") values = values.slice(0, -1);
          writeMessage(output, {
            msg_type: "forecast_response",
            id: msg.id,
            payload: { values, inference_walltime: walltime },
          });
          if (fault === "die") process.exit(17);
        } catch (err) {
          const detail = err instanceof Error ? err : new Error(String(err));
          writeMessage(output, {
            msg_type: "error",
            id: msg.id,
            payload: { message: detail.message, traceback: detail.stack ?? "" },
          });
        }
        break;
      }
      case "shutdown":
        return;
      default:
        writeMessage(output, {
          msg_type: "error",
          id: msg.id,
          payload: { message: `unexpected msg_type '${msg.msg_type}'` },
        });
    }
  }
}
