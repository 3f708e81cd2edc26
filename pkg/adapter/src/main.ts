/**
 * Entry point: `node dist/main.js [--model=naive] [--fault=...]`
 *
 * --model  picks a registered model (default: naive, the reference the
 *          harness cross-checks bit-exactly against its in-core naive).
 * --fault  injects a protocol fault for harness fault-tolerance tests:
 *          timeout-second | malformed | wrong-len | die
 */

import { createModel } from "./models.js";
import { Fault, serve } from "./server.js";

function parseArgs(argv: string[]): { model: string; fault: Fault } {
  let model = "naive";
  let fault: Fault = "";
  for (const arg of argv) {
    if (arg.startsWith("--model=")) model = arg.slice("--model=".length);
    else if (arg.startsWith("--fault=")) fault = arg.slice("--fault=".length) as Fault;
    else if (arg === "--help" || arg === "-h") {
      process.stderr.write(
        "usage: main.js [--model=naive|drift] [--fault=timeout-second|malformed|wrong-len|die]\n",
      );
      process.exit(0);
    } else {
      process.stderr.write(`unknown argument: ${arg}\n`);
      process.exit(2);
    }
  }
  return { model, fault };
}

const { model, fault } = parseArgs(process.argv.slice(2));

serve(createModel(model), process.stdin, process.stdout, { fault })
  .then(() => process.exit(0))
  .catch((err) => {
    process.stderr.write(`adapter crashed: ${err instanceof Error ? err.stack : String(err)}\n`);
    process.exit(1);
  });
