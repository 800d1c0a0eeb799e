#!/usr/bin/env node
/**
 * Adapter executable: `null` for protocol drills, `runtime` for real tfjs
 * measurements. One executable with subcommands so adapter manifests pick a
 * backend by argv alone:
 *
 *   {"check": ["node", "dist/cli.js", "null", "--throughput", "250"],
 *    "identity": ["node", "dist/cli.js", "runtime"]}
 */
import { parseArgs } from "node:util";

import { NULL_DEFAULTS, NullBackend } from "./nullBackend";
import { RuntimeBackend } from "./runtimeBackend";
import { serveBackend } from "./serve";

const USAGE = `usage: graphbench-node-adapter <command> [options]

commands:
  null       protocol-conformance backend (no tensors)
  runtime    tfjs eager-execution backend

null options:
  --throughput N     constant samples/s reported per repetition (default 100)
  --fail-init        answer init with an error
  --crash-after N    exit(1) after N replies
  --sleep-init MS    stall init replies
  --sleep-bench MS   stall bench replies
`;

function fail(message: string): never {
  process.stderr.write(message + "\n");
  process.exit(2);
}

async function main(): Promise<number> {
  // stdout is the wire; anything libraries print must not corrupt it
  console.log = (...args: unknown[]) => console.error(...args);
  const [command, ...rest] = process.argv.slice(2);
  if (command === "--help" || command === "-h" || command === undefined) {
    process.stderr.write(USAGE);
    return command === undefined ? 2 : 0;
  }
  if (command === "runtime") {
    if (rest.length > 0) {
      fail(`runtime takes no options, got: ${rest.join(" ")}`);
    }
    return serveBackend(new RuntimeBackend());
  }
  if (command !== "null") {
    fail(`unknown command '${command}'\n\n${USAGE}`);
  }
  let parsed;
  try {
    parsed = parseArgs({
      args: rest,
      options: {
        throughput: { type: "string" },
        "fail-init": { type: "boolean" },
        "crash-after": { type: "string" },
        "sleep-init": { type: "string" },
        "sleep-bench": { type: "string" },
      },
    });
  } catch (exc) {
    fail(String(exc));
  }
  const num = (name: string, value: string | undefined, fallback: number): number => {
    if (value === undefined) {
      return fallback;
    }
    const n = Number(value);
    if (!Number.isFinite(n)) {
      fail(`--${name} expects a number, got '${value}'`);
    }
    return n;
  };
  const v = parsed.values;
  const backend = new NullBackend({
    throughput: num("throughput", v.throughput, NULL_DEFAULTS.throughput),
    failInit: v["fail-init"] ?? false,
    crashAfter: v["crash-after"] === undefined ? null : num("crash-after", v["crash-after"], 0),
    sleepInitMs: num("sleep-init", v["sleep-init"], 0),
    sleepBenchMs: num("sleep-bench", v["sleep-bench"], 0),
  });
  return serveBackend(backend);
}

main().then(
  (code) => process.exit(code),
  (exc) => {
    process.stderr.write(String(exc) + "\n");
    process.exit(1);
  },
);
