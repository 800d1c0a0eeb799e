/**
 * The adapter main loop: handshake, ordering enforcement, shutdown.
 *
 * Backends only implement onInit/onBench; everything protocol-shaped lives
 * here so the null and runtime backends cannot drift apart. afterReply runs
 * once per request reply, after the line reached the pipe; fault-injecting
 * backends use it to die mid-session with the previous reply fully flushed.
 */
import * as readline from "node:readline";

import {
  BenchOk,
  BenchRequest,
  Bye,
  DecodeError,
  ERR_PROTOCOL_VIOLATION,
  ERR_UNKNOWN_TYPE,
  ErrorResponse,
  Hello,
  InitOk,
  InitRequest,
  PROTOCOL_VERSION,
  Response,
  decodeRequest,
  encodeMessage,
  errorResponse,
} from "./protocol";

export interface Backend {
  onInit(request: InitRequest): Promise<InitOk | ErrorResponse>;
  onBench(request: BenchRequest): Promise<BenchOk | ErrorResponse>;
  afterReply?(): void;
}

function writeLine(line: string): Promise<void> {
  return new Promise((resolve, reject) => {
    process.stdout.write(line + "\n", (err) => (err ? reject(err) : resolve()));
  });
}

export async function serveBackend(backend: Backend): Promise<number> {
  const hello: Hello = { type: "hello", protocol: PROTOCOL_VERSION };
  await writeLine(encodeMessage(hello));

  const emit = async (msg: Response): Promise<void> => {
    await writeLine(encodeMessage(msg));
    backend.afterReply?.();
  };

  let initialized = false;
  const rl = readline.createInterface({ input: process.stdin, terminal: false });
  for await (const raw of rl) {
    const line = raw.trim();
    if (!line) {
      continue;
    }
    let msg;
    try {
      msg = decodeRequest(line);
    } catch (exc) {
      if (exc instanceof DecodeError) {
        await emit(errorResponse(ERR_UNKNOWN_TYPE, exc.message));
        continue;
      }
      throw exc;
    }
    if (msg.type === "init") {
      if (initialized) {
        await emit(errorResponse(ERR_PROTOCOL_VIOLATION, "init sent twice"));
        continue;
      }
      const reply = await backend.onInit(msg);
      if (reply.type === "init_ok") {
        initialized = true;
      }
      await emit(reply);
    } else if (msg.type === "bench") {
      if (!initialized) {
        await emit(errorResponse(ERR_PROTOCOL_VIOLATION, "bench before init"));
        continue;
      }
      await emit(await backend.onBench(msg));
    } else {
      const bye: Bye = { type: "bye" };
      await emit(bye);
      return 0;
    }
  }
  // host closed stdin without shutdown; orderly stop
  return 0;
}
