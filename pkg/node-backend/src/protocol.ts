/**
 * Adapter wire protocol v1: newline-delimited JSON over stdin/stdout.
 *
 * The host speaks init -> bench* -> shutdown; the adapter answers each
 * request with exactly one init_ok / bench_ok / error and answers shutdown
 * with bye. Any line that cannot be decoded into a known request gets an
 * error reply with code "unknown_type"; ordering violations (double init,
 * bench before init) get "protocol_violation".
 */
import { z } from "zod";

export const PROTOCOL_VERSION = 1;

export const ERR_PROTOCOL_VIOLATION = "protocol_violation";
export const ERR_UNKNOWN_TYPE = "unknown_type";
export const ERR_UNKNOWN_COMPILER = "unknown_compiler";
export const ERR_INIT_FAILED = "init_failed";
export const ERR_BENCH_FAILED = "bench_failed";

const blockSchema = z.object({
  kind: z.enum(["conv", "mha"]),
  width: z.number().int().min(1),
  depth: z.number().int().min(1),
});

// exactly one of catalog/block identifies the model
export const modelSchema = z
  .object({
    catalog: z.string().min(1).optional(),
    block: blockSchema.optional(),
    input_shape: z.array(z.number().int().min(1)).min(1),
    init_params: z.record(z.string(), z.string()).optional(),
  })
  .refine((m) => (m.catalog === undefined) !== (m.block === undefined), {
    message: "model must set exactly one of catalog/block",
  });

export type ModelSpec = z.infer<typeof modelSchema>;
export type BlockSpec = z.infer<typeof blockSchema>;

const initSchema = z.object({
  type: z.literal("init"),
  model: modelSchema,
  compiler_id: z.string().min(1),
  batch_size: z.number().int().min(1),
  flags: z.record(z.string(), z.string()).default({}),
});

const benchSchema = z.object({
  type: z.literal("bench"),
  repetitions: z.number().int().min(1),
  warmup: z.number().int().min(0).default(0),
  samples_per_repetition: z.number().int().min(1).default(1),
});

const shutdownSchema = z.object({ type: z.literal("shutdown") });

export type InitRequest = z.infer<typeof initSchema>;
export type BenchRequest = z.infer<typeof benchSchema>;
export type ShutdownRequest = z.infer<typeof shutdownSchema>;
export type Request = InitRequest | BenchRequest | ShutdownRequest;

export interface InitOk {
  type: "init_ok";
  compile_time_s: number;
}

export interface BenchOk {
  type: "bench_ok";
  throughput_samples: number[];
}

export interface ErrorResponse {
  type: "error";
  code: string;
  message: string;
}

export interface Bye {
  type: "bye";
}

export interface Hello {
  type: "hello";
  protocol: number;
}

export type Response = InitOk | BenchOk | ErrorResponse | Bye;

/** A line that cannot become any known request message. */
export class DecodeError extends Error {}

export function decodeRequest(line: string): Request {
  let obj: unknown;
  try {
    obj = JSON.parse(line);
  } catch {
    throw new DecodeError(`not valid JSON: ${line}`);
  }
  if (typeof obj !== "object" || obj === null || !("type" in obj)) {
    throw new DecodeError(`message must be an object with a 'type': ${line}`);
  }
  const mtype = (obj as { type: unknown }).type;
  const schema =
    mtype === "init" ? initSchema : mtype === "bench" ? benchSchema : mtype === "shutdown" ? shutdownSchema : null;
  if (schema === null) {
    throw new DecodeError(`unknown message type ${JSON.stringify(mtype)}`);
  }
  const parsed = schema.safeParse(obj);
  if (!parsed.success) {
    throw new DecodeError(`malformed ${String(mtype)} message: ${parsed.error.issues[0]?.message}`);
  }
  return parsed.data;
}

export function encodeMessage(msg: Hello | Response): string {
  return JSON.stringify(msg);
}

export function errorResponse(code: string, message: string): ErrorResponse {
  return { type: "error", code, message };
}
