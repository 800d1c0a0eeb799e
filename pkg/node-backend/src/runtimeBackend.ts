/**
 * Real-measurement backend over tfjs eager execution (the identity path:
 * no graph compiler, so reported compile time is just model realization).
 *
 * tfjs is imported inside onInit, not at module load, so running this
 * executable in null mode or printing --help never pays the runtime import.
 */
import {
  BenchOk,
  BenchRequest,
  ERR_INIT_FAILED,
  ERR_UNKNOWN_COMPILER,
  ErrorResponse,
  InitOk,
  InitRequest,
  errorResponse,
} from "./protocol";
import { RealizedModel, realizeModel } from "./runtime";
import { Backend } from "./serve";

type TF = typeof import("@tensorflow/tfjs");

/** Compilers this backend can actually provide. */
export const SUPPORTED_COMPILERS = ["identity"];

export class RuntimeBackend implements Backend {
  private t: TF | null = null;
  private model: RealizedModel | null = null;
  private batchSize = 1;

  async onInit(request: InitRequest): Promise<InitOk | ErrorResponse> {
    if (!SUPPORTED_COMPILERS.includes(request.compiler_id)) {
      return errorResponse(
        ERR_UNKNOWN_COMPILER,
        `this backend provides ${SUPPORTED_COMPILERS.join(", ")}, not '${request.compiler_id}'`,
      );
    }
    if (request.model.block === undefined) {
      return errorResponse(
        ERR_INIT_FAILED,
        `catalog model '${request.model.catalog}' needs an exported artifact; only block stacks are realized here`,
      );
    }
    const t = await import("@tensorflow/tfjs");
    await t.setBackend("cpu");
    await t.ready();
    // the import above is environment setup; compile time covers realization
    const started = process.hrtime.bigint();
    try {
      this.model = realizeModel(t, request.model);
    } catch (exc) {
      return errorResponse(ERR_INIT_FAILED, String(exc));
    }
    this.t = t;
    this.batchSize = request.batch_size;
    const compileSeconds = Number(process.hrtime.bigint() - started) / 1e9;
    return { type: "init_ok", compile_time_s: compileSeconds };
  }

  async onBench(request: BenchRequest): Promise<BenchOk | ErrorResponse> {
    const t = this.t;
    const model = this.model;
    if (t === null || model === null) {
      return errorResponse(ERR_INIT_FAILED, "bench without a realized model");
    }
    // inputs are materialized before the timed window; we measure inference
    const input = model.makeInput(this.batchSize);
    const runOnce = () => {
      t.tidy(() => {
        const out = model.forward(input);
        out.dataSync(); // force execution
        return out;
      });
    };
    for (let i = 0; i < request.warmup; i++) {
      runOnce();
    }
    const samples: number[] = [];
    for (let rep = 0; rep < request.repetitions; rep++) {
      const started = process.hrtime.bigint();
      for (let j = 0; j < request.samples_per_repetition; j++) {
        runOnce();
      }
      const elapsedNs = Number(process.hrtime.bigint() - started);
      const seconds = Math.max(elapsedNs, 1) / 1e9;
      samples.push((this.batchSize * request.samples_per_repetition) / seconds);
    }
    input.dispose();
    return { type: "bench_ok", throughput_samples: samples };
  }
}
