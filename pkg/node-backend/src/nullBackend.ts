/**
 * Constant-throughput backend for protocol conformance and fault drills.
 *
 * Never touches a tensor: init always succeeds instantly (unless told not
 * to) and bench returns the flag-specified throughput for every repetition,
 * so tests exercise the wire behavior and nothing else.
 */
import {
  BenchOk,
  BenchRequest,
  ERR_INIT_FAILED,
  ErrorResponse,
  InitOk,
  InitRequest,
  errorResponse,
} from "./protocol";
import { Backend } from "./serve";

export interface NullBackendOptions {
  throughput: number;
  failInit: boolean;
  crashAfter: number | null;
  sleepInitMs: number;
  sleepBenchMs: number;
}

export const NULL_DEFAULTS: NullBackendOptions = {
  throughput: 100,
  failInit: false,
  crashAfter: null,
  sleepInitMs: 0,
  sleepBenchMs: 0,
};

const sleep = (ms: number) => new Promise((r) => setTimeout(r, ms));

export class NullBackend implements Backend {
  private replies = 0;

  constructor(private options: NullBackendOptions) {}

  async onInit(_request: InitRequest): Promise<InitOk | ErrorResponse> {
    if (this.options.sleepInitMs > 0) {
      await sleep(this.options.sleepInitMs);
    }
    if (this.options.failInit) {
      return errorResponse(ERR_INIT_FAILED, "induced init failure");
    }
    return { type: "init_ok", compile_time_s: 0 };
  }

  async onBench(request: BenchRequest): Promise<BenchOk | ErrorResponse> {
    if (this.options.sleepBenchMs > 0) {
      await sleep(this.options.sleepBenchMs);
    }
    return {
      type: "bench_ok",
      throughput_samples: new Array<number>(request.repetitions).fill(this.options.throughput),
    };
  }

  afterReply(): void {
    this.replies += 1;
    if (this.options.crashAfter !== null && this.replies >= this.options.crashAfter) {
      // simulated hard crash: no bye, nonzero exit (the reply is flushed)
      process.exit(1);
    }
  }
}
