/** Fault-injection flags on the null backend. */
import { describe, expect, it } from "vitest";

import { AdapterProcess } from "./driver";

const INIT = {
  type: "init",
  model: { block: { kind: "conv", width: 8, depth: 1 }, input_shape: [3, 244, 244] },
  compiler_id: "whatever",
  batch_size: 1,
  flags: {},
};

describe("null backend flags", () => {
  it("--throughput fixes every sample", async () => {
    const adapter = new AdapterProcess(["null", "--throughput", "100"]);
    try {
      await adapter.readJson();
      adapter.sendJson(INIT);
      const initOk = await adapter.readJson();
      expect(initOk).toMatchObject({ type: "init_ok", compile_time_s: 0 });
      adapter.sendJson({ type: "bench", repetitions: 3, warmup: 0, samples_per_repetition: 1 });
      expect((await adapter.readJson()).throughput_samples).toEqual([100, 100, 100]);
      adapter.sendJson({ type: "shutdown" });
      await adapter.readJson();
    } finally {
      if (!adapter.exited) {
        adapter.kill();
      }
    }
  });

  it("--fail-init reports an induced error", async () => {
    const adapter = new AdapterProcess(["null", "--fail-init"]);
    try {
      await adapter.readJson();
      adapter.sendJson(INIT);
      const reply = await adapter.readJson();
      expect(reply.type).toBe("error");
      expect(reply.code).toBe("init_failed");
      // init never succeeded, so bench is still out of order
      adapter.sendJson({ type: "bench", repetitions: 1, warmup: 0, samples_per_repetition: 1 });
      expect((await adapter.readJson()).code).toBe("protocol_violation");
    } finally {
      if (!adapter.exited) {
        adapter.kill();
      }
    }
  });

  it("--crash-after dies mid-session with the last reply flushed", async () => {
    const adapter = new AdapterProcess(["null", "--crash-after", "2"]);
    try {
      await adapter.readJson();
      adapter.sendJson(INIT);
      expect((await adapter.readJson()).type).toBe("init_ok");
      adapter.sendJson({ type: "bench", repetitions: 2, warmup: 0, samples_per_repetition: 1 });
      expect((await adapter.readJson()).type).toBe("bench_ok");
      expect(await adapter.waitExit()).toBe(1);
    } finally {
      if (!adapter.exited) {
        adapter.kill();
      }
    }
  });
});
