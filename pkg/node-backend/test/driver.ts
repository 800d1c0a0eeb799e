/** Spawn an adapter and talk to it line by line, with reply timeouts. */
import { ChildProcess, spawn } from "node:child_process";
import * as path from "node:path";
import * as readline from "node:readline";
import { fileURLToPath } from "node:url";

const here = path.dirname(fileURLToPath(import.meta.url));
export const CLI = path.resolve(here, "..", "dist", "cli.js");
export const TRANSCRIPTS_PATH = path.resolve(here, "..", "..", "tests", "data", "protocol_transcripts.json");

export class AdapterProcess {
  private proc: ChildProcess;
  private pending: string[] = [];
  private waiters: Array<(line: string) => void> = [];
  private exit: Promise<number | null>;

  constructor(args: string[]) {
    this.proc = spawn("node", [CLI, ...args], { stdio: ["pipe", "pipe", "inherit"] });
    const rl = readline.createInterface({ input: this.proc.stdout!, terminal: false });
    rl.on("line", (line) => {
      const waiter = this.waiters.shift();
      if (waiter) {
        waiter(line);
      } else {
        this.pending.push(line);
      }
    });
    this.exit = new Promise((resolve) => this.proc.on("exit", (code) => resolve(code)));
  }

  send(line: string): void {
    this.proc.stdin!.write(line + "\n");
  }

  sendJson(obj: unknown): void {
    this.send(JSON.stringify(obj));
  }

  async readLine(timeoutMs = 15000): Promise<string> {
    const queued = this.pending.shift();
    if (queued !== undefined) {
      return queued;
    }
    return new Promise((resolve, reject) => {
      const timer = setTimeout(() => {
        const i = this.waiters.indexOf(settle);
        if (i >= 0) {
          this.waiters.splice(i, 1);
        }
        reject(new Error(`no reply within ${timeoutMs}ms`));
      }, timeoutMs);
      const settle = (line: string) => {
        clearTimeout(timer);
        resolve(line);
      };
      this.waiters.push(settle);
    });
  }

  async readJson(timeoutMs = 15000): Promise<Record<string, unknown>> {
    return JSON.parse(await this.readLine(timeoutMs));
  }

  /** Resolves with the exit code; null if killed by signal. */
  waitExit(): Promise<number | null> {
    return this.exit;
  }

  kill(): void {
    this.proc.kill("SIGKILL");
  }

  get exited(): boolean {
    return this.proc.exitCode !== null || this.proc.signalCode !== null;
  }
}

/**
 * Transcript matcher: named fields must match, extra reply fields are fine;
 * {__gte} is a numeric lower bound, {__len,__positive} describe an array.
 */
export function matches(expect: unknown, actual: unknown): boolean {
  if (expect !== null && typeof expect === "object" && !Array.isArray(expect)) {
    const e = expect as Record<string, unknown>;
    if ("__gte" in e) {
      return typeof actual === "number" && actual >= (e.__gte as number);
    }
    if ("__len" in e) {
      if (!Array.isArray(actual) || actual.length !== e.__len) {
        return false;
      }
      if (e.__positive) {
        return actual.every((v) => typeof v === "number" && v > 0);
      }
      return true;
    }
    if (actual === null || typeof actual !== "object") {
      return false;
    }
    const a = actual as Record<string, unknown>;
    return Object.entries(e).every(([k, v]) => matches(v, a[k]));
  }
  return expect === actual;
}
