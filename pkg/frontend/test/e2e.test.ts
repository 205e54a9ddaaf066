// Scripted session against the real service: one 30-pair block with all four
// choice types, dataset and blinding checks against the server's own log,
// and a mid-block reload that resumes the same pair.

import { spawn, type ChildProcess } from "node:child_process";
import { mkdtempSync, readFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { ApiClient } from "../src/api.js";
import { SessionController } from "../src/session.js";
import type { Choice } from "../src/types.js";
import { FakePlayer } from "./mock_server.js";

const PORT = 18342;
const BASE = `http://127.0.0.1:${PORT}`;

let server: ChildProcess;
let runDir: string;

async function waitForServer(timeoutMs = 90_000): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  for (;;) {
    try {
      const resp = await fetch(`${BASE}/progress?session=warmup-probe`);
      if (resp.status === 404) return; // service is answering
    } catch {
      // not listening yet
    }
    if (Date.now() > deadline) throw new Error("service did not come up");
    await new Promise((r) => setTimeout(r, 250));
  }
}

beforeAll(async () => {
  runDir = mkdtempSync(join(tmpdir(), "prefcomp-ui-e2e-"));
  server = spawn(
    "python3",
    [
      "-m", "prefcomp.cli", "serve",
      "--port", String(PORT),
      "--host", "127.0.0.1",
      "--run", runDir,
      "--demo-pairs", "30",
      "--pairs-per-block", "30",
      "--blocks", "7",
      "--seed", "3",
    ],
    { stdio: ["ignore", "pipe", "pipe"], cwd: join(__dirname, "..", "..") },
  );
  server.stderr?.on("data", () => {});
  await waitForServer();
}, 120_000);

afterAll(() => {
  server?.kill("SIGTERM");
});

describe("scripted session against the live service", () => {
  it("completes a 30-pair block with correct dataset and blinding", async () => {
    const api = new ApiClient({ baseUrl: BASE, retries: 2, backoffMs: 100 });
    let controller = new SessionController(api, new FakePlayer());

    let state = await controller.start();
    expect(state.kind).toBe("pair");
    const sessionId = controller.sessionId!;

    // all four choice types across the block: 8 A, 8 B, 7 EQUAL, 7 NEITHER
    const script: Choice[] = [];
    for (let i = 0; i < 30; i++) script.push((["A", "B", "EQUAL", "NEITHER"] as const)[i % 4]!);
    const submitted = new Map<string, Choice>();

    for (let i = 0; i < 30; i++) {
      if (state.kind !== "pair") throw new Error(`expected a pair at step ${i}, got ${state.kind}`);

      if (i === 12) {
        // reload mid-pair: a fresh controller resumes the same session and
        // must land on the same unlabeled pair
        const before = state.pair.pairId;
        controller = new SessionController(api, new FakePlayer());
        state = await controller.resume(sessionId);
        if (state.kind !== "pair") throw new Error("resume lost the pair");
        expect(state.pair.pairId).toBe(before);
      }

      // audio endpoints serve playable WAVs of equal length for both sides
      if (i === 0) {
        const [a, b] = await Promise.all([
          fetch(BASE + state.pair.audioA),
          fetch(BASE + state.pair.audioB),
        ]);
        expect(a.headers.get("content-type")).toBe("audio/wav");
        const [bytesA, bytesB] = [await a.arrayBuffer(), await b.arrayBuffer()];
        expect(bytesA.byteLength).toBe(bytesB.byteLength);
        expect(new TextDecoder().decode(bytesA.slice(0, 4))).toBe("RIFF");
      }

      await controller.play("A");
      await controller.play("B");
      const choice = script[i]!;
      submitted.set(state.pair.pairId, choice);
      state = await controller.submit(choice);
    }

    // block finished: server-side position agrees
    const progress = await api.getProgress(sessionId);
    expect(progress.labeled).toBe(30);
    expect(progress.break_due).toBe(true);
    expect(state.kind).toBe("round_complete"); // demo round holds exactly one block

    // the server dataset grew by exactly the non-NEITHER count...
    const logLines = readFileSync(join(runDir, "feedback_log.jsonl"), "utf8")
      .split("\n")
      .filter((line) => line.trim().length > 0)
      .map((line) => JSON.parse(line) as {
        pair: string;
        choice: Choice;
        swap: boolean;
        server_order_mu: [number, number] | null;
      });
    expect(logLines).toHaveLength(30);
    const datasetSize = logLines.filter((r) => r.server_order_mu !== null).length;
    const neitherCount = [...submitted.values()].filter((c) => c === "NEITHER").length;
    expect(datasetSize).toBe(30 - neitherCount);

    // ...and every stored label is the submitted choice with the blinded
    // side order inverted
    for (const record of logLines) {
      const choice = submitted.get(record.pair);
      expect(choice).toBe(record.choice);
      if (choice === "NEITHER") {
        expect(record.server_order_mu).toBeNull();
      } else if (choice === "EQUAL") {
        expect(record.server_order_mu).toEqual([0.5, 0.5]);
      } else {
        const preferredFirst = (choice === "A") !== record.swap;
        expect(record.server_order_mu).toEqual(preferredFirst ? [1, 0] : [0, 1]);
      }
    }
    // both side orders actually occurred under the seed
    expect(logLines.some((r) => r.swap)).toBe(true);
    expect(logLines.some((r) => !r.swap)).toBe(true);
  }, 120_000);
});
