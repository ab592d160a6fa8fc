/**
 * Liveness test against the real engine: a scripted session labels full
 * batches of b=8 in serve mode, the orchestrator advances rounds, and
 * replaying a submission is idempotent.
 */

import { spawn, spawnSync, type ChildProcess } from "node:child_process";
import { mkdtempSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { httpClient } from "../src/api.js";
import { LabelingSession } from "../src/session.js";

const PYTHON = process.env.POOLFORGE_PYTHON ?? "python3";
const PORT = 38100 + (process.pid % 1000);
const BASE = `http://127.0.0.1:${PORT}`;

let loopProc: ChildProcess;
let loopExit: Promise<number | null>;
const api = httpClient(BASE);

function sleep(ms: number): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, ms));
}

async function waitFor<T>(
  fn: () => Promise<T | null>,
  what: string,
  timeoutMs = 60_000,
): Promise<T> {
  const deadline = Date.now() + timeoutMs;
  while (Date.now() < deadline) {
    try {
      const value = await fn();
      if (value !== null) {
        return value;
      }
    } catch {
      // service not up yet / transient; retry
    }
    await sleep(50);
  }
  throw new Error(`timed out waiting for ${what}`);
}

beforeAll(() => {
  const work = mkdtempSync(join(tmpdir(), "console-int-"));
  const poolDir = join(work, "pool");
  const synth = spawnSync(
    PYTHON,
    ["-m", "poolforge.cli", "synth", "--out", poolDir, "--seed", "21",
     "--classes", "4", "--per-class", "25", "--d", "16"],
    { encoding: "utf-8" },
  );
  if (synth.status !== 0) {
    throw new Error(`synth failed: ${synth.stderr}`);
  }
  loopProc = spawn(
    PYTHON,
    ["-m", "poolforge.cli", "loop", "--pool", poolDir,
     "--out", join(work, "run"), "--rounds", "2", "--initial", "16",
     "--b", "8", "--seed", "3", "--mode", "serve",
     "--bind", `127.0.0.1:${PORT}`],
    { stdio: ["ignore", "pipe", "pipe"] },
  );
  loopProc.stderr?.on("data", () => undefined);
  loopExit = new Promise((resolve) => {
    loopProc.on("exit", (code) => resolve(code));
  });
});

afterAll(() => {
  loopProc?.kill();
});

describe("serve-mode loop liveness", () => {
  it("labels two full b=8 batches and the loop completes", async () => {
    const session = new LabelingSession(api);
    await waitFor(async () => {
      await session.connect();
      return true;
    }, "service startup");
    expect(session.labelWords.length).toBe(4);

    // --- round 0 ---
    await waitFor(async () => {
      await session.refresh();
      return session.phase === "labeling" && session.round === 0 ? true : null;
    }, "round 0 batch");
    expect(session.pendingItems().length).toBe(8);
    const round0Ids = session.pendingItems().map((item) => item.id);

    // label all but one, submit, then replay the same partial payload
    const partial = round0Ids.slice(0, 7).map((id) => ({ id, label: 0 }));
    const first = await api.submitLabels(partial);
    expect(first.accepted).toEqual([...partial.map((p) => p.id)].sort((a, b) => a - b));
    expect(first.rejected).toEqual([]);

    const replay = await api.submitLabels(partial);
    expect(replay.accepted).toEqual(first.accepted);
    expect(replay.rejected).toEqual([]);
    const status = await api.status();
    expect(status.phase).toBe("labeling");
    expect(status.pending_ids).toEqual([round0Ids[7]]);

    // finish the batch through the session
    await session.refresh();
    const last = round0Ids[7]!;
    expect(session.choose(last, 1)).toBe(true);
    expect(session.readyToSubmit()).toBe(true);
    await session.submit();

    // --- the orchestrator advances to round 1 ---
    await waitFor(async () => {
      await session.refresh();
      return session.phase === "labeling" && session.round === 1 ? true : null;
    }, "round 1 batch");
    const round1Ids = session.pendingItems().map((item) => item.id);
    expect(round1Ids.length).toBe(8);
    expect(round1Ids.filter((id) => round0Ids.includes(id))).toEqual([]);

    // an id from the finished round is no longer labelable: rejected per-id
    const stale = await api.submitLabels([{ id: round0Ids[0]!, label: 0 }]);
    expect(stale.accepted).toEqual([]);
    expect(stale.rejected[0]?.reason).toMatch(/not in active batch/);

    for (const id of round1Ids) {
      expect(session.choose(id, 2)).toBe(true);
    }
    await session.submit();

    // --- loop finishes and the process exits cleanly ---
    await waitFor(async () => {
      await session.refresh();
      return session.phase === "done" ? true : null;
    }, "done phase");
    const code = await waitFor(
      async () => {
        const settled = await Promise.race([loopExit, sleep(10).then(() => "pending")]);
        return settled === "pending" ? null : (settled as number | null);
      },
      "loop exit",
    );
    expect(code).toBe(0);
  });
});
