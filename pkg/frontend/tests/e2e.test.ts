// End-to-end against a live session server: synthesize a 200-point
// dataset, launch the server, then drive connect, pick, slider, one
// deselect, and apply through the real client. Counter assertions check
// the server deltas (3 actions, labels equal to the selection size) and
// the displayed counters are compared against the exported ActionLog.

import { execFileSync, spawn } from "node:child_process";
import type { ChildProcess } from "node:child_process";
import { mkdtempSync, rmSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { afterAll, beforeAll, expect, test } from "vitest";
import { WebSocket } from "ws";
import { SessionClient } from "../src/client.js";
import type { SocketLike } from "../src/client.js";
import type { Frame } from "../src/protocol.js";
import { SessionView } from "../src/state.js";

const PORT = 18000 + Math.floor(Math.random() * 2000);
const BASE = `http://127.0.0.1:${PORT}`;

let root = "";
let server: ChildProcess | null = null;

async function waitForHealth(timeoutMs: number): Promise<void> {
    const deadline = Date.now() + timeoutMs;
    let lastError: unknown = null;
    while (Date.now() < deadline) {
        try {
            const resp = await fetch(`${BASE}/health`);
            if (resp.ok) {
                return;
            }
        } catch (err) {
            lastError = err;
        }
        await new Promise((r) => setTimeout(r, 250));
    }
    throw new Error(`server not healthy after ${timeoutMs} ms: ${lastError}`);
}

async function waitFor(cond: () => boolean, timeoutMs = 20_000): Promise<void> {
    const deadline = Date.now() + timeoutMs;
    while (!cond()) {
        if (Date.now() > deadline) {
            throw new Error("timed out waiting for condition");
        }
        await new Promise((r) => setTimeout(r, 50));
    }
}

beforeAll(async () => {
    root = mkdtempSync(join(tmpdir(), "sstsne-ui-"));
    execFileSync("sstsne", [
        "synth", "--out", join(root, "demo"), "--classes", "4",
        "--per-class", "50", "--dim", "16", "--separation", "12.0",
        "--noise", "1.0", "--seed", "3",
    ]);
    server = spawn("sstsne", ["serve", "--data", root, "--port", String(PORT)],
                   { stdio: "ignore" });
    await waitForHealth(60_000);
}, 90_000);

afterAll(() => {
    server?.kill();
    if (root) {
        rmSync(root, { recursive: true, force: true });
    }
});

test("connect, pick, slider, deselect, apply on a live 200-point session", async () => {
    const client = new SessionClient(
        BASE, (url) => new WebSocket(url) as unknown as SocketLike);
    const view = new SessionView();

    const datasets = await client.datasets();
    expect(datasets.map((d) => d.name)).toContain("demo");

    view.applySummary(await client.createSession("demo", {
        out_dims: 2, perplexity: 10.0, s: 10, e_max: 60,
        alpha_epochs: [8, 16], seed: 0,
    }));
    expect(view.n).toBe(200);
    expect(view.classNames).toHaveLength(4);

    // connect: the first frame is a full snapshot
    const frames: Frame[] = [];
    const stream = client.stream(view.id, (f) => {
        frames.push(f);
        view.applyFrame(f);
    });
    await waitFor(() => frames.length >= 1);
    expect(frames[0].epoch).toBe(0);
    expect(frames[0].n).toBe(200);
    expect(frames[0].dims).toBe(2);
    expect(frames[0].deltas).toEqual([]);

    view.applySummary(await client.control(view.id, "step", 15));
    expect(view.epoch).toBe(15);
    await waitFor(() => frames.length >= 16);
    expect(frames[15].epoch).toBe(15);

    view.applySummary(await client.summary(view.id, true));
    expect(view.kl).not.toBeNull();
    expect(view.kl!).toBeGreaterThan(0);

    const base = { ...view.counters };
    expect(base).toEqual({ labels: 0, actions: 0 });

    // pick
    view.recordAction(await client.selectFocus(view.id, 5));
    expect(view.focus).toBe(5);
    expect(view.selection).toEqual([5]);
    expect(view.counters.actions).toBe(base.actions + 1);

    // slider: the first set charges one action, re-adjustments are free
    view.recordAction(await client.setK(view.id, 8));
    expect(view.neighbors).toHaveLength(8);
    expect(view.selection).toHaveLength(9);
    view.recordAction(await client.setK(view.id, 8));
    expect(view.counters.actions).toBe(base.actions + 2);

    // deselect one neighbor
    const victim = view.selection.find((j) => j !== view.focus)!;
    view.recordAction(await client.deselect(view.id, victim));
    expect(view.selection).toHaveLength(8);
    expect(view.selection).not.toContain(victim);
    expect(view.counters.actions).toBe(base.actions + 3);

    // the mirrored selection agrees with a fresh server summary
    const fresh = await client.summary(view.id);
    expect(view.selection).toEqual(fresh.selection);

    // apply: every selected point is unlabeled, so labels grow by the
    // selection size
    const selected = [...view.selection].sort((a, b) => a - b);
    expect(view.canApply).toBe(true);
    const applied = await client.applyLabel(view.id, 1);
    view.recordAction(applied);
    expect(applied.written).toBe(selected.length);
    expect(view.counters).toEqual({ labels: base.labels + 8,
                                    actions: base.actions + 3 });
    expect(view.nLabeled).toBe(8);

    // the event is closed: apply is disabled client-side and rejected
    // server-side
    expect(view.canApply).toBe(false);
    await expect(client.applyLabel(view.id, 1))
        .rejects.toMatchObject({ status: 409 });

    // the next streamed frame carries the labeled points
    const before = frames.length;
    view.applySummary(await client.control(view.id, "step", 1));
    await waitFor(() => frames.length > before);
    const deltas = frames.slice(before).flatMap((f) => f.deltas);
    expect(deltas.map((d) => d.index).sort((a, b) => a - b)).toEqual(selected);
    expect(new Set(deltas.map((d) => d.classId))).toEqual(new Set([1]));
    let labeled = 0;
    for (let i = 0; i < view.n; i++) {
        if (view.labels[i] === 1) {
            labeled += 1;
        }
    }
    expect(labeled).toBe(8);

    // displayed counters equal the exported ActionLog
    const exported = await client.exportSession(view.id);
    expect(exported.counters).toEqual(view.counters);
    const rows = exported.action_log_csv.trim().split("\n")
        .map((line) => line.split(","));
    expect(rows[0]).toEqual(["epoch", "focus", "chosen_k", "labels", "actions",
                             "cumulative_labels", "cumulative_actions"]);
    const last = rows[rows.length - 1];
    expect(Number(last[5])).toBe(view.counters.labels);
    expect(Number(last[6])).toBe(view.counters.actions);

    // the labels export lists exactly the applied samples
    const labelLines = exported.labels_tsv.trim().split("\n").slice(1);
    expect(labelLines.map((line) => Number(line.split("\t")[0]))
        .sort((a, b) => a - b)).toEqual(selected);

    stream.close();
    await client.deleteSession(view.id);
    await expect(client.summary(view.id)).rejects.toMatchObject({ status: 404 });
}, 120_000);
