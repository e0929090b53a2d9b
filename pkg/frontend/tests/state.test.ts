// Session view model: server payloads are mirrored verbatim, stream
// deltas accumulate into per-point labels, and the apply control is
// driven purely by the mirrored selection.

import { describe, expect, test } from "vitest";
import type { Frame, SessionSummary } from "../src/protocol.js";
import { DEFAULT_PALETTE, SessionView, UNLABELED_COLOR } from "../src/state.js";

function summary(overrides: Partial<SessionSummary> = {}): SessionSummary {
    return {
        id: "abc123",
        dataset: "demo",
        n: 6,
        out_dims: 2,
        epoch: 3,
        e_max: 40,
        running: false,
        counters: { labels: 0, actions: 0 },
        focus: null,
        k: null,
        selection: [],
        n_labeled: 0,
        class_names: ["a", "b", "c"],
        ...overrides,
    };
}

function frame(overrides: Partial<Frame> = {}): Frame {
    return {
        epoch: 5,
        n: 6,
        dims: 2,
        positions: new Float32Array(12),
        deltas: [],
        ...overrides,
    };
}

describe("applySummary", () => {
    test("mirrors counters, focus, and selection from the payload", () => {
        const view = new SessionView();
        view.applySummary(summary({
            epoch: 7,
            counters: { labels: 4, actions: 9 },
            focus: 2,
            k: 3,
            selection: [2, 0, 5],
            n_labeled: 4,
        }));
        expect(view.epoch).toBe(7);
        expect(view.counters).toEqual({ labels: 4, actions: 9 });
        expect(view.focus).toBe(2);
        expect(view.k).toBe(3);
        expect(view.selection).toEqual([2, 0, 5]);
        expect(view.nLabeled).toBe(4);
        expect(view.isSelected(5)).toBe(true);
        expect(view.isSelected(1)).toBe(false);
    });

    test("does not alias payload arrays", () => {
        const view = new SessionView();
        const s = summary({ selection: [1, 2] });
        view.applySummary(s);
        s.selection.push(99);
        s.counters.labels = 99;
        expect(view.selection).toEqual([1, 2]);
        expect(view.counters.labels).toBe(0);
    });

    test("keeps neighbors from the last set_k ack and clears them when the focus closes", () => {
        const view = new SessionView();
        view.applySummary(summary({ focus: 0, k: 2, selection: [0, 3, 4],
                                    neighbors: [3, 4] }));
        expect(view.neighbors).toEqual([3, 4]);
        view.applySummary(summary({ focus: 0, k: 2, selection: [0, 3, 4] }));
        expect(view.neighbors).toEqual([3, 4]);
        view.applySummary(summary());
        expect(view.neighbors).toEqual([]);
    });

    test("keeps kl once fetched", () => {
        const view = new SessionView();
        view.applySummary(summary({ kl: 1.25 }));
        view.applySummary(summary());
        expect(view.kl).toBe(1.25);
    });
});

describe("apply gating", () => {
    test("apply is enabled exactly when the mirrored selection is nonempty", () => {
        const view = new SessionView();
        view.applySummary(summary());
        expect(view.canApply).toBe(false);
        view.applySummary(summary({ focus: 1, selection: [1] }));
        expect(view.canApply).toBe(true);
        view.applySummary(summary());
        expect(view.canApply).toBe(false);
    });
});

describe("recordAction", () => {
    test("appends one counter snapshot per acknowledged action", () => {
        const view = new SessionView();
        view.recordAction(summary({ counters: { labels: 0, actions: 1 } }));
        view.recordAction(summary({ counters: { labels: 0, actions: 2 } }));
        view.recordAction(summary({ counters: { labels: 5, actions: 3 } }));
        expect(view.efficiency).toEqual([
            { labels: 0, actions: 1 },
            { labels: 0, actions: 2 },
            { labels: 5, actions: 3 },
        ]);
    });
});

describe("applyFrame", () => {
    test("replaces positions and accumulates label deltas across frames", () => {
        const view = new SessionView();
        view.applyFrame(frame({ deltas: [{ index: 1, classId: 2 }] }));
        expect(view.epoch).toBe(5);
        expect([...view.labels]).toEqual([-1, 2, -1, -1, -1, -1]);
        const moved = new Float32Array(12).fill(3.5);
        view.applyFrame(frame({ epoch: 6, positions: moved,
                                deltas: [{ index: 0, classId: 0 }] }));
        expect(view.epoch).toBe(6);
        expect(view.positions).toBe(moved);
        expect([...view.labels]).toEqual([0, 2, -1, -1, -1, -1]);
    });
});

describe("palette", () => {
    test("unlabeled points are gray; labeled points take class colors", () => {
        const view = new SessionView();
        view.applySummary(summary());
        view.applyFrame(frame({ deltas: [{ index: 2, classId: 1 }] }));
        expect(view.colorOf(0)).toBe(UNLABELED_COLOR);
        expect(view.colorOf(2)).toBe(DEFAULT_PALETTE[1]);
    });

    test("colors are editable per class", () => {
        const view = new SessionView();
        view.applySummary(summary());
        view.setColor(1, "#123456");
        view.applyFrame(frame({ deltas: [{ index: 2, classId: 1 }] }));
        expect(view.colorOf(2)).toBe("#123456");
    });
});

describe("ringRadius", () => {
    test("is the focus distance to the k-th ranked neighbor", () => {
        const view = new SessionView();
        view.applySummary(summary({ focus: 0, k: 2, selection: [0, 1, 2],
                                    neighbors: [1, 2] }));
        view.applyFrame(frame({
            positions: new Float32Array([0, 0, 1, 0, 3, 4, 9, 9, 9, 9, 9, 9]),
        }));
        expect(view.ringRadius()).toBeCloseTo(5.0, 12);
    });

    test("is null without a focus or before positions arrive", () => {
        const view = new SessionView();
        expect(view.ringRadius()).toBeNull();
        view.applySummary(summary({ focus: 0, k: 1, selection: [0, 1],
                                    neighbors: [1] }));
        expect(view.ringRadius()).toBeNull();
    });
});
