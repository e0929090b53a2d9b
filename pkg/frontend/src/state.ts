// Client-side session view model.
//
// Counters, focus, selection, and neighbor ranks are verbatim mirrors of
// the most recent server payload; the view never computes its own
// accounting. Only presentation state lives here: palette colors, the
// efficiency series, and per-point labels replayed from stream deltas.

import type { Counters, Frame, SessionSummary } from "./protocol.js";

export const DEFAULT_PALETTE = [
    "#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f",
    "#edc948", "#b07aa1", "#ff9da7", "#9c755f", "#bab0ac",
];
export const UNLABELED_COLOR = "#52525b";

export class SessionView {
    id = "";
    dataset = "";
    n = 0;
    dims = 2;
    epoch = 0;
    eMax = 0;
    running = false;
    counters: Counters = { labels: 0, actions: 0 };
    focus: number | null = null;
    k: number | null = null;
    selection: number[] = [];
    nLabeled = 0;
    kl: number | null = null;
    classNames: string[] = [];
    colors: string[] = [];
    neighbors: number[] = [];
    positions: Float32Array = new Float32Array(0);
    labels: Int32Array = new Int32Array(0);
    efficiency: Counters[] = [];

    applySummary(s: SessionSummary): void {
        this.id = s.id;
        this.dataset = s.dataset;
        this.n = s.n;
        this.dims = s.out_dims;
        this.epoch = s.epoch;
        this.eMax = s.e_max;
        this.running = s.running;
        this.counters = { ...s.counters };
        this.focus = s.focus;
        this.k = s.k;
        this.selection = [...s.selection];
        this.nLabeled = s.n_labeled;
        if (s.kl !== undefined) {
            this.kl = s.kl;
        }
        if (this.classNames.length === 0 && s.class_names.length > 0) {
            this.classNames = [...s.class_names];
            this.colors = this.classNames.map(
                (_, i) => DEFAULT_PALETTE[i % DEFAULT_PALETTE.length]);
        }
        if (s.neighbors !== undefined) {
            this.neighbors = [...s.neighbors];
        }
        if (s.focus === null) {
            this.neighbors = [];
        }
        if (this.labels.length !== s.n) {
            this.labels = new Int32Array(s.n).fill(-1);
        }
    }

    // An acknowledged labeling action: mirror the summary and take a
    // counter snapshot for the efficiency chart.
    recordAction(s: SessionSummary): void {
        this.applySummary(s);
        this.efficiency.push({ ...s.counters });
    }

    applyFrame(f: Frame): void {
        this.epoch = f.epoch;
        this.n = f.n;
        this.dims = f.dims;
        this.positions = f.positions;
        if (this.labels.length !== f.n) {
            this.labels = new Int32Array(f.n).fill(-1);
        }
        for (const d of f.deltas) {
            this.labels[d.index] = d.classId;
        }
    }

    get canApply(): boolean {
        return this.selection.length > 0;
    }

    isSelected(i: number): boolean {
        return this.selection.includes(i);
    }

    colorOf(i: number): string {
        const c = i < this.labels.length ? this.labels[i] : -1;
        if (c < 0 || this.colors.length === 0) {
            return UNLABELED_COLOR;
        }
        return this.colors[c % this.colors.length];
    }

    setColor(classId: number, color: string): void {
        if (classId >= 0 && classId < this.colors.length) {
            this.colors[classId] = color;
        }
    }

    point(i: number): number[] {
        const out: number[] = [];
        for (let a = 0; a < this.dims; a++) {
            out.push(this.positions[i * this.dims + a]);
        }
        return out;
    }

    // Radius of the selection ring: distance from the focus to the k-th
    // ranked neighbor, in embedding units.
    ringRadius(): number | null {
        if (this.focus === null || this.neighbors.length === 0
                || this.positions.length < this.n * this.dims) {
            return null;
        }
        const f = this.point(this.focus);
        const p = this.point(this.neighbors[this.neighbors.length - 1]);
        let d2 = 0;
        for (let a = 0; a < this.dims; a++) {
            d2 += (f[a] - p[a]) ** 2;
        }
        return Math.sqrt(d2);
    }
}
