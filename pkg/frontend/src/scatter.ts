// Canvas scatter renderer.
//
// Draws the embedding with per-class colors, outlines the current
// selection, marks the focus, and draws the kNN selection ring sized to
// the k-th neighbor distance. 3-D sessions are drawn through a
// drag-to-rotate orthographic projection; 2-D sessions ignore rotation.

import type { SessionView } from "./state.js";

const POINT_RADIUS = 3;
const PICK_RADIUS = 8;
const MARGIN = 24;

export class ScatterRenderer {
    private yaw = 0.6;
    private pitch = 0.35;
    private sx = new Float32Array(0);
    private sy = new Float32Array(0);
    private scale = 1;
    private dragging = false;
    private moved = 0;
    private lastX = 0;
    private lastY = 0;

    constructor(private readonly canvas: HTMLCanvasElement) {
        canvas.addEventListener("pointerdown", (e) => {
            this.dragging = true;
            this.moved = 0;
            this.lastX = e.clientX;
            this.lastY = e.clientY;
        });
        window.addEventListener("pointermove", (e) => {
            if (!this.dragging) {
                return;
            }
            const dx = e.clientX - this.lastX;
            const dy = e.clientY - this.lastY;
            this.moved += Math.abs(dx) + Math.abs(dy);
            this.yaw += dx * 0.01;
            this.pitch += dy * 0.01;
            this.lastX = e.clientX;
            this.lastY = e.clientY;
        });
        window.addEventListener("pointerup", () => {
            this.dragging = false;
        });
    }

    // Cumulative pointer travel of the last drag, used to tell a rotation
    // gesture apart from a pick click.
    dragDistance(): number {
        return this.moved;
    }

    private rotate(view: SessionView, i: number): [number, number] {
        const px = view.positions[i * view.dims];
        const py = view.positions[i * view.dims + 1];
        if (view.dims < 3) {
            return [px, py];
        }
        const pz = view.positions[i * view.dims + 2];
        const cy = Math.cos(this.yaw);
        const sy = Math.sin(this.yaw);
        const cp = Math.cos(this.pitch);
        const sp = Math.sin(this.pitch);
        const x1 = cy * px + sy * pz;
        const z1 = cy * pz - sy * px;
        return [x1, cp * py - sp * z1];
    }

    render(view: SessionView): void {
        const ctx = this.canvas.getContext("2d");
        if (!ctx) {
            return;
        }
        const w = this.canvas.width;
        const h = this.canvas.height;
        ctx.clearRect(0, 0, w, h);
        const n = view.n;
        if (n === 0 || view.positions.length < n * view.dims) {
            this.sx = new Float32Array(0);
            this.sy = new Float32Array(0);
            return;
        }

        if (this.sx.length !== n) {
            this.sx = new Float32Array(n);
            this.sy = new Float32Array(n);
        }
        let minX = Infinity;
        let maxX = -Infinity;
        let minY = Infinity;
        let maxY = -Infinity;
        for (let i = 0; i < n; i++) {
            const [x, y] = this.rotate(view, i);
            this.sx[i] = x;
            this.sy[i] = y;
            if (x < minX) minX = x;
            if (x > maxX) maxX = x;
            if (y < minY) minY = y;
            if (y > maxY) maxY = y;
        }
        const spanX = Math.max(maxX - minX, 1e-12);
        const spanY = Math.max(maxY - minY, 1e-12);
        this.scale = Math.min((w - 2 * MARGIN) / spanX, (h - 2 * MARGIN) / spanY);
        const offX = (w - this.scale * (minX + maxX)) / 2;
        const offY = (h + this.scale * (minY + maxY)) / 2;
        for (let i = 0; i < n; i++) {
            this.sx[i] = offX + this.scale * this.sx[i];
            this.sy[i] = offY - this.scale * this.sy[i];
        }

        const radius = view.ringRadius();
        if (radius !== null && view.focus !== null) {
            // Orthographic rotation preserves distances, so the projected
            // kNN sphere stays a circle of the embedding-space radius.
            ctx.beginPath();
            ctx.arc(this.sx[view.focus], this.sy[view.focus],
                    radius * this.scale, 0, 2 * Math.PI);
            ctx.strokeStyle = "rgba(148, 163, 184, 0.8)";
            ctx.lineWidth = 1;
            ctx.setLineDash([4, 4]);
            ctx.stroke();
            ctx.setLineDash([]);
        }

        const selected = new Set(view.selection);
        for (let i = 0; i < n; i++) {
            ctx.beginPath();
            ctx.arc(this.sx[i], this.sy[i], POINT_RADIUS, 0, 2 * Math.PI);
            ctx.fillStyle = view.colorOf(i);
            ctx.fill();
            if (selected.has(i)) {
                ctx.strokeStyle = "#f8fafc";
                ctx.lineWidth = 1.5;
                ctx.stroke();
            }
        }
        if (view.focus !== null) {
            ctx.beginPath();
            ctx.arc(this.sx[view.focus], this.sy[view.focus],
                    POINT_RADIUS + 3, 0, 2 * Math.PI);
            ctx.strokeStyle = "#fbbf24";
            ctx.lineWidth = 2;
            ctx.stroke();
        }
    }

    // Nearest sample within the pick radius of a client-space position,
    // using the projection from the last render.
    pick(clientX: number, clientY: number): number | null {
        if (this.sx.length === 0) {
            return null;
        }
        const rect = this.canvas.getBoundingClientRect();
        const x = (clientX - rect.left) * (this.canvas.width / rect.width);
        const y = (clientY - rect.top) * (this.canvas.height / rect.height);
        let best = -1;
        let bestD2 = PICK_RADIUS * PICK_RADIUS;
        for (let i = 0; i < this.sx.length; i++) {
            const d2 = (this.sx[i] - x) ** 2 + (this.sy[i] - y) ** 2;
            if (d2 <= bestD2) {
                bestD2 = d2;
                best = i;
            }
        }
        return best >= 0 ? best : null;
    }
}
