// Labels-vs-actions efficiency chart, drawn from the server counter
// snapshots taken after each acknowledged action.

import type { Counters } from "./protocol.js";

const PAD = 28;

export function drawEfficiency(canvas: HTMLCanvasElement,
                               series: Counters[]): void {
    const ctx = canvas.getContext("2d");
    if (!ctx) {
        return;
    }
    const w = canvas.width;
    const h = canvas.height;
    ctx.clearRect(0, 0, w, h);

    ctx.strokeStyle = "#3f3f46";
    ctx.lineWidth = 1;
    ctx.beginPath();
    ctx.moveTo(PAD, 8);
    ctx.lineTo(PAD, h - PAD);
    ctx.lineTo(w - 8, h - PAD);
    ctx.stroke();

    ctx.fillStyle = "#a1a1aa";
    ctx.font = "10px sans-serif";
    ctx.fillText("labels", 4, 12);
    ctx.fillText("actions", w - 44, h - 8);

    if (series.length === 0) {
        return;
    }
    // Counters are cumulative, so the last snapshot bounds both axes.
    const last = series[series.length - 1];
    const maxA = Math.max(1, last.actions);
    const maxL = Math.max(1, last.labels);
    const toX = (a: number): number => PAD + (a / maxA) * (w - PAD - 8);
    const toY = (l: number): number => h - PAD - (l / maxL) * (h - PAD - 8);

    ctx.strokeStyle = "#4e79a7";
    ctx.lineWidth = 1.5;
    ctx.beginPath();
    ctx.moveTo(toX(0), toY(0));
    for (const p of series) {
        ctx.lineTo(toX(p.actions), toY(p.labels));
    }
    ctx.stroke();

    ctx.fillStyle = "#4e79a7";
    ctx.beginPath();
    ctx.arc(toX(last.actions), toY(last.labels), 3, 0, 2 * Math.PI);
    ctx.fill();
    ctx.fillStyle = "#e4e4e7";
    ctx.fillText(`${last.labels} / ${last.actions}`,
                 Math.min(toX(last.actions) + 6, w - 64),
                 Math.max(toY(last.labels) - 6, 12));
}
