// Application wiring: connects the DOM controls to the session server and
// keeps the scatter, counters, and efficiency chart in sync with server
// payloads and stream frames. All network actions run through one promise
// queue so requests and their summary mirrors stay ordered.

import { ApiError, SessionClient } from "./client.js";
import type { StreamHandle } from "./client.js";
import { drawEfficiency } from "./chart.js";
import { ScatterRenderer } from "./scatter.js";
import { SessionView } from "./state.js";

function element<T extends HTMLElement>(id: string): T {
    const el = document.getElementById(id);
    if (!el) {
        throw new Error(`missing element #${id}`);
    }
    return el as T;
}

const serverInput = element<HTMLInputElement>("server");
const connectBtn = element<HTMLButtonElement>("connect");
const datasetSelect = element<HTMLSelectElement>("dataset");
const newSessionBtn = element<HTMLButtonElement>("new-session");
const runBtn = element<HTMLButtonElement>("run");
const pauseBtn = element<HTMLButtonElement>("pause");
const stepBtn = element<HTMLButtonElement>("step");
const exportBtn = element<HTMLButtonElement>("export");
const statusEl = element<HTMLElement>("status");
const epochEl = element<HTMLElement>("epoch");
const klEl = element<HTMLElement>("kl");
const labelsEl = element<HTMLElement>("labels-count");
const actionsEl = element<HTMLElement>("actions-count");
const labeledEl = element<HTMLElement>("labeled-count");
const selectionEl = element<HTMLElement>("selection-count");
const kSlider = element<HTMLInputElement>("k-slider");
const kValue = element<HTMLElement>("k-value");
const classesEl = element<HTMLElement>("classes");
const scatterCanvas = element<HTMLCanvasElement>("scatter");
const chartCanvas = element<HTMLCanvasElement>("chart");
const thumb = element<HTMLImageElement>("thumb");

const renderer = new ScatterRenderer(scatterCanvas);
let client: SessionClient | null = null;
let view = new SessionView();
let stream: StreamHandle | null = null;
let thumbFailures = 0;
let pendingK: number | null = null;

function setStatus(text: string, isError = false): void {
    statusEl.textContent = text;
    statusEl.classList.toggle("error", isError);
}

function refreshControls(): void {
    const haveSession = view.id !== "";
    epochEl.textContent = haveSession ? `${view.epoch} / ${view.eMax}` : "-";
    klEl.textContent = view.kl === null ? "-" : view.kl.toFixed(4);
    labelsEl.textContent = String(view.counters.labels);
    actionsEl.textContent = String(view.counters.actions);
    labeledEl.textContent = `${view.nLabeled} / ${view.n}`;
    selectionEl.textContent = String(view.selection.length);
    kValue.textContent = kSlider.value;
    kSlider.max = String(Math.max(0, view.n - 1));
    kSlider.disabled = !haveSession || view.focus === null;
    runBtn.disabled = !haveSession || view.running;
    pauseBtn.disabled = !haveSession || !view.running;
    stepBtn.disabled = !haveSession || view.running;
    exportBtn.disabled = !haveSession;
    for (const btn of classesEl.querySelectorAll("button")) {
        btn.disabled = !view.canApply;
    }
    drawEfficiency(chartCanvas, view.efficiency);
}

// One queue for every server mutation: requests are serialized and their
// summaries applied in order.
let queue: Promise<unknown> = Promise.resolve();

function enqueue(op: () => Promise<void>): void {
    queue = queue.then(async () => {
        try {
            await op();
        } catch (err) {
            const detail = err instanceof ApiError
                ? `${err.status}: ${err.message}`
                : String(err);
            setStatus(detail, true);
        }
    });
}

function buildPalette(): void {
    classesEl.innerHTML = "";
    view.classNames.forEach((name, classId) => {
        const row = document.createElement("div");
        row.className = "class-row";

        const swatch = document.createElement("input");
        swatch.type = "color";
        swatch.value = view.colors[classId];
        swatch.addEventListener("input", () => {
            view.setColor(classId, swatch.value);
        });

        const btn = document.createElement("button");
        btn.textContent = `apply ${name}`;
        btn.addEventListener("click", () => {
            enqueue(async () => {
                if (!client || !view.canApply) {
                    return;
                }
                const resp = await client.applyLabel(view.id, classId);
                view.recordAction(resp);
                refreshControls();
                setStatus(`wrote ${resp.written ?? 0} labels as "${name}"`);
            });
        });

        row.append(swatch, btn);
        classesEl.append(row);
    });
}

connectBtn.addEventListener("click", () => {
    enqueue(async () => {
        client = new SessionClient(serverInput.value.trim());
        const datasets = await client.datasets();
        datasetSelect.innerHTML = "";
        for (const ds of datasets) {
            const opt = document.createElement("option");
            opt.value = ds.name;
            opt.textContent = `${ds.name} (${ds.n} x ${ds.dim})`;
            datasetSelect.append(opt);
        }
        newSessionBtn.disabled = datasets.length === 0;
        setStatus(`connected, ${datasets.length} dataset(s)`);
    });
});

newSessionBtn.addEventListener("click", () => {
    enqueue(async () => {
        if (!client) {
            return;
        }
        stream?.close();
        view = new SessionView();
        const summary = await client.createSession(datasetSelect.value);
        view.applySummary(summary);
        buildPalette();
        stream = client.stream(view.id, (frame) => {
            view.applyFrame(frame);
            refreshControls();
        });
        kSlider.value = "0";
        thumbFailures = 0;
        refreshControls();
        setStatus(`session ${view.id.slice(0, 8)} on ${view.dataset}`);
    });
});

runBtn.addEventListener("click", () => {
    enqueue(async () => {
        if (!client) {
            return;
        }
        view.applySummary(await client.control(view.id, "run"));
        refreshControls();
    });
});

pauseBtn.addEventListener("click", () => {
    enqueue(async () => {
        if (!client) {
            return;
        }
        view.applySummary(await client.control(view.id, "pause"));
        // KL is worth a request only while paused; it is quadratic in N.
        view.applySummary(await client.summary(view.id, true));
        refreshControls();
    });
});

stepBtn.addEventListener("click", () => {
    enqueue(async () => {
        if (!client) {
            return;
        }
        view.applySummary(await client.control(view.id, "step", 10));
        view.applySummary(await client.summary(view.id, true));
        refreshControls();
    });
});

exportBtn.addEventListener("click", () => {
    enqueue(async () => {
        if (!client) {
            return;
        }
        const exported = await client.exportSession(view.id);
        const blob = new Blob([exported.action_log_csv], { type: "text/csv" });
        const link = document.createElement("a");
        link.href = URL.createObjectURL(blob);
        link.download = `${view.dataset}-actions.csv`;
        link.click();
        URL.revokeObjectURL(link.href);
        setStatus(`exported log, counters ${exported.counters.labels} labels / `
            + `${exported.counters.actions} actions`);
    });
});

// Click picks a focus; clicking an already selected neighbor deselects it.
// Drags beyond a few pixels are rotation gestures, not picks.
scatterCanvas.addEventListener("click", (e) => {
    if (view.n === 0 || renderer.dragDistance() > 4) {
        return;
    }
    const i = renderer.pick(e.clientX, e.clientY);
    if (i === null || i === view.focus) {
        return;
    }
    enqueue(async () => {
        if (!client) {
            return;
        }
        const resp = view.isSelected(i)
            ? await client.deselect(view.id, i)
            : await client.selectFocus(view.id, i);
        view.recordAction(resp);
        refreshControls();
    });
});

// Slider moves fetch neighbor ranks from the server; in-flight requests
// coalesce so only the latest k wins.
kSlider.addEventListener("input", () => {
    kValue.textContent = kSlider.value;
    if (view.focus === null) {
        return;
    }
    const idle = pendingK === null;
    pendingK = Number(kSlider.value);
    if (!idle) {
        return;
    }
    enqueue(async () => {
        while (pendingK !== null) {
            const k = pendingK;
            if (client) {
                view.recordAction(await client.setK(view.id, k));
                refreshControls();
            }
            if (pendingK === k) {
                pendingK = null;
            }
        }
    });
});

scatterCanvas.addEventListener("pointermove", (e) => {
    if (!client || view.n === 0 || thumbFailures >= 3) {
        return;
    }
    const i = renderer.pick(e.clientX, e.clientY);
    if (i === null) {
        thumb.style.display = "none";
        return;
    }
    thumb.src = client.thumbnailUrl(view.dataset, i);
    thumb.style.left = `${e.clientX + 14}px`;
    thumb.style.top = `${e.clientY + 14}px`;
    thumb.style.display = "block";
});

thumb.addEventListener("error", () => {
    thumb.style.display = "none";
    thumbFailures += 1;
});
thumb.addEventListener("load", () => {
    thumbFailures = 0;
});

function loop(): void {
    renderer.render(view);
    requestAnimationFrame(loop);
}

refreshControls();
requestAnimationFrame(loop);
