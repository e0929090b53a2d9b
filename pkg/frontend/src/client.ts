// HTTP + WebSocket client for the session server.
//
// Every mutation returns the server's post-action session summary; callers
// mirror counters, focus, and selection from those payloads instead of
// computing anything locally, so the server stays the single source of
// truth for accounting.

import { decodeFrame } from "./protocol.js";
import type { DatasetInfo, ExportPayload, Frame, SessionSummary } from "./protocol.js";

export class ApiError extends Error {
    constructor(readonly status: number, message: string) {
        super(message);
        this.name = "ApiError";
    }
}

// Structural subset of the browser WebSocket that the "ws" package also
// satisfies, so tests can inject a Node implementation.
export interface SocketLike {
    binaryType: string;
    onmessage: ((event: { data: unknown }) => void) | null;
    onclose: ((event?: unknown) => void) | null;
    close(): void;
}

export type SocketFactory = (url: string) => SocketLike;

export interface StreamHandle {
    close(): void;
}

export class SessionClient {
    private readonly base: string;
    private readonly sockets: SocketFactory;

    constructor(base: string, sockets?: SocketFactory) {
        this.base = base.replace(/\/+$/, "");
        this.sockets = sockets
            ?? ((url) => new WebSocket(url) as unknown as SocketLike);
    }

    private async request<T>(path: string, init?: RequestInit): Promise<T> {
        const resp = await fetch(this.base + path, init);
        const text = await resp.text();
        let body: unknown = null;
        try {
            body = text ? JSON.parse(text) : null;
        } catch {
            // non-JSON error body; fall through to the status line
        }
        if (!resp.ok) {
            const detail = body !== null && typeof body === "object" && "detail" in body
                ? String((body as { detail: unknown }).detail)
                : `${resp.status} ${resp.statusText}`;
            throw new ApiError(resp.status, detail);
        }
        return body as T;
    }

    private post<T>(path: string, payload: unknown): Promise<T> {
        return this.request<T>(path, {
            method: "POST",
            headers: { "Content-Type": "application/json" },
            body: JSON.stringify(payload),
        });
    }

    async datasets(): Promise<DatasetInfo[]> {
        const out = await this.request<{ datasets: DatasetInfo[] }>("/datasets");
        return out.datasets;
    }

    createSession(dataset: string, config?: Record<string, unknown>,
                  throttleEps?: number): Promise<SessionSummary> {
        const payload: Record<string, unknown> = { dataset };
        if (config !== undefined) payload.config = config;
        if (throttleEps !== undefined) payload.throttle_eps = throttleEps;
        return this.post("/sessions", payload);
    }

    summary(id: string, kl = false): Promise<SessionSummary> {
        return this.request(`/sessions/${id}` + (kl ? "?kl=true" : ""));
    }

    control(id: string, command: "run" | "pause" | "step",
            n?: number): Promise<SessionSummary> {
        const payload: Record<string, unknown> = { command };
        if (n !== undefined) payload.n = n;
        return this.post(`/sessions/${id}/control`, payload);
    }

    selectFocus(id: string, v: number): Promise<SessionSummary> {
        return this.post(`/sessions/${id}/actions`, { action: "select_focus", v });
    }

    setK(id: string, k: number): Promise<SessionSummary> {
        return this.post(`/sessions/${id}/actions`, { action: "set_k", k });
    }

    deselect(id: string, j: number): Promise<SessionSummary> {
        return this.post(`/sessions/${id}/actions`, { action: "deselect", j });
    }

    applyLabel(id: string, classId: number): Promise<SessionSummary> {
        return this.post(`/sessions/${id}/actions`,
                         { action: "apply_label", class_id: classId });
    }

    exportSession(id: string): Promise<ExportPayload> {
        return this.request(`/sessions/${id}/export`);
    }

    deleteSession(id: string): Promise<{ closed: string }> {
        return this.request(`/sessions/${id}`, { method: "DELETE" });
    }

    thumbnailUrl(dataset: string, index: number): string {
        return `${this.base}/datasets/${dataset}/thumbnail/${index}`;
    }

    stream(id: string, onFrame: (frame: Frame) => void,
           onClose?: () => void): StreamHandle {
        const url = this.base.replace(/^http/, "ws") + `/sessions/${id}/stream`;
        const socket = this.sockets(url);
        socket.binaryType = "arraybuffer";
        socket.onmessage = (event) => {
            if (event.data instanceof ArrayBuffer) {
                onFrame(decodeFrame(event.data));
            }
        };
        socket.onclose = () => onClose?.();
        return { close: () => socket.close() };
    }
}
