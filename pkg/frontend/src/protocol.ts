// Wire protocol for the session server.
//
// JSON payload shapes mirror the server's responses field for field. The
// binary stream frame layout (little-endian) is: epoch u32, N u32, d u8,
// N*d float32 positions, then a delta block of count u32 followed by
// (index u32, class u16) pairs. A subscriber's first frame carries the
// full annotation state in its delta block.

export interface DatasetInfo {
    name: string;
    n: number;
    dim: number;
    n_classes: number;
    class_names: string[];
}

export interface Counters {
    labels: number;
    actions: number;
}

export interface SessionSummary {
    id: string;
    dataset: string;
    n: number;
    out_dims: number;
    epoch: number;
    e_max: number;
    running: boolean;
    counters: Counters;
    focus: number | null;
    k: number | null;
    selection: number[];
    n_labeled: number;
    class_names: string[];
    kl?: number;
    neighbors?: number[];
    written?: number;
    stepped?: number;
    clamped?: boolean;
}

export interface ExportPayload {
    labels_tsv: string;
    action_log_csv: string;
    counters: Counters;
}

export interface AnnotationDelta {
    index: number;
    classId: number;
}

export interface Frame {
    epoch: number;
    n: number;
    dims: number;
    positions: Float32Array;
    deltas: AnnotationDelta[];
}

const HEADER_BYTES = 9;
const DELTA_BYTES = 6;

export function decodeFrame(buffer: ArrayBuffer): Frame {
    const view = new DataView(buffer);
    let offset = 0;
    const need = (bytes: number): void => {
        if (offset + bytes > buffer.byteLength) {
            throw new Error(`truncated frame: need ${bytes} bytes at offset `
                + `${offset}, have ${buffer.byteLength}`);
        }
    };

    need(HEADER_BYTES);
    const epoch = view.getUint32(0, true);
    const n = view.getUint32(4, true);
    const dims = view.getUint8(8);
    offset = HEADER_BYTES;

    const posBytes = n * dims * 4;
    need(posBytes);
    // Positions start at byte 9, which is not 4-aligned, so copy through a
    // slice instead of viewing the buffer in place.
    const positions = new Float32Array(buffer.slice(offset, offset + posBytes));
    offset += posBytes;

    need(4);
    const count = view.getUint32(offset, true);
    offset += 4;
    need(count * DELTA_BYTES);
    const deltas: AnnotationDelta[] = [];
    for (let i = 0; i < count; i++) {
        deltas.push({
            index: view.getUint32(offset, true),
            classId: view.getUint16(offset + 4, true),
        });
        offset += DELTA_BYTES;
    }
    if (offset !== buffer.byteLength) {
        throw new Error(`frame has ${buffer.byteLength - offset} trailing bytes`);
    }
    return { epoch, n, dims, positions, deltas };
}
