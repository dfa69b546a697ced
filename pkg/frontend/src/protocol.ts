/** Wire protocol shared with the simulation service.
 *
 * Server messages are JSON (mesh / frame / error); frames may instead arrive
 * as packed binary after a `hello` with `binary: true`:
 * uint32 seq | float32 sim_ms | uint32 count | count*3 float32 positions,
 * all little-endian.
 */

export interface MeshMessage {
  type: "mesh";
  positions: number[];
  faces: number[][];
  dt: number;
}

export interface FrameMessage {
  type: "frame";
  seq: number;
  positions: number[];
  q: number[];
  sim_ms: number;
}

export interface ErrorMessage {
  type: "error";
  msg: string;
}

export type ServerMessage = MeshMessage | FrameMessage | ErrorMessage;

export type ClientMessage =
  | { type: "hello"; binary: boolean }
  | { type: "drag_start"; pointer: number; vertex: number; pos: [number, number, number] }
  | { type: "drag_move"; pointer: number; pos: [number, number, number] }
  | { type: "drag_end"; pointer: number }
  | { type: "reset" };

export function parseServerMessage(text: string): ServerMessage | null {
  let msg: unknown;
  try {
    msg = JSON.parse(text);
  } catch {
    return null;
  }
  if (typeof msg !== "object" || msg === null || !("type" in msg)) return null;
  const m = msg as Record<string, unknown>;
  if (m.type === "mesh" && Array.isArray(m.positions) && Array.isArray(m.faces)) {
    return m as unknown as MeshMessage;
  }
  if (m.type === "frame" && typeof m.seq === "number" && Array.isArray(m.positions)) {
    return m as unknown as FrameMessage;
  }
  if (m.type === "error" && typeof m.msg === "string") {
    return m as unknown as ErrorMessage;
  }
  return null;
}

export interface BinaryFrame {
  seq: number;
  simMs: number;
  positions: Float32Array;
}

export function decodeBinaryFrame(buf: ArrayBuffer): BinaryFrame | null {
  if (buf.byteLength < 12) return null;
  const view = new DataView(buf);
  const seq = view.getUint32(0, true);
  const simMs = view.getFloat32(4, true);
  const count = view.getUint32(8, true);
  if (buf.byteLength !== 12 + 12 * count) return null;
  return { seq, simMs, positions: new Float32Array(buf.slice(12)) };
}

export const client = {
  hello(binary = false): ClientMessage {
    return { type: "hello", binary };
  },
  dragStart(pointer: number, vertex: number, pos: [number, number, number]): ClientMessage {
    return { type: "drag_start", pointer, vertex, pos };
  },
  dragMove(pointer: number, pos: [number, number, number]): ClientMessage {
    return { type: "drag_move", pointer, pos };
  },
  dragEnd(pointer: number): ClientMessage {
    return { type: "drag_end", pointer };
  },
  reset(): ClientMessage {
    return { type: "reset" };
  },
};
