/** Socket-agnostic client session: applies complete frames to the render
 * buffer, drops malformed ones with a diagnostic, and runs the drag state
 * machine (start, then moves, then end; messages only while a drag is
 * active). Simulation state is only ever touched through wire messages.
 */

import { ClientMessage, client, decodeBinaryFrame, parseServerMessage } from "./protocol.js";
import { Vec3 } from "./math3d.js";
import { surfaceVertices } from "./picking.js";

export type Applied = "mesh" | "frame" | "error" | "dropped";

interface ActiveDrag {
  pointer: number;
  vertex: number;
  grab: Vec3;
}

export class ClientSession {
  positions: Float32Array | null = null;
  faces: number[][] = [];
  surface: Set<number> = new Set();
  dt = 1 / 60;
  lastSeq = -1;
  framesApplied = 0;
  framesDropped = 0;
  errors: string[] = [];
  private drag: ActiveDrag | null = null;
  private nextPointer = 1;

  constructor(
    private send: (m: ClientMessage) => void,
    private log: (s: string) => void = (s) => console.warn(s),
  ) {}

  get dragging(): boolean {
    return this.drag !== null;
  }

  get dragVertex(): number {
    return this.drag ? this.drag.vertex : -1;
  }

  hello(binary = false): void {
    this.send(client.hello(binary));
  }

  handleMessage(data: string | ArrayBuffer): Applied {
    if (typeof data !== "string") {
      const frame = decodeBinaryFrame(data);
      if (!frame) return this.drop("undecodable binary frame");
      return this.applyFrame(frame.seq, frame.positions);
    }
    const msg = parseServerMessage(data);
    if (!msg) return this.drop("unparseable message");
    if (msg.type === "mesh") {
      const pos = Float32Array.from(msg.positions);
      if (!allFinite(pos)) return this.drop("mesh with non-finite positions");
      this.positions = pos;
      this.faces = msg.faces;
      this.surface = surfaceVertices(msg.faces);
      this.dt = msg.dt > 0 ? msg.dt : this.dt;
      return "mesh";
    }
    if (msg.type === "error") {
      this.errors.push(msg.msg);
      this.log(`server error: ${msg.msg}`);
      return "error";
    }
    return this.applyFrame(msg.seq, Float32Array.from(msg.positions));
  }

  private applyFrame(seq: number, pos: Float32Array): Applied {
    if (this.positions === null) return this.drop("frame before mesh");
    if (pos.length !== this.positions.length) {
      return this.drop(`frame size ${pos.length} != mesh size ${this.positions.length}`);
    }
    if (!allFinite(pos)) return this.drop(`frame ${seq} has non-finite positions`);
    if (seq <= this.lastSeq) return this.drop(`stale frame ${seq} (have ${this.lastSeq})`);
    this.positions = pos; // complete, validated frames only
    this.lastSeq = seq;
    this.framesApplied += 1;
    return "frame";
  }

  private drop(reason: string): Applied {
    this.framesDropped += 1;
    this.log(`dropped: ${reason}`);
    return "dropped";
  }

  // -- drag lifecycle ------------------------------------------------------

  /** Starts a drag on a picked surface vertex; no message on a miss. */
  beginDrag(vertex: number, grab: Vec3): boolean {
    if (this.positions === null || this.drag !== null) return false;
    if (vertex < 0 || !this.surface.has(vertex)) return false;
    this.drag = { pointer: this.nextPointer++, vertex, grab };
    this.send(client.dragStart(this.drag.pointer, vertex, [grab[0], grab[1], grab[2]]));
    return true;
  }

  moveDrag(target: Vec3): void {
    if (!this.drag) return;
    this.send(client.dragMove(this.drag.pointer, [target[0], target[1], target[2]]));
  }

  endDrag(): void {
    if (!this.drag) return;
    this.send(client.dragEnd(this.drag.pointer));
    this.drag = null;
  }

  reset(): void {
    this.endDrag();
    this.send(client.reset());
  }
}

function allFinite(a: Float32Array): boolean {
  for (let i = 0; i < a.length; i++) {
    if (!Number.isFinite(a[i])) return false;
  }
  return true;
}
