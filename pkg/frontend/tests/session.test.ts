import { describe, expect, it } from "vitest";

import { ClientMessage } from "../src/protocol.js";
import { ClientSession } from "../src/session.js";

/** Scripted-server harness: a session wired to a message recorder plus
 * helpers producing the server side of the conversation. */
function harness() {
  const sent: ClientMessage[] = [];
  const logs: string[] = [];
  const session = new ClientSession((m) => sent.push(m), (s) => logs.push(s));
  const meshMsg = JSON.stringify({
    type: "mesh",
    positions: [0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 1],
    faces: [[0, 2, 1], [0, 1, 3], [1, 2, 3], [0, 3, 2]],
    dt: 0.01,
  });
  const frameMsg = (seq: number, wobble = 0) => JSON.stringify({
    type: "frame",
    seq,
    positions: [0, 0, wobble, 1, 0, wobble, 0, 1, wobble, 0, 0, 1 + wobble],
    q: [wobble],
    sim_ms: 0.5,
  });
  return { session, sent, logs, meshMsg, frameMsg };
}

describe("drag session message sequence", () => {
  it("emits exactly one start, the moves, and one end, in order", () => {
    const { session, sent, meshMsg } = harness();
    session.handleMessage(meshMsg);
    expect(session.beginDrag(2, [0, 1, 0])).toBe(true);
    session.moveDrag([0, 1.1, 0]);
    session.moveDrag([0, 1.2, 0.1]);
    session.endDrag();
    const kinds = sent.map((m) => m.type);
    expect(kinds).toEqual(["drag_start", "drag_move", "drag_move", "drag_end"]);
    const pointer = (sent[0] as { pointer: number }).pointer;
    for (const m of sent) expect((m as { pointer: number }).pointer).toBe(pointer);
    expect((sent[0] as { vertex: number }).vertex).toBe(2);
  });

  it("a miss sends nothing", () => {
    const { session, sent, meshMsg } = harness();
    session.handleMessage(meshMsg);
    expect(session.beginDrag(-1, [0, 0, 0])).toBe(false);
    expect(session.beginDrag(99, [0, 0, 0])).toBe(false);
    session.moveDrag([1, 1, 1]); // no active drag: must stay silent
    session.endDrag();
    expect(sent).toEqual([]);
  });

  it("never mutates state except through wire messages", () => {
    const { session, sent, meshMsg } = harness();
    session.handleMessage(meshMsg);
    session.beginDrag(0, [0, 0, 0]);
    session.moveDrag([0.2, 0, 0]);
    session.endDrag();
    // every emitted message is one of the documented client kinds
    for (const m of sent) {
      expect(["hello", "drag_start", "drag_move", "drag_end", "reset"]).toContain(m.type);
    }
  });
});

describe("frame application", () => {
  it("renders 1000 synthetic frames without error", () => {
    const { session, meshMsg, frameMsg, logs } = harness();
    session.handleMessage(meshMsg);
    for (let s = 1; s <= 1000; s++) {
      expect(session.handleMessage(frameMsg(s, 0.001 * s))).toBe("frame");
    }
    expect(session.framesApplied).toBe(1000);
    expect(session.framesDropped).toBe(0);
    expect(session.lastSeq).toBe(1000);
    expect(logs).toEqual([]);
    expect(session.positions![2]).toBeCloseTo(1.0, 5);
  });

  it("drops a frame with non-finite positions and keeps the previous shape", () => {
    const { session, meshMsg, frameMsg } = harness();
    session.handleMessage(meshMsg);
    session.handleMessage(frameMsg(1, 0.5));
    const before = Array.from(session.positions!);
    // a NaN in a JSON payload is not valid JSON, so it dies at the parser
    const badJson = '{"type": "frame", "seq": 2, "positions": [NaN, 0, 0, 1, 0, 0, '
      + '0, 1, 0, 0, 0, 1], "q": [0], "sim_ms": 0}';
    expect(session.handleMessage(badJson)).toBe("dropped");
    // a binary frame can carry NaN bytes; the finiteness check drops it
    const buf = new ArrayBuffer(12 + 4 * 12);
    const view = new DataView(buf);
    view.setUint32(0, 2, true);
    view.setUint32(8, 4, true);
    const body = new Float32Array(buf, 12);
    body.set([NaN, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 1]);
    expect(session.handleMessage(buf)).toBe("dropped");
    expect(Array.from(session.positions!)).toEqual(before);
    expect(session.framesDropped).toBe(2);
  });

  it("drops frames that arrive before the mesh or with the wrong size", () => {
    const { session, meshMsg, frameMsg } = harness();
    expect(session.handleMessage(frameMsg(1))).toBe("dropped");
    session.handleMessage(meshMsg);
    const wrong = JSON.stringify({ type: "frame", seq: 2, positions: [1, 2, 3], q: [], sim_ms: 0 });
    expect(session.handleMessage(wrong)).toBe("dropped");
  });

  it("drops stale sequence numbers", () => {
    const { session, meshMsg, frameMsg } = harness();
    session.handleMessage(meshMsg);
    expect(session.handleMessage(frameMsg(5))).toBe("frame");
    expect(session.handleMessage(frameMsg(5))).toBe("dropped");
    expect(session.handleMessage(frameMsg(4))).toBe("dropped");
    expect(session.handleMessage(frameMsg(6))).toBe("frame");
  });

  it("records server errors without touching buffers", () => {
    const { session, meshMsg } = harness();
    session.handleMessage(meshMsg);
    const before = Array.from(session.positions!);
    expect(session.handleMessage(JSON.stringify({ type: "error", msg: "bad vertex" })))
      .toBe("error");
    expect(session.errors).toEqual(["bad vertex"]);
    expect(Array.from(session.positions!)).toEqual(before);
  });

  it("applies binary frames after negotiation", () => {
    const { session, sent, meshMsg } = harness();
    session.handleMessage(meshMsg);
    session.hello(true);
    expect(sent[0]).toEqual({ type: "hello", binary: true });
    const buf = new ArrayBuffer(12 + 4 * 12);
    const view = new DataView(buf);
    view.setUint32(0, 1, true);
    view.setFloat32(4, 0.7, true);
    view.setUint32(8, 4, true);
    new Float32Array(buf, 12).set([0, 0, 0.2, 1, 0, 0.2, 0, 1, 0.2, 0, 0, 1.2]);
    expect(session.handleMessage(buf)).toBe("frame");
    expect(session.positions![2]).toBeCloseTo(0.2, 6);
  });
});
