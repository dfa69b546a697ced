"""Real-time interactive simulation service.

One WebSocket connection owns one session: the server sends the surface mesh
on connect, then runs a fixed-timestep reduced simulation loop, applying
drag-spring forces from the client and broadcasting frames (JSON, or packed
little-endian binary after a hello with binary: true). Malformed input never
stops the loop; it is answered with an error message.

Wire messages
  client -> server: {"type": "hello", "binary": bool}
                    {"type": "drag_start", "pointer": id, "vertex": v, "pos": [x,y,z]}
                    {"type": "drag_move", "pointer": id, "pos": [x,y,z]}
                    {"type": "drag_end", "pointer": id}
                    {"type": "reset"}
  server -> client: {"type": "mesh", "positions": [...], "faces": [...], "dt": dt}
                    {"type": "frame", "seq": n, "positions": [...], "q": [...], "sim_ms": ms}
                    {"type": "error", "msg": "..."}

Binary frame layout: uint32 seq, float32 sim_ms, uint32 vertex count, then
3 * count float32 positions, all little-endian.
"""

from __future__ import annotations

import asyncio
import json
import logging
import struct
import time
from dataclasses import dataclass

import numpy as np
from fastapi import FastAPI, WebSocket, WebSocketDisconnect

from .elastic import Material
from .mesh import TetMesh, lump_mass, surface_faces
from .newton import SolverConfig
from .reducedsim import CubatureSet, ReducedSim, ReducedState, step_reduced

log = logging.getLogger(__name__)


@dataclass
class Drag:
    vertex: int
    target: np.ndarray
    stiffness: float


class SimSession:
    """Owns the reduced state and the drag set for one client."""

    def __init__(self, mesh: TetMesh, material: Material, model, dt: float = 1.0 / 60.0,
                 cubature: CubatureSet | None = None, drag_stiffness: float = 1e3,
                 solver: SolverConfig | None = None):
        self.mesh = mesh
        self.model = model
        self.dt = dt
        self.drag_stiffness = drag_stiffness
        self.mass = lump_mass(mesh)
        self.sim = ReducedSim(mesh, material, self.mass, model, cubature=cubature)
        self.state = ReducedState.rest(model.k)
        self.solver = solver or SolverConfig(max_iterations=12)
        self.faces = surface_faces(mesh)
        self.surface_vertices = set(int(v) for v in np.unique(self.faces))
        self.drags: dict = {}
        self.seq = 0
        self.binary = False
        self.last_sim_ms = 0.0

    # -- messages ---------------------------------------------------------

    def mesh_message(self) -> dict:
        x = self.mesh.rest_positions + self.model.decode(self.state.q)
        return {
            "type": "mesh",
            "positions": np.round(x, 9).tolist(),
            "faces": self.faces.tolist(),
            "dt": self.dt,
        }

    def handle_message(self, raw) -> list[dict]:
        """Apply one client message; returns reply messages (never raises)."""
        try:
            if isinstance(raw, (bytes, bytearray)):
                raw = raw.decode("utf-8")
            msg = json.loads(raw)
            if not isinstance(msg, dict) or "type" not in msg:
                return [{"type": "error", "msg": "message must be an object with a type"}]
            kind = msg["type"]
            if kind == "hello":
                self.binary = bool(msg.get("binary", False))
                return []
            if kind == "reset":
                self.state = ReducedState.rest(self.model.k)
                self.drags.clear()
                return []
            if kind == "drag_start":
                vertex = int(msg["vertex"])
                if vertex not in self.surface_vertices:
                    return [{"type": "error",
                             "msg": f"vertex {vertex} is not a surface vertex"}]
                pos = np.asarray(msg["pos"], dtype=np.float64).reshape(3)
                if not np.all(np.isfinite(pos)):
                    return [{"type": "error", "msg": "non-finite drag position"}]
                self.drags[str(msg.get("pointer", 0))] = Drag(
                    vertex=vertex, target=pos, stiffness=self.drag_stiffness)
                return []
            if kind == "drag_move":
                key = str(msg.get("pointer", 0))
                if key not in self.drags:
                    log.warning("drag_move for unknown pointer %s ignored", key)
                    return []
                pos = np.asarray(msg["pos"], dtype=np.float64).reshape(3)
                if not np.all(np.isfinite(pos)):
                    return [{"type": "error", "msg": "non-finite drag position"}]
                self.drags[key].target = pos
                return []
            if kind == "drag_end":
                key = str(msg.get("pointer", 0))
                if key not in self.drags:
                    log.warning("drag_end for unknown pointer %s ignored", key)
                    return []
                del self.drags[key]
                return []
            return [{"type": "error", "msg": f"unknown message type {kind!r}"}]
        except Exception as exc:  # malformed input must never kill the loop
            return [{"type": "error", "msg": f"bad message: {exc}"}]

    # -- stepping ---------------------------------------------------------

    def drag_forces(self) -> np.ndarray | None:
        if not self.drags:
            return None
        x = (self.mesh.rest_positions + self.model.decode(self.state.q)).reshape(-1, 3)
        f = np.zeros(self.mesh.n_dofs)
        for d in self.drags.values():
            v = d.vertex
            f[3 * v : 3 * v + 3] += d.stiffness * (d.target - x[v])
        return f

    def step(self):
        t0 = time.perf_counter()
        f_ext = self.drag_forces()
        self.state, report = step_reduced(self.sim, self.state, self.dt, f_ext=f_ext,
                                          cfg=self.solver)
        self.last_sim_ms = (time.perf_counter() - t0) * 1e3
        self.seq += 1
        return self.frame_message()

    def frame_message(self):
        x = self.mesh.rest_positions + self.model.decode(self.state.q)
        if self.binary:
            head = struct.pack("<IfI", self.seq, self.last_sim_ms, self.mesh.n_vertices)
            return head + x.astype("<f4").tobytes()
        return {
            "type": "frame",
            "seq": self.seq,
            "positions": x.tolist(),
            "q": self.state.q.tolist(),
            "sim_ms": self.last_sim_ms,
        }


def run_scripted_session(session: SimSession, script: list[tuple[int, str]], steps: int):
    """Replay harness: apply scripted raw messages before given step indices
    and collect (replies, frames) deterministically, without a network."""
    replies, frames = [], []
    by_step: dict[int, list[str]] = {}
    for step_index, raw in script:
        by_step.setdefault(step_index, []).append(raw)
    for i in range(steps):
        for raw in by_step.get(i, ()):
            replies.extend(session.handle_message(raw))
        frames.append(session.step())
    return replies, frames


# ---------------------------------------------------------------------------
# service

def build_app(model_path=None, mesh_path=None, mesh_format="node_ele", dt=1.0 / 60.0,
              cubature_count=0, drag_stiffness=1e3, seed=0, session_factory=None):
    """FastAPI app exposing ws://host:port/sim. session_factory overrides
    asset loading for tests."""
    if session_factory is None:
        from .cli import _load_model_and_mesh
        from .reducedsim import select_random_cubature

        model, mesh, material, meta = _load_model_and_mesh(model_path, mesh_path, mesh_format)
        cubature = (select_random_cubature(mesh, cubature_count, seed)
                    if cubature_count else None)

        def session_factory():
            return SimSession(mesh, material, model, dt=dt, cubature=cubature,
                              drag_stiffness=drag_stiffness)

    app = FastAPI(title="softrom simulation service")

    @app.get("/health")
    def health():
        return {"ok": True}

    @app.websocket("/sim")
    async def sim_ws(ws: WebSocket):
        await ws.accept()
        session = session_factory()
        await ws.send_json(session.mesh_message())
        queue: asyncio.Queue = asyncio.Queue()
        frame_interval = max(1, round((1.0 / 60.0) / session.dt))

        async def reader():
            while True:
                msg = await ws.receive()
                if msg.get("type") == "websocket.disconnect":
                    queue.put_nowait(None)
                    return
                queue.put_nowait(msg.get("text") if msg.get("text") is not None
                                 else msg.get("bytes"))

        reader_task = asyncio.create_task(reader())
        try:
            next_tick = time.perf_counter()
            while True:
                while not queue.empty():
                    item = queue.get_nowait()
                    if item is None:
                        return
                    for reply in session.handle_message(item):
                        await ws.send_json(reply)
                frame = session.step()
                if session.seq % frame_interval == 0:
                    if isinstance(frame, (bytes, bytearray)):
                        await ws.send_bytes(frame)
                    else:
                        await ws.send_json(frame)
                next_tick += session.dt
                delay = next_tick - time.perf_counter()
                if delay > 0:
                    await asyncio.sleep(delay)
                else:
                    next_tick = time.perf_counter()  # fell behind; no sleep debt
        except (WebSocketDisconnect, RuntimeError):
            pass
        finally:
            reader_task.cancel()

    return app
