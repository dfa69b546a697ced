/** Application entry: connects to the simulation service, renders the
 * streaming mesh, and maps mouse input to vertex drags (left button) and
 * camera orbit (right button / wheel). Server URL via ?server=ws://...
 */

import { Vec3, add, lookAt, multiply, normalize, perspective, scale, sub } from "./math3d.js";
import { dragPlanePoint, pickVertex, rayFromScreen } from "./picking.js";
import { ClientSession } from "./session.js";
import { MeshRenderer } from "./renderer.js";

const params = new URLSearchParams(window.location.search);
const serverUrl = params.get("server")
  ?? `ws://${window.location.hostname || "127.0.0.1"}:8765/sim`;

const canvas = document.getElementById("view") as HTMLCanvasElement;
const banner = document.getElementById("banner") as HTMLDivElement;
const gl = canvas.getContext("webgl2");
if (!gl) {
  banner.textContent = "WebGL2 is not available in this browser";
  throw new Error("webgl2 unavailable");
}
const renderer = new MeshRenderer(gl);

// camera state: orbit around the mesh centroid
let center: Vec3 = [0, 0, 0];
let radius = 1.0;
let yaw = 0.7;
let pitch = 0.5;

function eyePosition(): Vec3 {
  const cp = Math.cos(pitch), sp = Math.sin(pitch);
  const cy = Math.cos(yaw), sy = Math.sin(yaw);
  return add(center, scale([cp * cy, cp * sy, sp], radius));
}

function viewProjection(): { vp: Float32Array; eye: Vec3; viewDir: Vec3 } {
  const eye = eyePosition();
  const proj = perspective(0.9, canvas.width / canvas.height, 0.001, 100.0);
  const view = lookAt(eye, center, [0, 0, 1]);
  return { vp: multiply(proj, view), eye, viewDir: normalize(sub(center, eye)) };
}

let session = new ClientSession(() => undefined);

function connect(): void {
  banner.textContent = `connecting to ${serverUrl} ...`;
  const ws = new WebSocket(serverUrl);
  session = new ClientSession((msg) => {
    if (ws.readyState === WebSocket.OPEN) ws.send(JSON.stringify(msg));
  }, (s) => console.warn(s));
  ws.binaryType = "arraybuffer";
  ws.onopen = () => {
    banner.textContent = "";
    session.hello(false);
  };
  ws.onmessage = (ev) => {
    const kind = session.handleMessage(ev.data);
    if (kind === "mesh" && session.positions) {
      renderer.setFaces(session.faces);
      fitCamera(session.positions);
    }
  };
  ws.onclose = () => {
    banner.textContent = "disconnected - retrying in 2s";
    setTimeout(connect, 2000);
  };
  ws.onerror = () => ws.close();
}

function fitCamera(positions: Float32Array): void {
  const lo: Vec3 = [Infinity, Infinity, Infinity];
  const hi: Vec3 = [-Infinity, -Infinity, -Infinity];
  for (let i = 0; i < positions.length; i += 3) {
    for (let a = 0; a < 3; a++) {
      lo[a] = Math.min(lo[a], positions[i + a]);
      hi[a] = Math.max(hi[a], positions[i + a]);
    }
  }
  center = scale(add(lo, hi), 0.5);
  radius = 2.2 * Math.max(hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2], 0.05);
}

// -- pointer handling --------------------------------------------------------

let orbiting = false;
let lastX = 0;
let lastY = 0;
let grabPoint: Vec3 | null = null;

canvas.addEventListener("contextmenu", (e) => e.preventDefault());

canvas.addEventListener("pointerdown", (e) => {
  canvas.setPointerCapture(e.pointerId);
  lastX = e.offsetX;
  lastY = e.offsetY;
  if (e.button === 2) {
    orbiting = true;
    return;
  }
  if (!session.positions) return;
  const { vp } = viewProjection();
  const ray = rayFromScreen(e.offsetX, e.offsetY, canvas.width, canvas.height, vp);
  if (!ray) return;
  const v = pickVertex(ray, session.positions, session.surface, 0.05 * radius);
  if (v < 0) return; // miss: no message
  grabPoint = [
    session.positions[3 * v], session.positions[3 * v + 1], session.positions[3 * v + 2],
  ];
  session.beginDrag(v, grabPoint);
});

canvas.addEventListener("pointermove", (e) => {
  if (orbiting) {
    yaw -= 0.01 * (e.offsetX - lastX);
    pitch = Math.min(1.5, Math.max(-1.5, pitch + 0.01 * (e.offsetY - lastY)));
    lastX = e.offsetX;
    lastY = e.offsetY;
    return;
  }
  if (!session.dragging || !grabPoint) return;
  const { vp, viewDir } = viewProjection();
  const ray = rayFromScreen(e.offsetX, e.offsetY, canvas.width, canvas.height, vp);
  if (!ray) return;
  const target = dragPlanePoint(ray, grabPoint, viewDir);
  if (target) session.moveDrag(target);
});

canvas.addEventListener("pointerup", (e) => {
  if (e.button === 2) {
    orbiting = false;
    return;
  }
  session.endDrag();
  grabPoint = null;
});

canvas.addEventListener("wheel", (e) => {
  e.preventDefault();
  radius *= Math.exp(0.001 * e.deltaY);
});

window.addEventListener("keydown", (e) => {
  if (e.key === "r") session.reset();
});

// -- render loop --------------------------------------------------------------

function resize(): void {
  const w = canvas.clientWidth, h = canvas.clientHeight;
  if (canvas.width !== w || canvas.height !== h) {
    canvas.width = w;
    canvas.height = h;
    gl!.viewport(0, 0, w, h);
  }
}

function tick(): void {
  resize();
  if (session.positions && session.faces.length) {
    const { vp, eye } = viewProjection();
    renderer.draw(session.positions, vp, eye);
  }
  requestAnimationFrame(tick);
}

connect();
requestAnimationFrame(tick);
