// Operator console: live feed + prompt tools on the left, telemetry on
// the right. Connects to `graspsim serve --ws`.

import { dragToBox, displayToFrame } from "./coords";
import { overlayRGBA } from "./overlay";
import type { ClientMessage } from "./protocol";
import {
  ViewState,
  canAbort,
  canConfirm,
  canPrompt,
  initialState,
  latestTelemetry,
  overlayMatchesFrame,
  reduce,
  telemetryStale,
} from "./state";
import { Transport, WebSocketTransport } from "./transport";

const SCALE = 2;

let state: ViewState = initialState();
let transport: Transport | null = null;
let frameImage: HTMLImageElement | null = null;
let dragStart: { x: number; y: number } | null = null;

const $ = (id: string) => document.getElementById(id) as HTMLElement;
const canvas = () => $("view") as HTMLCanvasElement;

function send(msg: ClientMessage) {
  transport?.send(msg);
}

function connect() {
  const url = ($("server-url") as HTMLInputElement).value;
  transport = new WebSocketTransport(url);
  transport.onOpen(() => {
    state = { ...state, connected: true };
    render();
  });
  transport.onClose(() => {
    state = { ...state, connected: false };
    render();
  });
  transport.onMessage((msg, atMs) => {
    state = reduce(state, msg, atMs);
    if (msg.type === "frame") {
      const img = new Image();
      img.onload = () => {
        frameImage = img;
        render();
      };
      img.src = `data:image/png;base64,${msg.png_b64}`;
    } else {
      render();
    }
  });
}

function geometry() {
  const c = canvas();
  const fw = frameImage?.naturalWidth ?? 320;
  const fh = frameImage?.naturalHeight ?? 240;
  return { displayWidth: c.width, displayHeight: c.height, frameWidth: fw, frameHeight: fh };
}

function canvasPos(ev: MouseEvent) {
  const rect = canvas().getBoundingClientRect();
  return { x: ev.clientX - rect.left, y: ev.clientY - rect.top };
}

function wirePromptTools() {
  const c = canvas();
  c.addEventListener("mousedown", (ev) => {
    if (!canPrompt(state)) return;
    dragStart = canvasPos(ev);
  });
  c.addEventListener("mouseup", (ev) => {
    if (!canPrompt(state) || dragStart === null) return;
    const end = canvasPos(ev);
    const start = dragStart;
    dragStart = null;
    const geom = geometry();
    const moved = Math.hypot(end.x - start.x, end.y - start.y) > 4;
    if (moved) {
      send({ type: "prompt", kind: "box", ...dragToBox(start.x, start.y, end.x, end.y, geom) });
    } else {
      const { u, v } = displayToFrame(end.x, end.y, geom);
      send({ type: "prompt", kind: "point", u, v });
    }
  });

  $("text-send").addEventListener("click", () => {
    const text = ($("text-prompt") as HTMLInputElement).value.trim();
    if (text && canPrompt(state)) send({ type: "prompt", kind: "text", text });
  });
  $("confirm").addEventListener("click", () => {
    if (canConfirm(state)) send({ type: "confirm" });
  });
  $("reject").addEventListener("click", () => {
    // Rejection is local: drop the overlay and prompt again.
    state = { ...state, overlay: null };
    render();
  });
  $("abort").addEventListener("click", () => {
    if (canAbort(state)) send({ type: "abort" });
  });
  ($("speed") as HTMLInputElement).addEventListener("change", (ev) => {
    send({ type: "set_speed", scale: parseFloat((ev.target as HTMLInputElement).value) });
  });
  $("connect").addEventListener("click", connect);
}

function render() {
  const c = canvas();
  const ctx = c.getContext("2d")!;
  const geom = geometry();
  c.width = geom.frameWidth * SCALE;
  c.height = geom.frameHeight * SCALE;
  ctx.imageSmoothingEnabled = false;
  ctx.fillStyle = "#14161c";
  ctx.fillRect(0, 0, c.width, c.height);
  if (frameImage) ctx.drawImage(frameImage, 0, 0, c.width, c.height);

  if (state.overlay && overlayMatchesFrame(state, geom.frameWidth, geom.frameHeight)) {
    const rgba = overlayRGBA(state.overlay.bits, state.overlay.height, state.overlay.width);
    const off = document.createElement("canvas");
    off.width = state.overlay.width;
    off.height = state.overlay.height;
    off.getContext("2d")!.putImageData(new ImageData(rgba, state.overlay.width, state.overlay.height), 0, 0);
    ctx.drawImage(off, 0, 0, c.width, c.height);
  } else if (state.overlay && frameImage) {
    state = { ...state, overlayError: "overlay does not match frame dimensions", overlay: null };
  }

  $("status").textContent = state.connected ? "connected" : "disconnected";
  $("phase").textContent = state.phase;
  $("banner").textContent = state.outcome
    ? `outcome: ${state.outcome.status}${state.outcome.final_error != null ? ` (${(state.outcome.final_error * 1000).toFixed(1)} mm)` : ""}`
    : state.overlayError ?? state.lastError ?? "";

  const tel = latestTelemetry(state);
  const joints = $("joints");
  joints.innerHTML = "";
  (tel?.theta ?? new Array(6).fill(0)).forEach((angle, i) => {
    const row = document.createElement("div");
    row.className = "joint";
    row.textContent = `J${i}: ${angle.toFixed(3)} rad`;
    joints.appendChild(row);
  });
  $("force").textContent = tel?.gripper.force != null ? `${tel.gripper.force.toFixed(2)} N` : "-";
  $("replans").textContent = String(tel?.replans ?? 0);
  $("stale").textContent = telemetryStale(state, Date.now()) ? "STALE" : "";

  ($("confirm") as HTMLButtonElement).disabled = !canConfirm(state);
  ($("abort") as HTMLButtonElement).disabled = !canAbort(state);
}

wirePromptTools();
render();
setInterval(render, 500); // staleness indicator refresh
