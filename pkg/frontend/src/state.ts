// View state and its reducer. Pure: state is a fold over the inbound
// message log (plus arrival timestamps for staleness), so any display
// can be reconstructed from a recorded session.

import type { MaskRLE, ServerMessage, TelemetryMessage } from "./protocol";
import { decodeMask, popcount } from "./rle";

export const TELEMETRY_BUFFER = 500;
export const STALE_AFTER_MS = 1000;

export interface Overlay {
  bits: Uint8Array;
  height: number;
  width: number;
  label: string;
  score: number;
  pixels: number;
}

export interface ViewState {
  connected: boolean;
  phase: string;
  framePngB64: string | null;
  frameT: number | null;
  overlay: Overlay | null;
  overlayError: string | null;
  telemetry: TelemetryMessage[]; // bounded ring, newest last
  lastTelemetryAtMs: number | null;
  outcome: { status: string; final_error: number | null } | null;
  lastError: string | null;
  speedScale: number;
}

export function initialState(): ViewState {
  return {
    connected: false,
    phase: "awaiting_prompt",
    framePngB64: null,
    frameT: null,
    overlay: null,
    overlayError: null,
    telemetry: [],
    lastTelemetryAtMs: null,
    outcome: null,
    lastError: null,
    speedScale: 1.0,
  };
}

function decodeOverlay(rle: MaskRLE, label: string, score: number): Overlay {
  const bits = decodeMask(rle);
  const [height, width] = rle.size;
  return { bits, height, width, label, score, pixels: popcount(bits) };
}

export function reduce(state: ViewState, msg: ServerMessage, atMs: number): ViewState {
  switch (msg.type) {
    case "frame":
      return { ...state, framePngB64: msg.png_b64, frameT: msg.t };
    case "segmentation": {
      try {
        const overlay = decodeOverlay(msg.mask_rle, msg.label, msg.score);
        return { ...state, overlay, overlayError: null };
      } catch (err) {
        return { ...state, overlay: null, overlayError: String(err) };
      }
    }
    case "phase": {
      const next: ViewState = { ...state, phase: msg.name };
      if (msg.name === "awaiting_prompt") next.overlay = null;
      return next;
    }
    case "telemetry": {
      const telemetry = state.telemetry.concat([msg]);
      if (telemetry.length > TELEMETRY_BUFFER) {
        telemetry.splice(0, telemetry.length - TELEMETRY_BUFFER);
      }
      return { ...state, telemetry, lastTelemetryAtMs: atMs, phase: msg.phase };
    }
    case "outcome":
      return {
        ...state,
        outcome: { status: msg.status, final_error: msg.final_error },
        phase: "done",
      };
    case "error":
      return { ...state, lastError: `${msg.code}: ${msg.detail}` };
    case "speed":
      return { ...state, speedScale: msg.scale };
    default:
      return state;
  }
}

export function latestTelemetry(state: ViewState): TelemetryMessage | null {
  return state.telemetry.length ? state.telemetry[state.telemetry.length - 1] : null;
}

export function telemetryStale(state: ViewState, nowMs: number): boolean {
  if (state.lastTelemetryAtMs === null) return false;
  return nowMs - state.lastTelemetryAtMs > STALE_AFTER_MS;
}

export function canPrompt(state: ViewState): boolean {
  return state.connected && (state.phase === "awaiting_prompt" || state.phase === "segmented_awaiting_confirm");
}

export function canConfirm(state: ViewState): boolean {
  return (
    state.connected &&
    state.phase === "segmented_awaiting_confirm" &&
    state.overlay !== null &&
    state.overlay.pixels > 0
  );
}

export function canAbort(state: ViewState): boolean {
  return state.connected && state.phase !== "done";
}

export function overlayMatchesFrame(state: ViewState, frameWidth: number, frameHeight: number): boolean {
  if (state.overlay === null) return false;
  return state.overlay.width === frameWidth && state.overlay.height === frameHeight;
}
