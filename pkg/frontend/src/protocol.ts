// Wire protocol types. The console is a pure protocol client: everything
// it displays is a fold over these messages.

export interface MaskRLE {
  size: [number, number]; // height, width
  counts: number[]; // alternating zero/one run lengths, zeros first
}

export type ClientMessage =
  | { type: "prompt"; kind: "point"; u: number; v: number }
  | { type: "prompt"; kind: "box"; u0: number; v0: number; u1: number; v1: number }
  | { type: "prompt"; kind: "text"; text: string }
  | { type: "confirm" }
  | { type: "abort" }
  | { type: "set_speed"; scale: number };

export interface FrameMessage {
  type: "frame";
  png_b64: string;
  t: number;
}

export interface SegmentationMessage {
  type: "segmentation";
  mask_rle: MaskRLE;
  score: number;
  label: string;
}

export interface GripperTelemetry {
  opening: number | null;
  force: number | null;
}

export interface TelemetryMessage {
  type: "telemetry";
  t: number;
  phase: string;
  theta: number[];
  p_arm_est: number[] | null;
  p_arm_gt: number[] | null;
  gripper: GripperTelemetry;
  replans: number;
}

export interface PhaseMessage {
  type: "phase";
  name: string;
}

export interface OutcomeMessage {
  type: "outcome";
  status: string;
  final_error: number | null;
  replans: number;
  relocated: boolean;
  ticks: number;
}

export interface ErrorMessage {
  type: "error";
  code: string;
  detail: string;
}

export interface SpeedMessage {
  type: "speed";
  scale: number;
}

export type ServerMessage =
  | FrameMessage
  | SegmentationMessage
  | TelemetryMessage
  | PhaseMessage
  | OutcomeMessage
  | ErrorMessage
  | SpeedMessage;

export const PROMPTABLE_PHASES = ["awaiting_prompt", "segmented_awaiting_confirm"];
export const ABORTABLE_PHASES = ["relocating", "approaching", "grasping"];
