// Display-to-frame coordinate mapping. The canvas may be shown at any
// CSS size; prompts must land on the frame pixel the operator actually
// clicked. Exact for integer scales, within a pixel for fractional ones.

export interface DisplayGeometry {
  displayWidth: number;
  displayHeight: number;
  frameWidth: number;
  frameHeight: number;
}

export function displayToFrame(
  xDisplay: number,
  yDisplay: number,
  geom: DisplayGeometry,
): { u: number; v: number } {
  const sx = geom.displayWidth / geom.frameWidth;
  const sy = geom.displayHeight / geom.frameHeight;
  const u = Math.min(Math.max(Math.floor(xDisplay / sx), 0), geom.frameWidth - 1);
  const v = Math.min(Math.max(Math.floor(yDisplay / sy), 0), geom.frameHeight - 1);
  return { u, v };
}

export function dragToBox(
  x0: number,
  y0: number,
  x1: number,
  y1: number,
  geom: DisplayGeometry,
): { u0: number; v0: number; u1: number; v1: number } {
  const a = displayToFrame(Math.min(x0, x1), Math.min(y0, y1), geom);
  const b = displayToFrame(Math.max(x0, x1), Math.max(y0, y1), geom);
  return { u0: a.u, v0: a.v, u1: b.u, v1: b.v };
}
