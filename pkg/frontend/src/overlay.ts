// Mask overlay pixels: a semi-transparent tint over masked pixels plus a
// contour outline (mask pixels bordering unmasked ones). Pure array math
// so it is testable without a canvas; the app blits the result onto the
// frame via ImageData.

export interface Tint {
  r: number;
  g: number;
  b: number;
  alpha: number; // 0..255 fill alpha
}

export const DEFAULT_TINT: Tint = { r: 64, g: 156, b: 255, alpha: 96 };

export function contourOf(bits: Uint8Array, height: number, width: number): Uint8Array {
  const edge = new Uint8Array(bits.length);
  for (let v = 0; v < height; v++) {
    for (let u = 0; u < width; u++) {
      const i = v * width + u;
      if (!bits[i]) continue;
      const up = v > 0 && bits[i - width] !== 0;
      const down = v < height - 1 && bits[i + width] !== 0;
      const left = u > 0 && bits[i - 1] !== 0;
      const right = u < width - 1 && bits[i + 1] !== 0;
      if (!(up && down && left && right)) edge[i] = 1;
    }
  }
  return edge;
}

export function overlayRGBA(bits: Uint8Array, height: number, width: number, tint: Tint = DEFAULT_TINT) {
  const out = new Uint8ClampedArray(height * width * 4);
  const edge = contourOf(bits, height, width);
  for (let i = 0; i < bits.length; i++) {
    const o = i * 4;
    if (edge[i]) {
      out[o] = tint.r;
      out[o + 1] = tint.g;
      out[o + 2] = tint.b;
      out[o + 3] = 255;
    } else if (bits[i]) {
      out[o] = tint.r;
      out[o + 1] = tint.g;
      out[o + 2] = tint.b;
      out[o + 3] = tint.alpha;
    }
  }
  return out;
}
