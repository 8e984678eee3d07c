// Run-length mask coding, mirroring the server: counts alternate runs of
// zeros and ones over the row-major flattened mask, zeros first.

import type { MaskRLE } from "./protocol";

export function decodeMask(rle: MaskRLE): Uint8Array {
  const [h, w] = rle.size;
  const total = h * w;
  const out = new Uint8Array(total);
  let pos = 0;
  let value = 0;
  for (const run of rle.counts) {
    if (run < 0) throw new Error(`negative run length ${run}`);
    if (value === 1) out.fill(1, pos, pos + run);
    pos += run;
    value ^= 1;
  }
  if (pos !== total) {
    throw new Error(`run lengths sum to ${pos}, expected ${total}`);
  }
  return out;
}

export function encodeMask(bits: Uint8Array, height: number, width: number): MaskRLE {
  if (bits.length !== height * width) {
    throw new Error(`mask length ${bits.length} does not match ${height}x${width}`);
  }
  const counts: number[] = [];
  let value = 0;
  let run = 0;
  for (let i = 0; i < bits.length; i++) {
    const bit = bits[i] ? 1 : 0;
    if (bit === value) {
      run++;
    } else {
      counts.push(run);
      value = bit;
      run = 1;
    }
  }
  counts.push(run);
  return { size: [height, width], counts };
}

export function popcount(bits: Uint8Array): number {
  let n = 0;
  for (let i = 0; i < bits.length; i++) n += bits[i];
  return n;
}
