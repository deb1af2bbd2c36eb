/** Raw interleaved-RGB images and the deterministic pattern generator used by
 * the synthetic dataset and the mock encoder. */

import { Rng } from "./rng.js";

export interface RawImage {
  width: number;
  height: number;
  /** interleaved RGB, length = width * height * 3 */
  data: Uint8Array;
}

export function isWellFormed(image: RawImage): boolean {
  return (
    image.width > 0 &&
    image.height > 0 &&
    image.data.length === image.width * image.height * 3
  );
}

export function cloneImage(image: RawImage): RawImage {
  return { width: image.width, height: image.height, data: new Uint8Array(image.data) };
}

/** Seeded block-noise pattern; the visual identity of one synthetic class.
 * Low spatial frequency keeps the identity stable under small crops. */
export function patternImage(seed: number, size: number, blocks = 4): RawImage {
  const rng = new Rng(seed);
  const coarse = new Uint8Array(blocks * blocks * 3);
  for (let i = 0; i < coarse.length; i++) {
    coarse[i] = rng.int(256);
  }
  const data = new Uint8Array(size * size * 3);
  for (let y = 0; y < size; y++) {
    const by = Math.min(blocks - 1, Math.floor((y * blocks) / size));
    for (let x = 0; x < size; x++) {
      const bx = Math.min(blocks - 1, Math.floor((x * blocks) / size));
      for (let c = 0; c < 3; c++) {
        data[(y * size + x) * 3 + c] = coarse[(by * blocks + bx) * 3 + c];
      }
    }
  }
  return { width: size, height: size, data };
}

export function addPixelNoise(image: RawImage, amplitude: number, rng: Rng): RawImage {
  const out = cloneImage(image);
  for (let i = 0; i < out.data.length; i++) {
    const v = out.data[i] + rng.uniform(-amplitude, amplitude);
    out.data[i] = Math.max(0, Math.min(255, Math.round(v)));
  }
  return out;
}
