/** Encoders map images and prompt texts into one shared embedding space.
 *
 * MockEncoder is a deterministic pixel-statistics encoder: it grid-pools a
 * flip-symmetrized grayscale view and normalizes it. Paired with the
 * synthetic dataset (whose class patterns are seeded from prompt text) it
 * reproduces the text-image alignment a pretrained model provides, without
 * any weights. Real encoders plug in behind the same interface.
 */

import { RawImage, isWellFormed, patternImage } from "./image.js";
import { hashString } from "./rng.js";

export interface Encoder {
  readonly name: string;
  readonly dim: number;
  /** softmax temperature the prototype file should advertise */
  readonly temperature: number;
  encodeImage(image: RawImage): Promise<Float32Array>;
  encodeText(text: string): Promise<Float32Array>;
}

export class ExtractError extends Error {
  constructor(message: string, readonly retryable: boolean) {
    super(message);
    this.name = "ExtractError";
  }
}

export class MockEncoder implements Encoder {
  readonly name: string;
  readonly temperature = 16;

  constructor(readonly dim: number = 64, private readonly textImageSize = 32) {
    if (dim < 4) {
      throw new Error("mock encoder needs dim >= 4");
    }
    this.name = `mock-${dim}`;
  }

  private pool(image: RawImage): Float32Array {
    if (!isWellFormed(image)) {
      throw new ExtractError("malformed image", false);
    }
    const grid = Math.ceil(Math.sqrt(this.dim));
    const sums = new Float64Array(grid * grid);
    const counts = new Float64Array(grid * grid);
    const { width, height, data } = image;
    for (let y = 0; y < height; y++) {
      const gy = Math.min(grid - 1, Math.floor((y * grid) / height));
      for (let x = 0; x < width; x++) {
        const gx = Math.min(grid - 1, Math.floor((x * grid) / width));
        const gxm = Math.min(grid - 1, Math.floor(((width - 1 - x) * grid) / width));
        const base = (y * width + x) * 3;
        const gray = (data[base] + data[base + 1] + data[base + 2]) / 3;
        // symmetrize across the vertical axis: horizontal flips are free
        sums[gy * grid + gx] += gray / 2;
        counts[gy * grid + gx] += 0.5;
        sums[gy * grid + gxm] += gray / 2;
        counts[gy * grid + gxm] += 0.5;
      }
    }
    const features = new Float64Array(this.dim);
    for (let i = 0; i < this.dim; i++) {
      features[i] = counts[i] > 0 ? sums[i] / counts[i] : 0;
    }
    const mean = features.reduce((a, b) => a + b, 0) / this.dim;
    let variance = 0;
    for (let i = 0; i < this.dim; i++) variance += (features[i] - mean) ** 2;
    const std = Math.sqrt(variance / this.dim) || 1;
    const out = new Float32Array(this.dim);
    for (let i = 0; i < this.dim; i++) out[i] = (features[i] - mean) / std;
    return out;
  }

  async encodeImage(image: RawImage): Promise<Float32Array> {
    return this.pool(image);
  }

  async encodeText(text: string): Promise<Float32Array> {
    return this.pool(patternImage(hashString(text), this.textImageSize));
  }
}
