/** Pixel-space augmentation recipes.
 *
 * A recipe is an ordered list of op ids. The weak recipe must be a strict
 * subset of the strong one (light transforms shared, heavy ones extra), so a
 * strong view is always at least as perturbed as its weak sibling.
 */

import { RawImage, cloneImage } from "./image.js";
import { Rng } from "./rng.js";

export type AugmentOp = "crop" | "flip" | "jitter" | "cutout" | "noise";

export const DEFAULT_WEAK: AugmentOp[] = ["crop", "flip"];
export const DEFAULT_STRONG: AugmentOp[] = ["crop", "flip", "jitter", "cutout"];

const KNOWN_OPS: ReadonlySet<string> = new Set(["crop", "flip", "jitter", "cutout", "noise"]);

export function validateRecipes(weak: string[], strong: string[]): asserts weak is AugmentOp[] {
  for (const op of [...weak, ...strong]) {
    if (!KNOWN_OPS.has(op)) {
      throw new Error(`unknown augmentation op "${op}"`);
    }
  }
  const strongSet = new Set(strong);
  if (!weak.every((op) => strongSet.has(op)) || strong.length <= weak.length) {
    throw new Error("weak recipe must be a strict subset of the strong recipe");
  }
}

function padCrop(image: RawImage, pad: number, rng: Rng): RawImage {
  const { width, height } = image;
  const ox = rng.int(2 * pad + 1) - pad;
  const oy = rng.int(2 * pad + 1) - pad;
  const out = new Uint8Array(image.data.length);
  for (let y = 0; y < height; y++) {
    for (let x = 0; x < width; x++) {
      // reflect at the borders
      let sx = x + ox;
      let sy = y + oy;
      sx = sx < 0 ? -sx : sx >= width ? 2 * width - sx - 2 : sx;
      sy = sy < 0 ? -sy : sy >= height ? 2 * height - sy - 2 : sy;
      for (let c = 0; c < 3; c++) {
        out[(y * width + x) * 3 + c] = image.data[(sy * width + sx) * 3 + c];
      }
    }
  }
  return { width, height, data: out };
}

function maybeFlip(image: RawImage, rng: Rng): RawImage {
  if (rng.next() < 0.5) return cloneImage(image);
  const { width, height } = image;
  const out = new Uint8Array(image.data.length);
  for (let y = 0; y < height; y++) {
    for (let x = 0; x < width; x++) {
      for (let c = 0; c < 3; c++) {
        out[(y * width + x) * 3 + c] = image.data[(y * width + (width - 1 - x)) * 3 + c];
      }
    }
  }
  return { width, height, data: out };
}

function jitter(image: RawImage, rng: Rng): RawImage {
  const brightness = rng.uniform(-32, 32);
  const contrast = rng.uniform(0.75, 1.25);
  const out = cloneImage(image);
  for (let i = 0; i < out.data.length; i++) {
    const v = (out.data[i] - 128) * contrast + 128 + brightness;
    out.data[i] = Math.max(0, Math.min(255, Math.round(v)));
  }
  return out;
}

function cutout(image: RawImage, rng: Rng): RawImage {
  const side = Math.max(2, Math.floor(image.width / 4));
  const x0 = rng.int(image.width - side + 1);
  const y0 = rng.int(image.height - side + 1);
  const out = cloneImage(image);
  for (let y = y0; y < y0 + side; y++) {
    for (let x = x0; x < x0 + side; x++) {
      for (let c = 0; c < 3; c++) {
        out.data[(y * image.width + x) * 3 + c] = 128;
      }
    }
  }
  return out;
}

function pixelNoise(image: RawImage, rng: Rng): RawImage {
  const out = cloneImage(image);
  for (let i = 0; i < out.data.length; i++) {
    const v = out.data[i] + rng.uniform(-16, 16);
    out.data[i] = Math.max(0, Math.min(255, Math.round(v)));
  }
  return out;
}

const OPS: Record<AugmentOp, (image: RawImage, rng: Rng) => RawImage> = {
  crop: (img, rng) => padCrop(img, Math.max(1, Math.floor(img.width / 8)), rng),
  flip: maybeFlip,
  jitter,
  cutout,
  noise: pixelNoise,
};

export function applyRecipe(image: RawImage, recipe: AugmentOp[], rng: Rng): RawImage {
  let out = image;
  for (const op of recipe) {
    out = OPS[op](out, rng);
  }
  return out === image ? cloneImage(image) : out;
}
