/** Dataset loaders: CIFAR-100 (binary layout) and the synthetic image set.
 *
 * The synthetic set gives every class a seeded noise pattern derived from its
 * prompt text, so a pixel-statistics encoder aligns images with encoded
 * prompts the way a pretrained vision-language model aligns real photos with
 * captions. It exists to exercise the full pipeline without model weights.
 */

import * as fs from "node:fs";
import * as path from "node:path";

import { RawImage, addPixelNoise, patternImage } from "./image.js";
import { Rng, hashString } from "./rng.js";

export interface LabeledImage {
  id: number;
  label: number;
  image: RawImage;
}

export interface ImageDataset {
  source: string;
  classNames: string[];
  images: LabeledImage[];
}

export function renderPrompt(template: string, className: string): string {
  if (!template.includes("[Class]")) {
    throw new Error('prompt template must contain the "[Class]" placeholder');
  }
  return template.replaceAll("[Class]", className);
}

export interface SyntheticOptions {
  classes: number;
  perClass: number;
  size?: number;
  noise?: number;
  seed: number;
  promptTemplate: string;
}

export function syntheticDataset(options: SyntheticOptions): ImageDataset {
  const { classes, perClass, seed, promptTemplate } = options;
  if (classes < 2 || perClass < 1) {
    throw new Error("synthetic dataset needs classes >= 2 and perClass >= 1");
  }
  const size = options.size ?? 32;
  const noise = options.noise ?? 24;
  const classNames = Array.from({ length: classes }, (_, k) => `thing_${String(k).padStart(2, "0")}`);
  const rng = new Rng(seed);
  const images: LabeledImage[] = [];
  let id = 0;
  for (let k = 0; k < classes; k++) {
    const pattern = patternImage(hashString(renderPrompt(promptTemplate, classNames[k])), size);
    for (let i = 0; i < perClass; i++) {
      images.push({ id: id++, label: k, image: addPixelNoise(pattern, noise, rng.child(`sample_${k}_${i}`)) });
    }
  }
  return { source: `synthetic(classes=${classes},perClass=${perClass},seed=${seed})`, classNames, images };
}

const CIFAR_IMAGE_BYTES = 3072;
const CIFAR_RECORD_BYTES = 2 + CIFAR_IMAGE_BYTES; // coarse label, fine label, planar RGB

function planarToInterleaved(planar: Uint8Array): RawImage {
  const data = new Uint8Array(CIFAR_IMAGE_BYTES);
  for (let p = 0; p < 1024; p++) {
    data[p * 3] = planar[p];
    data[p * 3 + 1] = planar[1024 + p];
    data[p * 3 + 2] = planar[2048 + p];
  }
  return { width: 32, height: 32, data };
}

/** Reads the cifar-100-binary layout: train.bin/test.bin plus fine_label_names.txt. */
export function cifar100Dataset(root: string, split: "train" | "test" = "train", limit?: number): ImageDataset {
  const dir = fs.existsSync(path.join(root, "cifar-100-binary"))
    ? path.join(root, "cifar-100-binary")
    : root;
  const binPath = path.join(dir, `${split}.bin`);
  const namesPath = path.join(dir, "fine_label_names.txt");
  if (!fs.existsSync(binPath) || !fs.existsSync(namesPath)) {
    throw new Error(`CIFAR-100 binary files not found under ${dir}`);
  }
  const classNames = fs
    .readFileSync(namesPath, "utf-8")
    .split("\n")
    .map((line) => line.trim())
    .filter(Boolean);
  if (classNames.length !== 100) {
    throw new Error(`expected 100 fine label names, found ${classNames.length}`);
  }
  const blob = fs.readFileSync(binPath);
  if (blob.length % CIFAR_RECORD_BYTES !== 0) {
    throw new Error(`${binPath} length ${blob.length} is not a multiple of ${CIFAR_RECORD_BYTES}`);
  }
  const total = blob.length / CIFAR_RECORD_BYTES;
  const count = limit === undefined ? total : Math.min(limit, total);
  const images: LabeledImage[] = [];
  for (let i = 0; i < count; i++) {
    const base = i * CIFAR_RECORD_BYTES;
    const label = blob[base + 1]; // fine label
    const planar = new Uint8Array(blob.buffer, blob.byteOffset + base + 2, CIFAR_IMAGE_BYTES);
    images.push({ id: i, label, image: planarToInterleaved(planar) });
  }
  return { source: `cifar100:${split}`, classNames, images };
}
