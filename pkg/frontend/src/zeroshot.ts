/** Cosine-prototype zero-shot scoring over extracted records; used to sanity
 * check an extraction (prototype classifier accuracy on labeled records). */

import { Bundle } from "./format.js";

function cosine(a: Float32Array, b: Float32Array): number {
  let dot = 0;
  let na = 0;
  let nb = 0;
  for (let i = 0; i < a.length; i++) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const denom = Math.sqrt(na) * Math.sqrt(nb);
  if (denom === 0) {
    throw new Error("zero-norm vector has no cosine similarity");
  }
  return dot / denom;
}

export function zeroShotPredict(embedding: Float32Array, prototypes: Float32Array[]): number {
  let best = 0;
  let bestScore = -Infinity;
  for (let k = 0; k < prototypes.length; k++) {
    const score = cosine(embedding, prototypes[k]);
    if (score > bestScore) {
      bestScore = score;
      best = k;
    }
  }
  return best;
}

/** Accuracy of the prototype classifier on the bundle's labeled weak views. */
export function zeroShotAccuracy(bundle: Bundle, prototypes: Bundle): number {
  const ordered: Float32Array[] = new Array(prototypes.K);
  for (const record of prototypes.records) {
    ordered[record.label] = record.weak;
  }
  let hits = 0;
  let total = 0;
  for (const record of bundle.records) {
    if (record.label < 0) continue;
    total += 1;
    if (zeroShotPredict(record.weak, ordered) === record.label) hits += 1;
  }
  if (total === 0) {
    throw new Error("bundle has no labeled records");
  }
  return hits / total;
}
