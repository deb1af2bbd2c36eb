/** The extraction pipeline: dataset -> augmented views -> encoder -> files.
 *
 * Each source image yields one record holding the encodings of its weak and
 * strong views (id-linked to the same image); each class name yields one
 * prototype vector by encoding the rendered prompt. Both outputs use the
 * engine's binary bundle layout. Deterministic per (spec, seed) when the
 * encoder is deterministic.
 */

import * as fs from "node:fs";
import * as path from "node:path";

import { AugmentOp, DEFAULT_STRONG, DEFAULT_WEAK, applyRecipe, validateRecipes } from "./augment.js";
import { ImageDataset, cifar100Dataset, renderPrompt, syntheticDataset } from "./datasets.js";
import { Encoder, ExtractError, MockEncoder } from "./encoder.js";
import { Bundle, BundleRecord, encodeBundle, encodePrototypes } from "./format.js";
import { isWellFormed } from "./image.js";
import { Rng, hashString } from "./rng.js";

export interface ExtractSpec {
  /** "synthetic" or "cifar100" */
  dataset: string;
  datasetRoot?: string;
  /** "mock" or "clip:<model id>" */
  model: string;
  promptTemplate: string;
  weakRecipe: string[];
  strongRecipe: string[];
  outBundle: string;
  outPrototypes: string;
  seed: number;
  /** mock encoder width */
  dim?: number;
  /** synthetic dataset shape */
  classes?: number;
  perClass?: number;
  /** cap on source images (e.g. CIFAR subsampling) */
  limit?: number;
}

export const DEFAULT_TEMPLATE = "a photo of a [Class]";

export interface ExtractResult {
  records: number;
  skipped: number[];
  prototypes: number;
  bundlePath: string;
  prototypesPath: string;
}

async function buildEncoder(spec: ExtractSpec): Promise<Encoder> {
  if (spec.model === "mock") {
    return new MockEncoder(spec.dim ?? 64);
  }
  if (spec.model.startsWith("clip:")) {
    const { ClipEncoder } = await import("./encoder_clip.js");
    return ClipEncoder.load(spec.model.slice("clip:".length));
  }
  throw new ExtractError(`unknown model "${spec.model}"`, false);
}

function loadDataset(spec: ExtractSpec): ImageDataset {
  if (spec.dataset === "synthetic") {
    return syntheticDataset({
      classes: spec.classes ?? 10,
      perClass: spec.perClass ?? 50,
      seed: spec.seed,
      promptTemplate: spec.promptTemplate,
    });
  }
  if (spec.dataset === "cifar100") {
    if (!spec.datasetRoot) {
      throw new ExtractError("cifar100 needs --dataset-root", false);
    }
    return cifar100Dataset(spec.datasetRoot, "train", spec.limit);
  }
  throw new ExtractError(`unknown dataset "${spec.dataset}"`, false);
}

export async function extract(spec: ExtractSpec): Promise<ExtractResult> {
  validateRecipes(spec.weakRecipe, spec.strongRecipe);
  const weak = spec.weakRecipe as AugmentOp[];
  const strong = spec.strongRecipe as AugmentOp[];

  const dataset = loadDataset(spec);
  const encoder = await buildEncoder(spec);
  const root = new Rng((spec.seed ^ hashString(dataset.source)) >>> 0);

  const limit = spec.limit === undefined ? dataset.images.length : Math.min(spec.limit, dataset.images.length);
  const records: BundleRecord[] = [];
  const skipped: number[] = [];
  for (let i = 0; i < limit; i++) {
    const { id, label, image } = dataset.images[i];
    if (!isWellFormed(image)) {
      console.warn(`skipping malformed image id=${id}`);
      skipped.push(id);
      continue;
    }
    const weakView = applyRecipe(image, weak, root.child(`weak_${id}`));
    const strongView = applyRecipe(image, strong, root.child(`strong_${id}`));
    records.push({
      id,
      label,
      weak: await encoder.encodeImage(weakView),
      strong: await encoder.encodeImage(strongView),
    });
  }
  if (records.length === 0) {
    throw new ExtractError("no usable images in the dataset", false);
  }

  const prototypes: Float32Array[] = [];
  for (const name of dataset.classNames) {
    prototypes.push(await encoder.encodeText(renderPrompt(spec.promptTemplate, name)));
  }

  const bundle: Bundle = {
    d: encoder.dim,
    K: dataset.classNames.length,
    classNames: dataset.classNames,
    manifest: {
      source: dataset.source,
      seed: spec.seed,
      model: encoder.name,
      prompt_template: spec.promptTemplate,
      weak_recipe: weak,
      strong_recipe: strong,
      skipped_ids: skipped,
    },
    records,
  };

  fs.mkdirSync(path.dirname(path.resolve(spec.outBundle)), { recursive: true });
  fs.writeFileSync(spec.outBundle, encodeBundle(bundle));
  fs.mkdirSync(path.dirname(path.resolve(spec.outPrototypes)), { recursive: true });
  fs.writeFileSync(
    spec.outPrototypes,
    encodePrototypes(prototypes, dataset.classNames, encoder.temperature, `prototypes:${encoder.name}`),
  );

  return {
    records: records.length,
    skipped,
    prototypes: prototypes.length,
    bundlePath: spec.outBundle,
    prototypesPath: spec.outPrototypes,
  };
}

export function defaultSpec(partial: Partial<ExtractSpec>): ExtractSpec {
  return {
    dataset: "synthetic",
    model: "mock",
    promptTemplate: DEFAULT_TEMPLATE,
    weakRecipe: [...DEFAULT_WEAK],
    strongRecipe: [...DEFAULT_STRONG],
    outBundle: "out/bundle.lftb",
    outPrototypes: "out/prototypes.lftb",
    seed: 0,
    ...partial,
  };
}
