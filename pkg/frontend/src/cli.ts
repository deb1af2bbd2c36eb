#!/usr/bin/env node
/** loft-extract: encode an image dataset into the engine's bundle format. */

import { parseArgs } from "node:util";

import { DEFAULT_STRONG, DEFAULT_WEAK } from "./augment.js";
import { ExtractError } from "./encoder.js";
import { FormatError } from "./format.js";
import { DEFAULT_TEMPLATE, extract } from "./extract.js";

const USAGE = `usage: loft-extract --dataset {synthetic|cifar100} --out BUNDLE --prototypes FILE
                    [--dataset-root DIR] [--model mock|clip:<id>] [--dim N]
                    [--classes K] [--per-class N] [--limit N] [--seed N]
                    [--template "a photo of a [Class]"]
                    [--weak op,op] [--strong op,op,...]`;

function fail(message: string, code: number): never {
  console.error(`loft-extract: ${message}`);
  process.exit(code);
}

async function main(): Promise<void> {
  let values: Record<string, string | boolean | undefined>;
  try {
    ({ values } = parseArgs({
      options: {
        dataset: { type: "string" },
        "dataset-root": { type: "string" },
        model: { type: "string", default: "mock" },
        dim: { type: "string" },
        classes: { type: "string" },
        "per-class": { type: "string" },
        limit: { type: "string" },
        seed: { type: "string", default: "0" },
        template: { type: "string", default: DEFAULT_TEMPLATE },
        weak: { type: "string" },
        strong: { type: "string" },
        out: { type: "string" },
        prototypes: { type: "string" },
        help: { type: "boolean" },
      },
    }));
  } catch (err) {
    fail(`${(err as Error).message}\n${USAGE}`, 2);
  }
  if (values.help) {
    console.log(USAGE);
    return;
  }
  for (const flag of ["dataset", "out", "prototypes"] as const) {
    if (!values[flag]) fail(`--${flag} is required\n${USAGE}`, 2);
  }

  const num = (flag: string): number | undefined => {
    const raw = values[flag] as string | undefined;
    if (raw === undefined) return undefined;
    const parsed = Number(raw);
    if (!Number.isFinite(parsed)) fail(`--${flag} must be a number`, 2);
    return parsed;
  };

  try {
    const result = await extract({
      dataset: values.dataset as string,
      datasetRoot: values["dataset-root"] as string | undefined,
      model: values.model as string,
      promptTemplate: values.template as string,
      weakRecipe: values.weak ? (values.weak as string).split(",") : [...DEFAULT_WEAK],
      strongRecipe: values.strong ? (values.strong as string).split(",") : [...DEFAULT_STRONG],
      outBundle: values.out as string,
      outPrototypes: values.prototypes as string,
      seed: num("seed") ?? 0,
      dim: num("dim"),
      classes: num("classes"),
      perClass: num("per-class"),
      limit: num("limit"),
    });
    console.log(
      `wrote ${result.records} records to ${result.bundlePath} ` +
        `(${result.skipped.length} skipped) and ${result.prototypes} prototypes to ${result.prototypesPath}`,
    );
  } catch (err) {
    if (err instanceof ExtractError) {
      fail(`${err.message}${err.retryable ? " (retryable)" : ""}`, err.retryable ? 3 : 2);
    }
    if (err instanceof FormatError) {
      fail(err.message, 4);
    }
    if (err instanceof Error && "code" in err) {
      fail(err.message, 4);
    }
    throw err;
  }
}

main().catch((err) => {
  console.error(`loft-extract: ${err}`);
  process.exit(1);
});
