/** Optional adapter for a real pretrained vision-language encoder.
 *
 * Loaded lazily: the library is not a package dependency because it needs
 * native binaries and model weights that must already live on the machine
 * (set HF_HUB_OFFLINE/model cache as usual). Without them this module throws
 * a retryable ExtractError instead of breaking the build.
 */

import { RawImage } from "./image.js";
import { Encoder, ExtractError } from "./encoder.js";

interface ClipModules {
  pipeline: (task: string, model: string, options?: Record<string, unknown>) => Promise<any>;
  RawImage: { fromBlob(blob: Blob): Promise<any> };
}

async function loadLibrary(): Promise<ClipModules> {
  try {
    // eslint-disable-next-line @typescript-eslint/no-unsafe-return
    return (await import("@huggingface/transformers" as string)) as unknown as ClipModules;
  } catch (err) {
    throw new ExtractError(
      `pretrained encoder unavailable: install @huggingface/transformers and ` +
        `provide local model weights (${err})`,
      true,
    );
  }
}

export class ClipEncoder implements Encoder {
  readonly temperature = 100;
  private imagePipe: any;
  private textPipe: any;

  private constructor(readonly name: string, readonly dim: number, imagePipe: any, textPipe: any) {
    this.imagePipe = imagePipe;
    this.textPipe = textPipe;
  }

  static async load(modelId: string): Promise<ClipEncoder> {
    const lib = await loadLibrary();
    let imagePipe: any;
    let textPipe: any;
    try {
      imagePipe = await lib.pipeline("image-feature-extraction", modelId);
      textPipe = await lib.pipeline("feature-extraction", modelId);
    } catch (err) {
      throw new ExtractError(`failed to load model ${modelId}: ${err}`, true);
    }
    const probe = await textPipe("probe", { pooling: "mean", normalize: true });
    const dim = probe.data.length;
    return new ClipEncoder(modelId, dim, imagePipe, textPipe);
  }

  private toPng(image: RawImage): Uint8Array {
    // the pipeline accepts raw RGB tensors via its own RawImage type; keep a
    // minimal bridge that avoids a PNG encoder dependency
    return new Uint8Array(image.data);
  }

  async encodeImage(image: RawImage): Promise<Float32Array> {
    const output = await this.imagePipe(
      { data: this.toPng(image), width: image.width, height: image.height, channels: 3 },
      { pooling: "mean", normalize: true },
    );
    return Float32Array.from(output.data as Iterable<number>);
  }

  async encodeText(text: string): Promise<Float32Array> {
    const output = await this.textPipe(text, { pooling: "mean", normalize: true });
    return Float32Array.from(output.data as Iterable<number>);
  }
}
