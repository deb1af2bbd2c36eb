/** Binary embedding-bundle format (little-endian), matching the engine:
 *
 *   magic "LFTB" | version u32 | d u32 | K u32 | n u64
 *   n records of { id u64, label i32, weak f32*d, strong f32*d }
 *   manifest_len u64 | manifest JSON (class_names, source, seed, ...)
 *
 * Labels: class index in [0, K), -1 unlabeled, -2 evaluation-only OOD flag.
 * Prototype files reuse the layout with n = K, label = class index, and the
 * strong view duplicated from the weak one.
 */

export const MAGIC = "LFTB";
export const FORMAT_VERSION = 1;

const HEADER_BYTES = 4 + 4 + 4 + 4 + 8;

export interface BundleRecord {
  id: number;
  label: number;
  weak: Float32Array;
  strong: Float32Array;
}

export interface Bundle {
  d: number;
  K: number;
  classNames: string[];
  manifest: Record<string, unknown>;
  records: BundleRecord[];
}

export class FormatError extends Error {
  constructor(message: string, readonly offset?: number) {
    super(offset === undefined ? message : `${message} (at byte offset ${offset})`);
    this.name = "FormatError";
  }
}

export function encodeBundle(bundle: Bundle): Buffer {
  const { d, K, records } = bundle;
  for (const record of records) {
    if (record.weak.length !== d || record.strong.length !== d) {
      throw new FormatError(`record ${record.id} has views of the wrong dimension`);
    }
    if (![...record.weak, ...record.strong].every(Number.isFinite)) {
      throw new FormatError(`record ${record.id} has non-finite components`);
    }
    if (record.label < -2 || record.label >= K) {
      throw new FormatError(`record ${record.id} has label ${record.label} outside [-2, ${K})`);
    }
  }
  const ids = new Set(records.map((r) => r.id));
  if (ids.size !== records.length) {
    throw new FormatError("record ids must be unique");
  }

  const manifest = { ...bundle.manifest, class_names: bundle.classNames };
  const manifestBytes = Buffer.from(JSON.stringify(manifest, Object.keys(manifest).sort()), "utf-8");

  const recordBytes = 8 + 4 + 8 * d;
  const buffer = Buffer.alloc(HEADER_BYTES + records.length * recordBytes + 8 + manifestBytes.length);

  let offset = 0;
  buffer.write(MAGIC, offset, "ascii");
  offset += 4;
  offset = buffer.writeUInt32LE(FORMAT_VERSION, offset);
  offset = buffer.writeUInt32LE(d, offset);
  offset = buffer.writeUInt32LE(K, offset);
  offset = buffer.writeBigUInt64LE(BigInt(records.length), offset);

  for (const record of records) {
    offset = buffer.writeBigUInt64LE(BigInt(record.id), offset);
    offset = buffer.writeInt32LE(record.label, offset);
    for (const v of record.weak) offset = buffer.writeFloatLE(v, offset);
    for (const v of record.strong) offset = buffer.writeFloatLE(v, offset);
  }

  offset = buffer.writeBigUInt64LE(BigInt(manifestBytes.length), offset);
  manifestBytes.copy(buffer, offset);
  return buffer;
}

export function decodeBundle(data: Buffer): Bundle {
  if (data.length < HEADER_BYTES) {
    throw new FormatError("file too short for header", data.length);
  }
  if (data.toString("ascii", 0, 4) !== MAGIC) {
    throw new FormatError(`bad magic ${JSON.stringify(data.toString("ascii", 0, 4))}`, 0);
  }
  const version = data.readUInt32LE(4);
  if (version !== FORMAT_VERSION) {
    throw new FormatError(`unsupported format version ${version}`, 4);
  }
  const d = data.readUInt32LE(8);
  if (d === 0) {
    throw new FormatError("embedding dimension must be positive", 8);
  }
  const K = data.readUInt32LE(12);
  const n = Number(data.readBigUInt64LE(16));

  const recordBytes = 8 + 4 + 8 * d;
  const recordsEnd = HEADER_BYTES + n * recordBytes;
  if (data.length < recordsEnd) {
    throw new FormatError(
      `record payload truncated: header declares ${n} records (${n * recordBytes} bytes)`,
      data.length,
    );
  }

  const records: BundleRecord[] = [];
  let offset = HEADER_BYTES;
  for (let i = 0; i < n; i++) {
    const id = Number(data.readBigUInt64LE(offset));
    offset += 8;
    const label = data.readInt32LE(offset);
    offset += 4;
    const weak = new Float32Array(d);
    for (let j = 0; j < d; j++, offset += 4) weak[j] = data.readFloatLE(offset);
    const strong = new Float32Array(d);
    for (let j = 0; j < d; j++, offset += 4) strong[j] = data.readFloatLE(offset);
    records.push({ id, label, weak, strong });
  }

  if (data.length < recordsEnd + 8) {
    throw new FormatError("missing manifest length", recordsEnd);
  }
  const manifestLen = Number(data.readBigUInt64LE(recordsEnd));
  const manifestStart = recordsEnd + 8;
  if (data.length < manifestStart + manifestLen) {
    throw new FormatError("manifest truncated", data.length);
  }
  let manifest: Record<string, unknown>;
  try {
    manifest = JSON.parse(data.toString("utf-8", manifestStart, manifestStart + manifestLen));
  } catch (err) {
    throw new FormatError(`manifest is not valid JSON: ${err}`, manifestStart);
  }
  const classNames = manifest["class_names"];
  if (!Array.isArray(classNames) || classNames.length !== K) {
    throw new FormatError(`manifest must carry exactly ${K} class names`, manifestStart);
  }
  delete manifest["class_names"];
  return { d, K, classNames: classNames as string[], manifest, records };
}

export function encodePrototypes(
  vectors: Float32Array[],
  classNames: string[],
  temperature: number,
  source: string,
): Buffer {
  if (vectors.length !== classNames.length) {
    throw new FormatError("prototype count must match class names");
  }
  const d = vectors[0]?.length ?? 0;
  return encodeBundle({
    d,
    K: vectors.length,
    classNames,
    manifest: { source, temperature },
    records: vectors.map((v, k) => ({
      id: k,
      label: k,
      weak: v,
      strong: new Float32Array(v),
    })),
  });
}
