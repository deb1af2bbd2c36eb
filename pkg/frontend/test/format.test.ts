import { describe, expect, it } from "vitest";

import { Bundle, FormatError, decodeBundle, encodeBundle, encodePrototypes } from "../src/format.js";
import { Rng } from "../src/rng.js";

function randomBundle(seed: number): Bundle {
  const rng = new Rng(seed);
  const d = 2 + rng.int(8);
  const K = 2 + rng.int(4);
  const n = 1 + rng.int(30);
  const ids = new Set<number>();
  while (ids.size < n) ids.add(rng.int(100000));
  const records = [...ids].map((id) => ({
    id,
    label: rng.int(K + 2) - 2,
    weak: Float32Array.from({ length: d }, () => rng.uniform(-3, 3)),
    strong: Float32Array.from({ length: d }, () => rng.uniform(-3, 3)),
  }));
  return { d, K, classNames: Array.from({ length: K }, (_, k) => `c${k}`), manifest: { source: "test", seed }, records };
}

describe("bundle encoding", () => {
  it("round-trips arbitrary bundles bit-exactly", () => {
    for (let seed = 1; seed <= 20; seed++) {
      const bundle = randomBundle(seed);
      const decoded = decodeBundle(encodeBundle(bundle));
      expect(decoded.d).toBe(bundle.d);
      expect(decoded.K).toBe(bundle.K);
      expect(decoded.classNames).toEqual(bundle.classNames);
      expect(decoded.manifest).toEqual(bundle.manifest);
      expect(decoded.records.length).toBe(bundle.records.length);
      for (let i = 0; i < bundle.records.length; i++) {
        expect(decoded.records[i].id).toBe(bundle.records[i].id);
        expect(decoded.records[i].label).toBe(bundle.records[i].label);
        expect([...decoded.records[i].weak]).toEqual([...bundle.records[i].weak]);
        expect([...decoded.records[i].strong]).toEqual([...bundle.records[i].strong]);
      }
    }
  });

  it("writes the documented header layout", () => {
    const bundle = randomBundle(3);
    const blob = encodeBundle(bundle);
    expect(blob.toString("ascii", 0, 4)).toBe("LFTB");
    expect(blob.readUInt32LE(4)).toBe(1);
    expect(blob.readUInt32LE(8)).toBe(bundle.d);
    expect(blob.readUInt32LE(12)).toBe(bundle.K);
    expect(Number(blob.readBigUInt64LE(16))).toBe(bundle.records.length);
  });

  it("is deterministic for equal inputs", () => {
    const a = encodeBundle(randomBundle(7));
    const b = encodeBundle(randomBundle(7));
    expect(a.equals(b)).toBe(true);
  });

  it("rejects a bad magic with its offset", () => {
    const blob = encodeBundle(randomBundle(1));
    blob.write("NOPE", 0, "ascii");
    expect(() => decodeBundle(blob)).toThrowError(FormatError);
    try {
      decodeBundle(blob);
    } catch (err) {
      expect((err as FormatError).offset).toBe(0);
    }
  });

  it("rejects an unsupported version", () => {
    const blob = encodeBundle(randomBundle(1));
    blob.writeUInt32LE(9, 4);
    expect(() => decodeBundle(blob)).toThrowError(/version/);
  });

  it("rejects truncated record payloads", () => {
    const blob = encodeBundle(randomBundle(2));
    expect(() => decodeBundle(blob.subarray(0, blob.length - 40))).toThrowError(/truncated/);
  });

  it("rejects a header count larger than the payload", () => {
    const blob = encodeBundle(randomBundle(2));
    blob.writeBigUInt64LE(BigInt(100000), 16);
    expect(() => decodeBundle(blob)).toThrowError(/truncated/);
  });

  it("rejects non-finite vectors and duplicate ids at encode time", () => {
    const bundle = randomBundle(4);
    bundle.records[0].weak[0] = Number.NaN;
    expect(() => encodeBundle(bundle)).toThrowError(/non-finite/);

    const dupes = randomBundle(5);
    dupes.records[1].id = dupes.records[0].id;
    expect(() => encodeBundle(dupes)).toThrowError(/unique/);
  });
});

describe("prototype files", () => {
  it("stores one labeled record per class with duplicated views", () => {
    const rng = new Rng(11);
    const vectors = Array.from({ length: 5 }, () =>
      Float32Array.from({ length: 8 }, () => rng.uniform(-1, 1)),
    );
    const blob = encodePrototypes(vectors, ["a", "b", "c", "d", "e"], 16, "prototypes:test");
    const decoded = decodeBundle(blob);
    expect(decoded.K).toBe(5);
    expect(decoded.records.length).toBe(5);
    expect(decoded.manifest["temperature"]).toBe(16);
    for (const record of decoded.records) {
      expect(record.label).toBe(record.id);
      expect([...record.strong]).toEqual([...record.weak]);
    }
  });
});
