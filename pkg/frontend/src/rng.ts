/** Deterministic RNG and hashing; every random draw in the extractor flows
 * through a seeded stream so identical specs produce identical bytes. */

export function hashString(text: string): number {
  // FNV-1a, 32-bit
  let h = 0x811c9dc5;
  for (let i = 0; i < text.length; i++) {
    h ^= text.charCodeAt(i);
    h = Math.imul(h, 0x01000193);
  }
  return h >>> 0;
}

export class Rng {
  private state: number;

  constructor(seed: number) {
    this.state = seed >>> 0;
    // avoid the all-zero fixed point
    if (this.state === 0) this.state = 0x9e3779b9;
  }

  /** mulberry32: uniform float in [0, 1) */
  next(): number {
    this.state = (this.state + 0x6d2b79f5) >>> 0;
    let t = this.state;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  }

  int(maxExclusive: number): number {
    return Math.floor(this.next() * maxExclusive);
  }

  uniform(lo: number, hi: number): number {
    return lo + (hi - lo) * this.next();
  }

  /** independent child stream, labeled so call order cannot collide */
  child(label: string): Rng {
    return new Rng((this.state ^ hashString(label)) >>> 0);
  }
}
