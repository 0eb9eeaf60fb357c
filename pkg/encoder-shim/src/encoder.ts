import { createHash } from 'node:crypto';

// Stand-in encoder: deterministic pseudo-embeddings keyed on (language, text).
// A real deployment swaps this for actual model inference; everything else in
// the shim (protocol, batching, dump format) stays the same.

export interface EmbedItem {
  text: string;
  language: string;
}

export function parseModel(spec: string): { name: string; dim: number } {
  const match = /^hash:(\d+)$/.exec(spec);
  if (!match) {
    throw new Error(`cannot load model '${spec}': expected hash:<dim>`);
  }
  const dim = Number(match[1]);
  if (dim < 1) {
    throw new Error(`model dim must be >= 1, got ${dim}`);
  }
  return { name: spec, dim };
}

// sfc32: tiny public-domain PRNG; seeded from a SHA-256 of the input so the
// stream is stable across processes and platforms
function sfc32(a: number, b: number, c: number, d: number): () => number {
  return () => {
    a |= 0; b |= 0; c |= 0; d |= 0;
    const t = (((a + b) | 0) + d) | 0;
    d = (d + 1) | 0;
    a = b ^ (b >>> 9);
    b = (c + (c << 3)) | 0;
    c = (c << 21) | (c >>> 11);
    c = (c + t) | 0;
    return (t >>> 0) / 4294967296;
  };
}

export function hashVector(text: string, language: string, dim: number): number[] {
  // NUL separator so ("a", "bc") and ("ab", "c") never collide
  const digest = createHash('sha256')
    .update(language, 'utf8')
    .update('\0')
    .update(text, 'utf8')
    .digest();
  const next = sfc32(
    digest.readUInt32LE(0),
    digest.readUInt32LE(4),
    digest.readUInt32LE(8),
    digest.readUInt32LE(12),
  );
  const out: number[] = [];
  while (out.length < dim) {
    // Box-Muller: two uniforms -> two standard normals
    const u1 = 1 - next(); // (0, 1]: keeps the log finite
    const u2 = next();
    const radius = Math.sqrt(-2 * Math.log(u1));
    out.push(Math.fround(radius * Math.cos(2 * Math.PI * u2)));
    if (out.length < dim) {
      out.push(Math.fround(radius * Math.sin(2 * Math.PI * u2)));
    }
  }
  // float32-rounded so served vectors match the float32 dump file exactly
  return out;
}

export function encodeBatch(items: EmbedItem[], dim: number): number[][] {
  return items.map((item) => hashVector(item.text, item.language, dim));
}
