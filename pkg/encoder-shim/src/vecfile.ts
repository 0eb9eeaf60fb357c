import { writeFileSync } from 'node:fs';

// MHELVEC1 layout: 8-byte ASCII magic, u32 LE count, u32 LE dim, then
// count * dim float32 LE values in row-major order
const MAGIC = 'MHELVEC1';
const HEADER_BYTES = 16;

export function writeVectorFile(
  vectorsPath: string,
  idsPath: string,
  vectors: number[][],
  ids: string[],
): number {
  if (vectors.length !== ids.length) {
    throw new Error(`got ${vectors.length} vectors for ${ids.length} ids`);
  }
  const dim = vectors.length > 0 ? vectors[0].length : 0;
  const buffer = Buffer.alloc(HEADER_BYTES + vectors.length * dim * 4);
  buffer.write(MAGIC, 0, 'ascii');
  buffer.writeUInt32LE(vectors.length, 8);
  buffer.writeUInt32LE(dim, 12);
  let offset = HEADER_BYTES;
  for (const row of vectors) {
    if (row.length !== dim) {
      throw new Error(`ragged vector: expected dim ${dim}, got ${row.length}`);
    }
    for (const value of row) {
      if (!Number.isFinite(value)) {
        throw new Error('vectors must be finite');
      }
      offset = buffer.writeFloatLE(value, offset);
    }
  }
  writeFileSync(vectorsPath, buffer);
  const lines = ids.map((qid) => JSON.stringify({ qid }) + '\n').join('');
  writeFileSync(idsPath, lines, 'utf8');
  return buffer.length;
}
