import { readFileSync } from 'node:fs';

import { hashVector } from './encoder';
import { writeVectorFile } from './vecfile';

interface EntityRow {
  qid: string;
  labels: Record<string, string>;
  descriptions?: Record<string, string>;
}

// Deterministic text choice so offline dumps and live /embed calls agree:
// prefer the English label, else the lexicographically first language; append
// the same-language description when there is one.
export function entityItem(row: EntityRow): { text: string; language: string } {
  const languages = Object.keys(row.labels).sort();
  const language = 'en' in row.labels ? 'en' : languages[0];
  const description = row.descriptions?.[language];
  const label = row.labels[language];
  return { text: description ? `${label} — ${description}` : label, language };
}

function parseEntity(line: string, lineno: number): EntityRow {
  let row: unknown;
  try {
    row = JSON.parse(line);
  } catch {
    throw new Error(`line ${lineno}: malformed JSON`);
  }
  const entity = row as EntityRow;
  if (typeof entity?.qid !== 'string' || entity.qid === '') {
    throw new Error(`line ${lineno}: qid missing or empty`);
  }
  const labels = entity.labels;
  if (
    typeof labels !== 'object' ||
    labels === null ||
    Object.keys(labels).length === 0 ||
    Object.values(labels).some((v) => typeof v !== 'string')
  ) {
    throw new Error(`line ${lineno}: labels must be a non-empty {language: label} object`);
  }
  return entity;
}

export function dumpEntityVectors(
  entitiesPath: string,
  outVectors: string,
  outIds: string,
  dim: number,
): number {
  const lines = readFileSync(entitiesPath, 'utf8').split('\n');
  const ids: string[] = [];
  const vectors: number[][] = [];
  lines.forEach((line, index) => {
    if (line.trim() === '') return;
    const entity = parseEntity(line, index + 1);
    const { text, language } = entityItem(entity);
    ids.push(entity.qid); // output row order == input line order
    vectors.push(hashVector(text, language, dim));
  });
  if (ids.length === 0) {
    throw new Error(`${entitiesPath}: no entities to dump`);
  }
  writeVectorFile(outVectors, outIds, vectors, ids);
  return ids.length;
}
