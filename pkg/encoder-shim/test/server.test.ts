import { Server } from 'node:http';
import { AddressInfo } from 'node:net';
import { afterAll, beforeAll, describe, expect, it } from 'vitest';

import { hashVector } from '../src/encoder';
import { createApp } from '../src/server';

const DIM = 24;
const MAX_BATCH = 8;
const ITEM = { text: 'Der Dom zu [ENT] Aachen [ENT] im Jahre 1902.', language: 'de' };

let server: Server;
let base: string;

beforeAll(async () => {
  const app = createApp({ model: `hash:${DIM}`, dim: DIM, maxBatch: MAX_BATCH });
  server = app.listen(0, '127.0.0.1');
  await new Promise((resolve) => server.once('listening', resolve));
  base = `http://127.0.0.1:${(server.address() as AddressInfo).port}`;
});

afterAll(() => {
  server.close();
});

async function embed(items: unknown, dim: number = DIM): Promise<Response> {
  return fetch(`${base}/embed`, {
    method: 'POST',
    headers: { 'content-type': 'application/json' },
    body: JSON.stringify({ items, dim }),
  });
}

describe('health', () => {
  it('reports status, dim, and model', async () => {
    const body = await (await fetch(`${base}/health`)).json();
    expect(body).toEqual({ status: 'ok', dim: DIM, model: `hash:${DIM}` });
  });
});

describe('embed', () => {
  it('returns one vector of the served dim per item', async () => {
    const response = await embed([ITEM]);
    expect(response.status).toBe(200);
    const body = await response.json();
    expect(body.dim).toBe(DIM);
    expect(body.vectors).toHaveLength(1);
    expect(body.vectors[0]).toHaveLength(DIM);
    expect(body.vectors[0].every((x: number) => Number.isFinite(x))).toBe(true);
  });

  it('serves exactly the stand-in encoder output', async () => {
    const body = await (await embed([ITEM])).json();
    expect(body.vectors[0]).toEqual(hashVector(ITEM.text, ITEM.language, DIM));
  });

  it('is deterministic across requests', async () => {
    const first = await (await embed([ITEM])).json();
    const second = await (await embed([ITEM])).json();
    expect(first.vectors).toEqual(second.vectors);
  });

  it('batches like repeated singles', async () => {
    const other = { text: 'La cathédrale de [ENT] Reims [ENT] en 1907.', language: 'fr' };
    const batched = (await (await embed([ITEM, other])).json()).vectors;
    const a = (await (await embed([ITEM])).json()).vectors[0];
    const b = (await (await embed([other])).json()).vectors[0];
    expect(batched).toEqual([a, b]);
  });

  it('keys on language, not just text', async () => {
    const de = (await (await embed([ITEM])).json()).vectors[0];
    const fi = (await (await embed([{ ...ITEM, language: 'fi' }])).json()).vectors[0];
    expect(de).not.toEqual(fi);
  });

  it('accepts an empty batch', async () => {
    const body = await (await embed([])).json();
    expect(body.vectors).toEqual([]);
  });
});

describe('embed errors', () => {
  it('rejects malformed JSON with 400', async () => {
    const response = await fetch(`${base}/embed`, {
      method: 'POST',
      headers: { 'content-type': 'application/json' },
      body: '{nope',
    });
    expect(response.status).toBe(400);
  });

  it('rejects a mismatched dim with 400', async () => {
    expect((await embed([ITEM], DIM + 1)).status).toBe(400);
  });

  it.each([
    [[{ text: 'no language' }]],
    [[{ language: 'en' }]],
    [[{ text: 5, language: 'en' }]],
    [['plain string']],
    ['not a list'],
  ])('rejects malformed items with 400 (%j)', async (items) => {
    expect((await embed(items)).status).toBe(400);
  });

  it('rejects oversize batches with 413 and accepts the maximum', async () => {
    const full = Array(MAX_BATCH).fill(ITEM);
    expect((await embed(full)).status).toBe(200);
    expect((await embed([...full, ITEM])).status).toBe(413);
  });
});
