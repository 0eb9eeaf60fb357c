#!/usr/bin/env node
import { parseArgs } from 'node:util';

import { dumpEntityVectors } from './dump';
import { parseModel } from './encoder';
import { createApp } from './server';

const USAGE = `usage:
  encoder-shim serve [--model hash:<dim>] [--port <port>] [--max-batch <n>]
  encoder-shim dump <entities.jsonl> <out_vectors> <out_ids> [--model hash:<dim>]`;

function fail(message: string): never {
  process.stderr.write(`error: ${message}\n`);
  process.exit(1);
}

function main(): void {
  const { values, positionals } = parseArgs({
    args: process.argv.slice(2),
    options: {
      model: { type: 'string', default: 'hash:32' },
      port: { type: 'string', default: '8901' },
      'max-batch': { type: 'string', default: '64' },
    },
    allowPositionals: true,
  });
  const command = positionals[0];
  let model: { name: string; dim: number };
  try {
    model = parseModel(values.model as string);
  } catch (err) {
    fail((err as Error).message); // model load failure: abort before serving
  }

  if (command === 'serve') {
    const port = Number(values.port);
    const maxBatch = Number(values['max-batch']);
    if (!Number.isInteger(port) || port < 0 || !Number.isInteger(maxBatch) || maxBatch < 1) {
      fail('--port must be an integer >= 0 and --max-batch an integer >= 1');
    }
    const app = createApp({ model: model.name, dim: model.dim, maxBatch });
    const server = app.listen(port, '127.0.0.1', () => {
      const address = server.address();
      const bound = typeof address === 'object' && address ? address.port : port;
      process.stdout.write(`listening on http://127.0.0.1:${bound}\n`);
      process.stdout.write(`model ${model.name} dim ${model.dim} max-batch ${maxBatch}\n`);
    });
    return;
  }

  if (command === 'dump') {
    const [, entities, outVectors, outIds] = positionals;
    if (!entities || !outVectors || !outIds) {
      process.stderr.write(USAGE + '\n');
      process.exit(2);
    }
    try {
      const count = dumpEntityVectors(entities, outVectors, outIds, model.dim);
      process.stdout.write(`dumped ${count} vectors (dim ${model.dim}) -> ${outVectors}\n`);
    } catch (err) {
      fail((err as Error).message);
    }
    return;
  }

  process.stderr.write(USAGE + '\n');
  process.exit(2);
}

main();
