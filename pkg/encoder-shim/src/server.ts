import express, { Express, NextFunction, Request, Response } from 'express';

import { EmbedItem, encodeBatch } from './encoder';

export interface ShimOptions {
  model: string;
  dim: number;
  maxBatch: number;
}

function isEmbedItem(value: unknown): value is EmbedItem {
  return (
    typeof value === 'object' &&
    value !== null &&
    typeof (value as EmbedItem).text === 'string' &&
    typeof (value as EmbedItem).language === 'string'
  );
}

export function createApp(options: ShimOptions): Express {
  const app = express();
  app.use(express.json({ limit: '16mb' }));

  app.get('/health', (_req: Request, res: Response) => {
    res.json({ status: 'ok', dim: options.dim, model: options.model });
  });

  app.post('/embed', (req: Request, res: Response) => {
    const body = req.body as { items?: unknown; dim?: unknown };
    const items = body?.items;
    if (!Array.isArray(items) || !items.every(isEmbedItem)) {
      res.status(400).json({ error: 'items must be {text, language} objects' });
      return;
    }
    if (items.length > options.maxBatch) {
      res.status(413).json({ error: `batch exceeds ${options.maxBatch}` });
      return;
    }
    if (body.dim !== options.dim) {
      res.status(400).json({ error: `dim must be ${options.dim}` });
      return;
    }
    res.json({ vectors: encodeBatch(items, options.dim), dim: options.dim });
  });

  // body-parser failures (malformed JSON, oversize payload) land here
  app.use((err: Error & { status?: number }, _req: Request, res: Response, next: NextFunction) => {
    if (res.headersSent) {
      next(err);
      return;
    }
    const status = err.status === 413 ? 413 : 400;
    res.status(status).json({ error: status === 413 ? 'payload too large' : 'invalid JSON' });
  });

  return app;
}
