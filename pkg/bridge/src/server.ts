/**
 * HTTP server exposing a Backend behind the v1 wire protocol:
 *
 *   GET  /v1/health
 *   POST /v1/detect | /v1/ocr | /v1/ground
 *
 * Responses and error bodies are shaped identically to the fixture mock so
 * the shared contract corpus passes against either server.
 */

import http from 'node:http';
import { AddressInfo } from 'node:net';

import { Backend } from './backend.js';
import {
  InferTask,
  PROTOCOL_VERSION,
  RequestError,
  invalidRequest,
  notFound,
  validateInferBody,
} from './protocol.js';

const INFER_TASKS: InferTask[] = ['detect', 'ocr', 'ground'];

export interface BridgeServer {
  port: number;
  baseUrl: string;
  close(): Promise<void>;
}

function sendJson(res: http.ServerResponse, status: number, body: unknown): void {
  const payload = Buffer.from(JSON.stringify(body), 'utf-8');
  res.writeHead(status, {
    'Content-Type': 'application/json',
    'Content-Length': payload.length,
  });
  res.end(payload);
}

function readBody(req: http.IncomingMessage, limit = 64 * 1024 * 1024): Promise<Buffer> {
  return new Promise((resolve, reject) => {
    const chunks: Buffer[] = [];
    let size = 0;
    req.on('data', (chunk: Buffer) => {
      size += chunk.length;
      if (size > limit) {
        reject(invalidRequest('request body too large'));
        req.destroy();
        return;
      }
      chunks.push(chunk);
    });
    req.on('end', () => resolve(Buffer.concat(chunks)));
    req.on('error', reject);
  });
}

async function handle(backend: Backend, req: http.IncomingMessage, res: http.ServerResponse): Promise<void> {
  const url = req.url ?? '/';
  if (req.method === 'GET') {
    if (url === `/${PROTOCOL_VERSION}/health`) {
      const caps = backend.capabilities();
      sendJson(res, 200, {
        status: 'ok',
        protocol: PROTOCOL_VERSION,
        backend: caps.backend,
        tasks: caps.tasks,
        association_scores: caps.associationScores,
      });
      return;
    }
    throw notFound(`unknown endpoint ${url}`);
  }
  if (req.method !== 'POST') {
    throw notFound(`unknown endpoint ${url}`);
  }
  const parts = url.replace(/^\/+|\/+$/g, '').split('/');
  if (parts.length !== 2 || parts[0] !== PROTOCOL_VERSION || !INFER_TASKS.includes(parts[1] as InferTask)) {
    throw notFound(`unknown endpoint ${url}`);
  }
  const task = parts[1] as InferTask;

  const raw = await readBody(req);
  let body: unknown;
  try {
    body = JSON.parse(raw.toString('utf-8'));
  } catch {
    throw invalidRequest('request body is not valid JSON');
  }
  const valid = validateInferBody(task, body);
  const response =
    task === 'detect'
      ? await backend.detect(valid.image, valid.width, valid.height)
      : task === 'ocr'
        ? await backend.ocr(valid.image, valid.width, valid.height)
        : await backend.ground(valid.image, valid.width, valid.height, valid.caption as string);
  sendJson(res, 200, response);
}

export function serve(backend: Backend, port = 0, host = '127.0.0.1'): Promise<BridgeServer> {
  const server = http.createServer((req, res) => {
    handle(backend, req, res).catch((err) => {
      if (err instanceof RequestError) {
        sendJson(res, err.status, err.body());
      } else {
        sendJson(res, 500, {
          error: { code: 'internal', message: String(err?.message ?? err) },
        });
      }
    });
  });
  return new Promise((resolve, reject) => {
    server.once('error', reject);
    server.listen(port, host, () => {
      const address = server.address() as AddressInfo;
      resolve({
        port: address.port,
        baseUrl: `http://${host}:${address.port}`,
        close: () =>
          new Promise<void>((done, fail) =>
            server.close((err) => (err ? fail(err) : done())),
          ),
      });
    });
  });
}
