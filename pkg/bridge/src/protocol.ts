/**
 * v1 wire protocol types and request validation.
 *
 * Validation rules mirror the fixture mock byte-for-byte so both servers
 * return identical error bodies: {"error": {"code": ..., "message": ...}}.
 */

export const PROTOCOL_VERSION = 'v1';

export type InferTask = 'detect' | 'ocr' | 'ground';

export interface ScoreBlock {
  shape: [number, number];
  data: number[];
}

export interface Scores {
  text_char: ScoreBlock;
  char_char: ScoreBlock;
  text_tail: ScoreBlock;
}

export interface InferResponseBody {
  tokens: string[];
  scores?: Scores;
}

export interface ErrorBody {
  error: { code: string; message: string; [extra: string]: unknown };
}

export interface ValidInferRequest {
  image: Buffer;
  width: number;
  height: number;
  caption?: string;
}

export class RequestError extends Error {
  constructor(
    public readonly status: number,
    public readonly code: string,
    message: string,
  ) {
    super(message);
  }

  body(): ErrorBody {
    return { error: { code: this.code, message: this.message } };
  }
}

export function invalidRequest(message: string): RequestError {
  return new RequestError(400, 'invalid_request', message);
}

export function notFound(message: string): RequestError {
  return new RequestError(404, 'not_found', message);
}

function decodeBase64Strict(value: string): Buffer | null {
  if (!/^[A-Za-z0-9+/]*={0,2}$/.test(value) || value.length % 4 !== 0) return null;
  const buf = Buffer.from(value, 'base64');
  if (buf.toString('base64') !== value) return null;
  return buf;
}

/** Validate an inference request body; throws RequestError on violation. */
export function validateInferBody(task: InferTask, body: unknown): ValidInferRequest {
  if (typeof body !== 'object' || body === null || Array.isArray(body)) {
    throw invalidRequest('request body must be a JSON object');
  }
  const obj = body as Record<string, unknown>;
  const allowed = new Set(['image', 'width', 'height']);
  if (task === 'ground') allowed.add('caption');
  const unknown = Object.keys(obj)
    .filter((k) => !allowed.has(k))
    .sort();
  if (unknown.length > 0) {
    throw invalidRequest(`unexpected fields: ['${unknown.join("', '")}']`);
  }
  const imageB64 = obj.image;
  if (typeof imageB64 !== 'string' || imageB64.length === 0) {
    throw invalidRequest("field 'image' must be a nonempty base64 string");
  }
  const image = decodeBase64Strict(imageB64);
  if (image === null) {
    throw invalidRequest("field 'image' is not valid base64");
  }
  for (const name of ['width', 'height'] as const) {
    const v = obj[name];
    if (typeof v !== 'number' || !Number.isInteger(v) || v < 1) {
      throw invalidRequest(`field '${name}' must be a positive integer`);
    }
  }
  const out: ValidInferRequest = {
    image,
    width: obj.width as number,
    height: obj.height as number,
  };
  if (task === 'ground') {
    if (typeof obj.caption !== 'string' || obj.caption.length === 0) {
      throw invalidRequest("ground requests require a nonempty 'caption'");
    }
    out.caption = obj.caption;
  }
  return out;
}

export function zeroScores(nText: number, nChar: number, nTail: number): Scores {
  const block = (rows: number, cols: number): ScoreBlock => ({
    shape: [rows, cols],
    data: new Array(rows * cols).fill(0),
  });
  return {
    text_char: block(nText, nChar),
    char_char: block(nChar, nChar),
    text_tail: block(nText, nTail),
  };
}
