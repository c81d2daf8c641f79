/**
 * Inference backends behind the v1 protocol.
 *
 * The stub backend is fully deterministic and dependency-free: it exists so
 * the protocol surface can run (and be contract-tested) without a model.
 * Checkpoint-backed backends plug in through the same interface; a backend
 * without association heads reports `associationScores: false` and serves
 * zero matrices of the correct shape.
 */

import {
  EOS,
  GRND_CLOSE,
  GRND_OPEN,
  quadTokens,
  quantize,
} from './tokens.js';
import { InferResponseBody, Scores, zeroScores } from './protocol.js';

export interface Capabilities {
  backend: string;
  tasks: string[];
  associationScores: boolean;
}

export interface Backend {
  capabilities(): Capabilities;
  detect(image: Buffer, width: number, height: number): Promise<InferResponseBody>;
  ocr(image: Buffer, width: number, height: number): Promise<InferResponseBody>;
  ground(image: Buffer, width: number, height: number, caption: string): Promise<InferResponseBody>;
}

/**
 * Deterministic model stand-in: one panel spanning the page, one character
 * on the left third, one text block top-right with a tail under it.  OCR
 * yields a single placeholder record; grounding marks the first two caption
 * words as a character phrase over the stub character box.
 */
export class StubBackend implements Backend {
  capabilities(): Capabilities {
    return { backend: 'stub', tasks: ['detect', 'ocr', 'ground'], associationScores: false };
  }

  private layout(width: number, height: number) {
    const panel = quantize({ x0: 0, y0: 0, x1: width, y1: height }, width, height);
    const char = quantize(
      { x0: width * 0.08, y0: height * 0.2, x1: width * 0.38, y1: height * 0.9 },
      width,
      height,
    );
    const text = quantize(
      { x0: width * 0.55, y0: height * 0.05, x1: width * 0.95, y1: height * 0.35 },
      width,
      height,
    );
    const tail = quantize(
      { x0: width * 0.6, y0: height * 0.35, x1: width * 0.68, y1: height * 0.45 },
      width,
      height,
    );
    return { panel, char, text, tail };
  }

  async detect(_image: Buffer, width: number, height: number): Promise<InferResponseBody> {
    const { panel, char, text, tail } = this.layout(width, height);
    const tokens = [
      ...quadTokens(panel),
      '<panel>',
      ...quadTokens(text),
      '<text>',
      ...quadTokens(tail),
      '<tail>',
      ...quadTokens(char),
      '<char>',
      EOS,
    ];
    const scores: Scores = zeroScores(1, 1, 1);
    return { tokens, scores };
  }

  async ocr(_image: Buffer, width: number, height: number): Promise<InferResponseBody> {
    const { text } = this.layout(width, height);
    return { tokens: ['...', ...quadTokens(text), EOS] };
  }

  async ground(
    _image: Buffer,
    width: number,
    height: number,
    caption: string,
  ): Promise<InferResponseBody> {
    const { char } = this.layout(width, height);
    const words = caption.split(/\s+/).filter((w) => w.length > 0);
    if (words.length < 2) {
      return { tokens: [...words, EOS] };
    }
    const tokens = [
      GRND_OPEN,
      ...words.slice(0, 2),
      GRND_CLOSE,
      ...quadTokens(char),
      ...words.slice(2),
      EOS,
    ];
    return { tokens };
  }
}

export type BackendKind = 'stub' | 'florence';

export async function createBackend(kind: BackendKind, checkpoint?: string): Promise<Backend> {
  if (kind === 'stub') {
    return new StubBackend();
  }
  const { FlorenceBackend } = await import('./florence.js');
  return FlorenceBackend.load(checkpoint ?? 'onnx-community/Florence-2-base');
}
