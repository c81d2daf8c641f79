/**
 * Canonical token notation for the v1 protocol.
 *
 *   <loc_k>                       location token, k in [0, 999]
 *   <panel> <char> <text> <tail>  class tokens
 *   <grnd> ... </grnd>            grounded-phrase span markers
 *   </s>                          end of sequence
 *
 * A detect stream is (loc x4, class)* </s>; an OCR stream is
 * (word+, loc x4)* </s>; a ground stream is caption words with inline
 * spans, each closed span followed by at least one location quad.
 */

export const EOS = '</s>';
export const GRND_OPEN = '<grnd>';
export const GRND_CLOSE = '</grnd>';

export const CLASS_TOKENS = ['<panel>', '<char>', '<text>', '<tail>'] as const;
export type ClassToken = (typeof CLASS_TOKENS)[number];

const LOC_RE = /^<loc_(\d+)>$/;

export interface QuadBox {
  bxMin: number;
  byMin: number;
  bxMax: number;
  byMax: number;
}

export function locToken(k: number): string {
  if (!Number.isInteger(k) || k < 0 || k > 999) {
    throw new Error(`location bin out of range: ${k}`);
  }
  return `<loc_${k}>`;
}

export function locValue(token: string): number | null {
  const m = LOC_RE.exec(token);
  if (!m) return null;
  const k = Number(m[1]);
  return k;
}

export function quadTokens(box: QuadBox): string[] {
  return [box.bxMin, box.byMin, box.bxMax, box.byMax].map(locToken);
}

/** Quantize a pixel box onto the 1000-bin grid: clamp(floor(c/d*1000), 0, 999). */
export function quantize(
  box: { x0: number; y0: number; x1: number; y1: number },
  width: number,
  height: number,
): QuadBox {
  const bin = (c: number, d: number) => Math.min(Math.max(Math.floor((c / d) * 1000), 0), 999);
  return {
    bxMin: bin(box.x0, width),
    byMin: bin(box.y0, height),
    bxMax: bin(box.x1, width),
    byMax: bin(box.y1, height),
  };
}

export class TokenGrammarError extends Error {
  constructor(
    public readonly index: number,
    public readonly reason: string,
  ) {
    super(`token ${index}: ${reason}`);
  }
}

export interface DetectionCounts {
  panel: number;
  char: number;
  text: number;
  tail: number;
}

/** Validate a detect stream and count nodes per class. */
export function validateDetectStream(tokens: string[]): DetectionCounts {
  const counts: DetectionCounts = { panel: 0, char: 0, text: 0, tail: 0 };
  let i = 0;
  for (;;) {
    if (i >= tokens.length) throw new TokenGrammarError(tokens.length, 'missing EOS');
    if (tokens[i] === EOS) {
      if (i + 1 < tokens.length) throw new TokenGrammarError(i + 1, 'trailing tokens after EOS');
      return counts;
    }
    for (let j = 0; j < 4; j++) {
      if (i >= tokens.length) throw new TokenGrammarError(tokens.length, 'missing EOS');
      const k = locValue(tokens[i]);
      if (k === null || k > 999) {
        throw new TokenGrammarError(i, `expected location token, got ${tokens[i]}`);
      }
      i += 1;
    }
    if (i >= tokens.length) throw new TokenGrammarError(tokens.length, 'missing EOS');
    const cls = tokens[i];
    if (!(CLASS_TOKENS as readonly string[]).includes(cls)) {
      throw new TokenGrammarError(i, `unknown class token ${cls}`);
    }
    counts[cls.slice(1, -1) as keyof DetectionCounts] += 1;
    i += 1;
  }
}

/** Validate an OCR stream: maximal word runs each followed by exactly 4 locs. */
export function validateOcrStream(tokens: string[]): number {
  let records = 0;
  let words = 0;
  let i = 0;
  for (;;) {
    if (i >= tokens.length) throw new TokenGrammarError(tokens.length, 'missing EOS');
    const tok = tokens[i];
    if (tok === EOS) {
      if (words > 0) throw new TokenGrammarError(i, 'text block without a location quad');
      if (i + 1 < tokens.length) throw new TokenGrammarError(i + 1, 'trailing tokens after EOS');
      return records;
    }
    const k = locValue(tok);
    if (k !== null) {
      if (k > 999) throw new TokenGrammarError(i, `location bin out of range: ${tok}`);
      if (words === 0) throw new TokenGrammarError(i, 'location tokens with no preceding text');
      for (let j = 0; j < 4; j++) {
        if (i >= tokens.length) throw new TokenGrammarError(tokens.length, 'missing EOS');
        const kk = locValue(tokens[i]);
        if (kk === null || kk > 999) {
          throw new TokenGrammarError(i, `expected location token ${j + 1}/4, got ${tokens[i]}`);
        }
        i += 1;
      }
      records += 1;
      words = 0;
    } else if (tok === GRND_OPEN || tok === GRND_CLOSE || (CLASS_TOKENS as readonly string[]).includes(tok)) {
      throw new TokenGrammarError(i, `unexpected token ${tok} in OCR stream`);
    } else {
      words += 1;
      i += 1;
    }
  }
}

/** Validate a grounded-caption stream; returns the number of phrase spans. */
export function validateGroundStream(tokens: string[]): number {
  let spans = 0;
  let i = 0;
  for (;;) {
    if (i >= tokens.length) throw new TokenGrammarError(tokens.length, 'missing EOS');
    const tok = tokens[i];
    if (tok === EOS) {
      if (i + 1 < tokens.length) throw new TokenGrammarError(i + 1, 'trailing tokens after EOS');
      return spans;
    }
    if (tok === GRND_OPEN) {
      i += 1;
      let spanWords = 0;
      for (;;) {
        if (i >= tokens.length) throw new TokenGrammarError(tokens.length, 'unclosed grounding span');
        const t = tokens[i];
        if (t === GRND_CLOSE) break;
        if (t === GRND_OPEN) throw new TokenGrammarError(i, 'nested grounding span');
        if (t === EOS) throw new TokenGrammarError(i, 'unclosed grounding span');
        if (locValue(t) !== null || (CLASS_TOKENS as readonly string[]).includes(t)) {
          throw new TokenGrammarError(i, `unexpected token ${t} inside grounding span`);
        }
        spanWords += 1;
        i += 1;
      }
      if (spanWords === 0) throw new TokenGrammarError(i, 'empty grounding span');
      i += 1;
      let quads = 0;
      while (i < tokens.length && locValue(tokens[i]) !== null) {
        for (let j = 0; j < 4; j++) {
          if (i >= tokens.length) throw new TokenGrammarError(tokens.length, 'missing EOS');
          const k = locValue(tokens[i]);
          if (k === null || k > 999) {
            throw new TokenGrammarError(i, `incomplete location quad at ${tokens[i]}`);
          }
          i += 1;
        }
        quads += 1;
      }
      if (quads === 0) throw new TokenGrammarError(Math.min(i, tokens.length), 'grounding span with zero location quads');
      spans += 1;
    } else if (tok === GRND_CLOSE) {
      throw new TokenGrammarError(i, 'span close without open');
    } else if (locValue(tok) !== null) {
      throw new TokenGrammarError(i, 'location token outside a grounding context');
    } else if ((CLASS_TOKENS as readonly string[]).includes(tok)) {
      throw new TokenGrammarError(i, `unexpected token ${tok} in caption stream`);
    } else {
      i += 1;
    }
  }
}
