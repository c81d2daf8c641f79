/**
 * Optional checkpoint-backed backend on top of `@huggingface/transformers`
 * (a Florence-2-style seq2seq vision-language model).
 *
 * The dependency is not installed by default; the module specifier is kept
 * dynamic so builds and tests do not require it.  Loading failures surface
 * at startup, never per request.  The checkpoint has no association heads,
 * so detection responses carry zero score matrices of the correct shape and
 * the health descriptor reports `association_scores: false`.
 */

import { Backend, Capabilities } from './backend.js';
import { InferResponseBody, zeroScores } from './protocol.js';
import { EOS, GRND_CLOSE, GRND_OPEN, quadTokens, quantize } from './tokens.js';

const TRANSFORMERS_MODULE = '@huggingface/transformers';

const CHARACTER_LABELS = /\b(person|man|woman|boy|girl|human|child|figure|character)\b/i;

interface Box {
  x0: number;
  y0: number;
  x1: number;
  y1: number;
}

function toBox(raw: number[]): Box {
  return { x0: raw[0], y0: raw[1], x1: raw[2], y1: raw[3] };
}

export class FlorenceBackend implements Backend {
  private constructor(
    private readonly checkpoint: string,
    private readonly model: any,
    private readonly processor: any,
    private readonly rawImage: any,
  ) {}

  static async load(checkpoint: string): Promise<FlorenceBackend> {
    let mod: any;
    try {
      mod = await import(TRANSFORMERS_MODULE);
    } catch (e) {
      throw new Error(
        `checkpoint backend unavailable: cannot import ${TRANSFORMERS_MODULE}: ${String(e)}`,
      );
    }
    try {
      const model = await mod.Florence2ForConditionalGeneration.from_pretrained(checkpoint, {
        dtype: 'fp32',
      });
      const processor = await mod.AutoProcessor.from_pretrained(checkpoint);
      return new FlorenceBackend(checkpoint, model, processor, mod.RawImage);
    } catch (e) {
      throw new Error(`failed to load checkpoint ${checkpoint}: ${String(e)}`);
    }
  }

  capabilities(): Capabilities {
    return {
      backend: `florence:${this.checkpoint}`,
      tasks: ['detect', 'ocr', 'ground'],
      associationScores: false,
    };
  }

  private async run(image: Buffer, task: string, extra?: string): Promise<any> {
    const img = await this.rawImage.fromBlob(new Blob([image]));
    const prompts = this.processor.construct_prompts(extra ? `${task}${extra}` : task);
    const inputs = await this.processor(img, prompts);
    const generated = await this.model.generate({ ...inputs, max_new_tokens: 512 });
    const decoded = this.processor.batch_decode(generated, { skip_special_tokens: false })[0];
    return this.processor.post_process_generation(decoded, task, img.size);
  }

  async detect(image: Buffer, width: number, height: number): Promise<InferResponseBody> {
    const result = (await this.run(image, '<OD>'))['<OD>'] ?? { bboxes: [], labels: [] };
    const tokens: string[] = [];
    let nChar = 0;
    for (let i = 0; i < (result.bboxes?.length ?? 0); i++) {
      const label: string = result.labels?.[i] ?? '';
      if (!CHARACTER_LABELS.test(label)) continue;
      tokens.push(...quadTokens(quantize(toBox(result.bboxes[i]), width, height)), '<char>');
      nChar += 1;
    }
    tokens.push(EOS);
    return { tokens, scores: zeroScores(0, nChar, 0) };
  }

  async ocr(image: Buffer, width: number, height: number): Promise<InferResponseBody> {
    const result = (await this.run(image, '<OCR_WITH_REGION>'))['<OCR_WITH_REGION>'] ?? {
      quad_boxes: [],
      labels: [],
    };
    const tokens: string[] = [];
    for (let i = 0; i < (result.labels?.length ?? 0); i++) {
      const words = String(result.labels[i]).split(/\s+/).filter((w: string) => w.length > 0);
      if (words.length === 0) continue;
      const quad: number[] = result.quad_boxes[i];
      const xs = quad.filter((_, j) => j % 2 === 0);
      const ys = quad.filter((_, j) => j % 2 === 1);
      const box = { x0: Math.min(...xs), y0: Math.min(...ys), x1: Math.max(...xs), y1: Math.max(...ys) };
      tokens.push(...words, ...quadTokens(quantize(box, width, height)));
    }
    tokens.push(EOS);
    return { tokens };
  }

  async ground(
    image: Buffer,
    width: number,
    height: number,
    caption: string,
  ): Promise<InferResponseBody> {
    const result = (await this.run(image, '<CAPTION_TO_PHRASE_GROUNDING>', caption))[
      '<CAPTION_TO_PHRASE_GROUNDING>'
    ] ?? { bboxes: [], labels: [] };
    // locate each grounded phrase in the caption; untraceable phrases are dropped
    const hits: { start: number; words: string[]; boxes: Box[] }[] = [];
    for (let i = 0; i < (result.labels?.length ?? 0); i++) {
      const phrase = String(result.labels[i]).trim();
      if (!phrase) continue;
      const start = caption.indexOf(phrase);
      if (start < 0) continue;
      const boxes = (Array.isArray(result.bboxes[i][0]) ? result.bboxes[i] : [result.bboxes[i]]).map(toBox);
      hits.push({ start, words: phrase.split(/\s+/), boxes });
    }
    hits.sort((a, b) => a.start - b.start);
    const tokens: string[] = [];
    let cursor = 0;
    for (const hit of hits) {
      if (hit.start < cursor) continue; // overlapping phrase: keep the earlier one
      const before = caption.slice(cursor, hit.start).split(/\s+/).filter((w) => w.length > 0);
      tokens.push(...before, GRND_OPEN, ...hit.words, GRND_CLOSE);
      for (const box of hit.boxes) {
        tokens.push(...quadTokens(quantize(box, width, height)));
      }
      cursor = hit.start + hit.words.join(' ').length;
    }
    const rest = caption.slice(cursor).split(/\s+/).filter((w) => w.length > 0);
    tokens.push(...rest, EOS);
    return { tokens };
  }
}
