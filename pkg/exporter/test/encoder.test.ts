import { describe, expect, it } from 'vitest';

import { CHECKPOINTS, getEncoder, l2Normalize, meanVector, UnknownCheckpointError } from '../src/encoder.js';
import { ENSEMBLE_TEMPLATES, SINGLE_TEMPLATE, anchorPrompt, fillTemplate } from '../src/templates.js';

describe('templates', () => {
  it('has exactly eighty ensemble templates', () => {
    expect(ENSEMBLE_TEMPLATES).toHaveLength(80);
  });

  it('every template has a placeholder and they are all distinct', () => {
    const seen = new Set<string>();
    for (const t of ENSEMBLE_TEMPLATES) {
      expect(t).toContain('{}');
      seen.add(t);
    }
    expect(seen.size).toBe(80);
    expect(ENSEMBLE_TEMPLATES).toContain(SINGLE_TEMPLATE);
  });

  it('fills class names into templates and anchor prompts', () => {
    expect(fillTemplate('a photo of a {}.', 'dog')).toBe('a photo of a dog.');
    expect(anchorPrompt('sketch', 'dog')).toBe('a sketch of dog.');
  });
});

describe('deterministic encoder', () => {
  it('is reproducible and unit norm', () => {
    const enc = getEncoder('ViT-B/16');
    const a = enc.encodeText('a photo of a dog.');
    const b = enc.encodeText('a photo of a dog.');
    expect(Array.from(a)).toEqual(Array.from(b));
    const norm = Math.sqrt(a.reduce((acc, x) => acc + x * x, 0));
    expect(norm).toBeCloseTo(1.0, 12);
    expect(a).toHaveLength(CHECKPOINTS['ViT-B/16'].dim);
  });

  it('differs across texts and checkpoints', () => {
    const vit = getEncoder('ViT-B/16');
    const rn = getEncoder('RN101');
    const a = vit.encodeText('a photo of a dog.');
    const b = vit.encodeText('a photo of a cat.');
    const c = rn.encodeText('a photo of a dog.');
    expect(Array.from(a)).not.toEqual(Array.from(b));
    expect(Array.from(a)).not.toEqual(Array.from(c));
  });

  it('encodes image bytes deterministically', () => {
    const enc = getEncoder('RN101');
    const bytes = Uint8Array.from([1, 2, 3, 4, 5]);
    expect(Array.from(enc.encodeImage(bytes))).toEqual(Array.from(enc.encodeImage(bytes)));
    expect(Array.from(enc.encodeImage(bytes))).not.toEqual(
      Array.from(enc.encodeImage(Uint8Array.from([9, 9]))),
    );
  });

  it('rejects unknown checkpoints', () => {
    expect(() => getEncoder('GPT-7')).toThrow(UnknownCheckpointError);
  });
});

describe('vector helpers', () => {
  it('meanVector averages coordinate-wise', () => {
    const m = meanVector([Float64Array.from([1, 0]), Float64Array.from([0, 1])]);
    expect(Array.from(m)).toEqual([0.5, 0.5]);
  });

  it('l2Normalize produces unit vectors', () => {
    const v = l2Normalize(Float64Array.from([3, 4]));
    expect(Array.from(v)).toEqual([0.6, 0.8]);
  });
});
