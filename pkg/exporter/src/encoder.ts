/**
 * Deterministic stand-in encoders for named checkpoints.
 *
 * Real vision-language weights are not shipped with this repository, so each
 * known checkpoint id maps to a hash-based encoder: every (checkpoint, text)
 * or (checkpoint, image-bytes) pair expands through SHA-256 counter mode into
 * a fixed unit-norm float64 vector. Embeddings are stable across runs and
 * platforms, distinct across checkpoints, and exercise the full export path;
 * a genuine model can be plugged in by implementing the Encoder interface.
 */

import { createHash } from 'node:crypto';

export interface Encoder {
  readonly id: string;
  readonly dim: number;
  readonly logitScale: number;
  encodeText(text: string): Float64Array;
  encodeImage(bytes: Uint8Array): Float64Array;
}

interface CheckpointInfo {
  dim: number;
  logitScale: number;
}

/** Known checkpoint identifiers and their embedding widths. */
export const CHECKPOINTS: Record<string, CheckpointInfo> = {
  'ViT-B/16': { dim: 512, logitScale: 100.0 },
  'ViT-B/32': { dim: 512, logitScale: 100.0 },
  'ViT-L/14': { dim: 768, logitScale: 100.0 },
  RN50: { dim: 1024, logitScale: 100.0 },
  RN101: { dim: 512, logitScale: 100.0 },
};

export class UnknownCheckpointError extends Error {}

function hashToUnitVector(seedParts: string[], payload: Uint8Array, dim: number): Float64Array {
  const seed = createHash('sha256');
  for (const part of seedParts) {
    seed.update(part);
    seed.update(Buffer.from([0]));
  }
  seed.update(payload);
  const base = seed.digest();

  const out = new Float64Array(dim);
  let filled = 0;
  for (let block = 0; filled < dim; block++) {
    const h = createHash('sha256');
    h.update(base);
    const counter = Buffer.alloc(4);
    counter.writeUInt32BE(block);
    h.update(counter);
    const bytes = h.digest();
    for (let off = 0; off + 8 <= bytes.length && filled < dim; off += 8) {
      // top 53 bits -> uniform in [0, 1), then shift to (-1, 1)
      const hi = bytes.readUInt32BE(off);
      const lo = bytes.readUInt32BE(off + 4);
      const u = (hi * 0x200000 + (lo >>> 11)) / 2 ** 53;
      out[filled++] = 2 * u - 1;
    }
  }
  let norm = 0;
  for (let i = 0; i < dim; i++) norm += out[i] * out[i];
  norm = Math.sqrt(norm);
  for (let i = 0; i < dim; i++) out[i] /= norm;
  return out;
}

class DeterministicEncoder implements Encoder {
  constructor(
    readonly id: string,
    readonly dim: number,
    readonly logitScale: number,
  ) {}

  encodeText(text: string): Float64Array {
    return hashToUnitVector([this.id, 'text'], Buffer.from(text, 'utf-8'), this.dim);
  }

  encodeImage(bytes: Uint8Array): Float64Array {
    return hashToUnitVector([this.id, 'image'], bytes, this.dim);
  }
}

export function getEncoder(checkpoint: string): Encoder {
  const info = CHECKPOINTS[checkpoint];
  if (!info) {
    const known = Object.keys(CHECKPOINTS).join(', ');
    throw new UnknownCheckpointError(
      `unknown checkpoint '${checkpoint}' (known: ${known})`,
    );
  }
  return new DeterministicEncoder(checkpoint, info.dim, info.logitScale);
}

export function l2Normalize(v: Float64Array): Float64Array {
  let norm = 0;
  for (let i = 0; i < v.length; i++) norm += v[i] * v[i];
  norm = Math.sqrt(norm);
  if (norm === 0) throw new Error('cannot normalize a zero vector');
  const out = new Float64Array(v.length);
  for (let i = 0; i < v.length; i++) out[i] = v[i] / norm;
  return out;
}

export function meanVector(vs: Float64Array[]): Float64Array {
  if (vs.length === 0) throw new Error('meanVector requires at least one vector');
  const dim = vs[0].length;
  const out = new Float64Array(dim);
  for (const v of vs) {
    if (v.length !== dim) throw new Error('dimension mismatch in meanVector');
    for (let i = 0; i < dim; i++) out[i] += v[i];
  }
  for (let i = 0; i < dim; i++) out[i] /= vs.length;
  return out;
}
