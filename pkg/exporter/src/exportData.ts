/**
 * Image-feature export into rise-data-v1.
 *
 * The item list may reference image files (encoded through the checkpoint's
 * image encoder) or carry precomputed vectors inline. The student feature is
 * either the teacher embedding itself (feature_source: "teacher", the pure
 * head-training setup) or a second backbone's embedding of the same image.
 * Unreadable images are skipped with a warning and counted.
 */

import { readFileSync } from 'node:fs';

import { Encoder, getEncoder } from './encoder.js';
import { DataFile, DataSample, writeDataFile } from './formats.js';

export interface DataItem {
  id: string;
  class: string;
  domain: string;
  image?: string;             // path to the image file
  teacher_emb?: number[];     // precomputed teacher image embedding
  feature?: number[];         // precomputed student-backbone feature
}

export interface DataExportSpec {
  checkpoint: string;
  classes: string[];
  domains: string[];
  feature_source: string;     // "teacher" or another checkpoint id
  items: DataItem[];
}

export interface DataExportResult {
  file: DataFile;
  skipped: { id: string; reason: string }[];
}

export function buildDataFile(
  spec: DataExportSpec,
  teacherEncoder?: Encoder,
  warn: (msg: string) => void = (m) => console.warn(m),
): DataExportResult {
  const teacher = teacherEncoder ?? getEncoder(spec.checkpoint);
  const useTeacherFeature = spec.feature_source === 'teacher';
  const backbone = useTeacherFeature ? teacher : getEncoder(spec.feature_source);

  const samples: DataSample[] = [];
  const skipped: { id: string; reason: string }[] = [];
  for (const item of spec.items) {
    if (!spec.classes.includes(item.class)) {
      throw new Error(`item ${item.id}: unknown class '${item.class}'`);
    }
    if (!spec.domains.includes(item.domain)) {
      throw new Error(`item ${item.id}: unknown domain '${item.domain}'`);
    }
    let bytes: Uint8Array | null = null;
    if (item.image !== undefined) {
      try {
        bytes = readFileSync(item.image);
      } catch (err) {
        const reason = `cannot read image '${item.image}': ${(err as Error).message}`;
        warn(`skipping ${item.id}: ${reason}`);
        skipped.push({ id: item.id, reason });
        continue;
      }
    }

    let teacherEmb: Float64Array;
    if (bytes !== null) {
      teacherEmb = teacher.encodeImage(bytes);
    } else if (item.teacher_emb !== undefined) {
      teacherEmb = Float64Array.from(item.teacher_emb);
    } else {
      throw new Error(`item ${item.id}: needs either an image path or a teacher_emb`);
    }

    let feature: Float64Array;
    if (useTeacherFeature) {
      feature = teacherEmb;
    } else if (bytes !== null) {
      feature = backbone.encodeImage(bytes);
    } else if (item.feature !== undefined) {
      feature = Float64Array.from(item.feature);
    } else {
      throw new Error(
        `item ${item.id}: feature_source '${spec.feature_source}' needs an image or an inline feature`,
      );
    }
    samples.push({
      id: item.id,
      className: item.class,
      domain: item.domain,
      feature,
      teacherEmb,
    });
  }

  if (samples.length === 0) {
    throw new Error('no exportable items (all missing or skipped)');
  }
  const featureDim = samples[0].feature.length;
  const textDim = samples[0].teacherEmb.length;
  return {
    file: {
      featureDim,
      textDim,
      classes: [...spec.classes],
      domains: [...spec.domains],
      samples,
    },
    skipped,
  };
}

export function exportImageFeatures(
  spec: DataExportSpec,
  outPath: string,
  warn?: (msg: string) => void,
): DataExportResult {
  const result = buildDataFile(spec, undefined, warn);
  writeDataFile(result.file, outPath);
  return result;
}
