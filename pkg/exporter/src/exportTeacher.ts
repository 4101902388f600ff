/**
 * Teacher-table export: per class, encode all 80 ensemble prompts
 * (L2-normalizing each before averaging) for the generic embedding, the
 * single baseline prompt for the single-template variant, and one anchor
 * phrase per (domain, class) pair.
 */

import { Encoder, getEncoder, l2Normalize, meanVector } from './encoder.js';
import { TeacherFile, anchorKey, writeTeacherFile } from './formats.js';
import { ENSEMBLE_TEMPLATES, SINGLE_TEMPLATE, anchorPrompt, fillTemplate } from './templates.js';

export interface TeacherExportSpec {
  checkpoint: string;
  classes: string[];
  domains: string[];
}

export function buildTeacherFile(spec: TeacherExportSpec, encoder?: Encoder): TeacherFile {
  if (spec.classes.length === 0) throw new Error('at least one class name is required');
  if (spec.domains.length === 0) throw new Error('at least one domain name is required');
  if (new Set(spec.classes).size !== spec.classes.length) {
    throw new Error('class names must be unique');
  }
  if (new Set(spec.domains).size !== spec.domains.length) {
    throw new Error('domain names must be unique');
  }
  const enc = encoder ?? getEncoder(spec.checkpoint);

  const generic = new Map<string, Float64Array>();
  const genericSingle = new Map<string, Float64Array>();
  const anchors = new Map<string, Float64Array>();

  for (const cls of spec.classes) {
    const perTemplate = ENSEMBLE_TEMPLATES.map((t) =>
      l2Normalize(enc.encodeText(fillTemplate(t, cls))),
    );
    generic.set(cls, meanVector(perTemplate));
    genericSingle.set(cls, l2Normalize(enc.encodeText(fillTemplate(SINGLE_TEMPLATE, cls))));
    for (const dom of spec.domains) {
      anchors.set(anchorKey(dom, cls), l2Normalize(enc.encodeText(anchorPrompt(dom, cls))));
    }
  }

  return {
    dim: enc.dim,
    teacherId: enc.id,
    logitScale: enc.logitScale,
    classes: [...spec.classes],
    domains: [...spec.domains],
    generic,
    genericSingle,
    anchors,
  };
}

export function exportTeacherTable(spec: TeacherExportSpec, outPath: string): TeacherFile {
  const table = buildTeacherFile(spec);
  writeTeacherFile(table, outPath);
  return table;
}
