/**
 * Command line entry point.
 *
 *   node dist/cli.js teacher --checkpoint ViT-B/16 --classes dog,cat \
 *        --domains photo,sketch --out teacher.jsonl
 *   node dist/cli.js data --spec export.json --out data.jsonl
 *
 * Exit codes: 0 success, 2 configuration error, 3 I/O error.
 */

import { readFileSync } from 'node:fs';
import { parseArgs } from 'node:util';

import { UnknownCheckpointError } from './encoder.js';
import { DataExportSpec, exportImageFeatures } from './exportData.js';
import { exportTeacherTable } from './exportTeacher.js';

function fail(code: number, message: string): never {
  console.error(message);
  process.exit(code);
}

function splitList(value: string | undefined): string[] {
  if (!value) return [];
  return value.split(',').map((s) => s.trim()).filter((s) => s.length > 0);
}

function runTeacher(argv: string[]): void {
  const { values } = parseArgs({
    args: argv,
    options: {
      checkpoint: { type: 'string' },
      classes: { type: 'string' },
      domains: { type: 'string' },
      spec: { type: 'string' },
      out: { type: 'string' },
    },
  });
  let spec = {
    checkpoint: values.checkpoint ?? '',
    classes: splitList(values.classes),
    domains: splitList(values.domains),
  };
  if (values.spec) {
    const doc = JSON.parse(readFileSync(values.spec, 'utf-8'));
    spec = { ...doc, ...(values.checkpoint ? { checkpoint: values.checkpoint } : {}) };
  }
  if (!values.out) fail(2, 'teacher: --out is required');
  if (!spec.checkpoint) fail(2, 'teacher: --checkpoint (or a spec file) is required');
  const table = exportTeacherTable(spec, values.out);
  const anchors = table.classes.length * table.domains.length;
  console.log(
    `wrote ${table.classes.length} generic + ${table.classes.length} single + ` +
      `${anchors} anchor embeddings (dim ${table.dim}) to ${values.out}`,
  );
}

function runData(argv: string[]): void {
  const { values } = parseArgs({
    args: argv,
    options: {
      spec: { type: 'string' },
      out: { type: 'string' },
    },
  });
  if (!values.spec) fail(2, 'data: --spec is required');
  if (!values.out) fail(2, 'data: --out is required');
  const doc = JSON.parse(readFileSync(values.spec, 'utf-8')) as DataExportSpec;
  const result = exportImageFeatures(doc, values.out);
  console.log(
    `wrote ${result.file.samples.length} samples ` +
      `(feature dim ${result.file.featureDim}, text dim ${result.file.textDim}) to ${values.out}`,
  );
  if (result.skipped.length > 0) {
    console.warn(`skipped ${result.skipped.length} unreadable item(s)`);
  }
}

function main(): void {
  const [command, ...rest] = process.argv.slice(2);
  try {
    if (command === 'teacher') runTeacher(rest);
    else if (command === 'data') runData(rest);
    else fail(2, `usage: cli.js <teacher|data> [options]; got '${command ?? ''}'`);
  } catch (err) {
    if (err instanceof UnknownCheckpointError) fail(2, `config error: ${err.message}`);
    if (err instanceof Error && 'code' in err && err.code === 'ENOENT') {
      fail(3, `i/o error: ${err.message}`);
    }
    if (err instanceof SyntaxError) fail(2, `config error: ${err.message}`);
    if (err instanceof Error) fail(2, `error: ${err.message}`);
    throw err;
  }
}

main();
