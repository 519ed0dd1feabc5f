#!/usr/bin/env node
/**
 * Text-to-embeddings exporter.
 *
 *   export --input texts.csv --encoder ID --pooling mean|cls --batch-size N --out FILE
 *       Embeds every row of the corpus and writes FILE (UQEB) plus
 *       FILE.manifest.json. Encoder ids: "hash:<dim>" for the built-in
 *       deterministic featurizer, or a pretrained model id served by the
 *       optional @huggingface/transformers package.
 *
 *   verify FILE
 *       Validates an embedding file and prints n, dim, positive fraction.
 *
 * Exit codes: 0 ok, 1 usage, 2 input/format problem, 3 encoder environment.
 */

import { createEncoder, EncoderEnvironmentError, type Pooling } from './encoders.js';
import { ExportConsistencyError, exportEmbeddings } from './exporter.js';
import { readTextDataset, TextFormatError } from './textDataset.js';
import { UqebFormatError } from './uqeb.js';
import { formatReport, verifyFile, VerifyError } from './verify.js';

class UsageError extends Error {}

interface Flags {
  [key: string]: string;
}

function parseFlags(argv: string[], allowed: Set<string>): Flags {
  const flags: Flags = {};
  for (let i = 0; i < argv.length; i += 2) {
    const key = argv[i];
    if (!key.startsWith('--')) {
      throw new UsageError(`expected a --flag, got "${key}"`);
    }
    const name = key.slice(2);
    if (!allowed.has(name)) {
      throw new UsageError(`unknown flag --${name}`);
    }
    if (i + 1 >= argv.length) {
      throw new UsageError(`flag --${name} needs a value`);
    }
    flags[name] = argv[i + 1];
  }
  return flags;
}

async function cmdExport(argv: string[]): Promise<number> {
  const flags = parseFlags(
    argv,
    new Set(['input', 'encoder', 'pooling', 'batch-size', 'out', 'note']),
  );
  for (const required of ['input', 'out']) {
    if (!(required in flags)) {
      throw new UsageError(`export needs --${required}`);
    }
  }
  const pooling = (flags['pooling'] ?? 'mean') as Pooling;
  if (pooling !== 'mean' && pooling !== 'cls') {
    throw new UsageError(`--pooling must be mean or cls, got "${pooling}"`);
  }
  const batchSize = Number(flags['batch-size'] ?? '32');
  const records = readTextDataset(flags['input']);
  const encoder = await createEncoder(flags['encoder'] ?? 'hash:64');
  const manifest = await exportEmbeddings(records, encoder, {
    pooling,
    batchSize,
    outPath: flags['out'],
    sourceNote: flags['note'],
  });
  console.log(
    `wrote ${flags['out']} (${manifest.rowCount} rows, dim ${manifest.outputDim}) ` +
      `and ${flags['out']}.manifest.json`,
  );
  return 0;
}

function cmdVerify(argv: string[]): number {
  if (argv.length !== 1 || argv[0].startsWith('--')) {
    throw new UsageError('verify takes exactly one FILE argument');
  }
  const report = verifyFile(argv[0]);
  console.log(formatReport(report));
  return 0;
}

export async function main(argv: string[]): Promise<number> {
  try {
    const [command, ...rest] = argv;
    if (command === 'export') {
      return await cmdExport(rest);
    }
    if (command === 'verify') {
      return cmdVerify(rest);
    }
    throw new UsageError(`expected a subcommand (export | verify), got "${command ?? ''}"`);
  } catch (err) {
    if (err instanceof UsageError) {
      console.error(`error: ${err.message}`);
      return 1;
    }
    if (
      err instanceof TextFormatError ||
      err instanceof UqebFormatError ||
      err instanceof VerifyError ||
      err instanceof ExportConsistencyError ||
      (err as NodeJS.ErrnoException)?.code === 'ENOENT'
    ) {
      console.error(`error: ${err instanceof Error ? err.message : err}`);
      return 2;
    }
    if (err instanceof EncoderEnvironmentError) {
      console.error(`error: ${err.message}`);
      return 3;
    }
    throw err;
  }
}

const isDirectRun =
  process.argv[1] !== undefined && import.meta.url === `file://${process.argv[1]}`;
if (isDirectRun) {
  main(process.argv.slice(2)).then((code) => {
    process.exitCode = code;
  });
}
