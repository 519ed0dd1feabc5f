import { readUqeb } from './uqeb.js';

export interface VerifyReport {
  n: number;
  dim: number;
  hasLabels: boolean;
  positiveFraction: number | null;
  sourceNote: string;
}

export class VerifyError extends Error {}

/**
 * Validate an embedding file end to end: magic, version, declared counts
 * against actual bytes, finite values, and binary labels. Returns the
 * summary a caller would print; throws VerifyError describing the first
 * violation found (truncations include the byte offset, bad values the row).
 */
export function verifyFile(path: string): VerifyReport {
  const contents = (() => {
    try {
      return readUqeb(path);
    } catch (err) {
      throw new VerifyError(String(err instanceof Error ? err.message : err));
    }
  })();
  for (let i = 0; i < contents.n; i += 1) {
    const vec = contents.vectors[i];
    for (let j = 0; j < contents.dim; j += 1) {
      if (!Number.isFinite(vec[j])) {
        throw new VerifyError(`${path}: non-finite embedding value at row ${i}`);
      }
    }
  }
  const positiveFraction = contents.labels
    ? contents.labels.reduce((a, b) => a + b, 0) / Math.max(contents.n, 1)
    : null;
  return {
    n: contents.n,
    dim: contents.dim,
    hasLabels: contents.labels !== null,
    positiveFraction,
    sourceNote: contents.sourceNote,
  };
}

export function formatReport(report: VerifyReport): string {
  const positive =
    report.positiveFraction === null
      ? 'unlabelled'
      : `positive fraction ${report.positiveFraction.toFixed(3)}`;
  return `n=${report.n} dim=${report.dim} ${positive}`;
}
