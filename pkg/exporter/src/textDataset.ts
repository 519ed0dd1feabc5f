import { readFileSync } from 'node:fs';

export interface TextRecord {
  text: string;
  label: 0 | 1;
}

export class TextFormatError extends Error {}

/**
 * Minimal RFC-4180 field splitter. Handles quoted fields containing the
 * delimiter, doubled quotes, and embedded newlines.
 */
function splitRows(content: string, delimiter: string): string[][] {
  const rows: string[][] = [];
  let row: string[] = [];
  let field = '';
  let inQuotes = false;
  let i = 0;
  const pushField = () => {
    row.push(field);
    field = '';
  };
  const pushRow = () => {
    pushField();
    rows.push(row);
    row = [];
  };
  while (i < content.length) {
    const ch = content[i];
    if (inQuotes) {
      if (ch === '"') {
        if (content[i + 1] === '"') {
          field += '"';
          i += 2;
          continue;
        }
        inQuotes = false;
        i += 1;
        continue;
      }
      field += ch;
      i += 1;
      continue;
    }
    if (ch === '"' && field.length === 0) {
      inQuotes = true;
      i += 1;
      continue;
    }
    if (ch === delimiter) {
      pushField();
      i += 1;
      continue;
    }
    if (ch === '\r' && content[i + 1] === '\n') {
      pushRow();
      i += 2;
      continue;
    }
    if (ch === '\n') {
      pushRow();
      i += 1;
      continue;
    }
    field += ch;
    i += 1;
  }
  if (field.length > 0 || row.length > 0) {
    pushRow();
  }
  return rows;
}

/**
 * Reads a CSV or TSV corpus with header columns `text,label`.
 *
 * Text is preserved verbatim: no lowercasing, no stripping, case and
 * punctuation intact. Labels must be exactly "0" or "1"; anything else is
 * rejected with the offending row number.
 */
export function readTextDataset(path: string): TextRecord[] {
  const content = readFileSync(path, 'utf-8');
  const headerEnd = content.indexOf('\n');
  const headerLine = headerEnd === -1 ? content : content.slice(0, headerEnd);
  const delimiter = headerLine.includes('\t') ? '\t' : ',';
  const rows = splitRows(content, delimiter);
  if (rows.length === 0) {
    throw new TextFormatError(`${path}: empty file, expected a text,label header`);
  }
  const header = rows[0].map((h) => h.trim().toLowerCase());
  const textCol = header.indexOf('text');
  const labelCol = header.indexOf('label');
  if (textCol === -1 || labelCol === -1) {
    throw new TextFormatError(
      `${path}: header must contain 'text' and 'label' columns, got [${header.join(', ')}]`,
    );
  }
  const records: TextRecord[] = [];
  for (let r = 1; r < rows.length; r += 1) {
    const cells = rows[r];
    if (cells.length === 1 && cells[0] === '') {
      continue; // trailing blank line
    }
    if (cells.length <= Math.max(textCol, labelCol)) {
      throw new TextFormatError(`${path}: row ${r + 1} has ${cells.length} column(s)`);
    }
    const text = cells[textCol];
    const rawLabel = cells[labelCol].trim();
    if (rawLabel !== '0' && rawLabel !== '1') {
      throw new TextFormatError(
        `${path}: row ${r + 1}: label must be 0 or 1, got "${rawLabel}"`,
      );
    }
    if (text.length === 0) {
      throw new TextFormatError(`${path}: row ${r + 1}: empty text`);
    }
    records.push({ text, label: rawLabel === '1' ? 1 : 0 });
  }
  return records;
}
