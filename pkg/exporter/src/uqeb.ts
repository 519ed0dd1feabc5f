import { readFileSync, writeFileSync } from 'node:fs';

/**
 * The UQEB embedding container, byte-exact (all integers little-endian):
 *
 *   magic "UQEB" | version u32 (=1) | rows u64 | dim u32 | labels byte |
 *   note length u32 | note utf-8 | embeddings row-major f32 | labels u8[n]
 */
export const UQEB_MAGIC = 'UQEB';
export const UQEB_VERSION = 1;

export class UqebFormatError extends Error {}

export interface UqebPayload {
  dim: number;
  vectors: Float32Array[]; // one per row, each of length dim
  labels?: Uint8Array;
  sourceNote?: string;
}

export function writeUqeb(path: string, payload: UqebPayload): void {
  const { dim, vectors, labels } = payload;
  const note = Buffer.from(payload.sourceNote ?? '', 'utf-8');
  const n = vectors.length;
  for (let i = 0; i < n; i += 1) {
    if (vectors[i].length !== dim) {
      throw new UqebFormatError(
        `row ${i} has ${vectors[i].length} values, expected ${dim}`,
      );
    }
  }
  if (labels && labels.length !== n) {
    throw new UqebFormatError(`${labels.length} labels for ${n} rows`);
  }
  const headerSize = 4 + 4 + 8 + 4 + 1 + 4 + note.length;
  const total = headerSize + 4 * n * dim + (labels ? n : 0);
  const buf = Buffer.alloc(total);
  let off = 0;
  off += buf.write(UQEB_MAGIC, off, 'ascii');
  off = buf.writeUInt32LE(UQEB_VERSION, off);
  off = buf.writeBigUInt64LE(BigInt(n), off);
  off = buf.writeUInt32LE(dim, off);
  off = buf.writeUInt8(labels ? 1 : 0, off);
  off = buf.writeUInt32LE(note.length, off);
  off += note.copy(buf, off);
  for (const vec of vectors) {
    for (let j = 0; j < dim; j += 1) {
      off = buf.writeFloatLE(vec[j], off);
    }
  }
  if (labels) {
    off += Buffer.from(labels).copy(buf, off);
  }
  writeFileSync(path, buf);
}

export interface UqebContents {
  n: number;
  dim: number;
  vectors: Float32Array[];
  labels: Uint8Array | null;
  sourceNote: string;
}

class Reader {
  pos = 0;

  constructor(
    private readonly buf: Buffer,
    private readonly path: string,
  ) {}

  need(count: number, what: string): number {
    if (this.pos + count > this.buf.length) {
      throw new UqebFormatError(
        `${this.path}: truncated ${what} at byte offset ${this.pos}: ` +
          `need ${count} bytes, ${this.buf.length - this.pos} available`,
      );
    }
    const at = this.pos;
    this.pos += count;
    return at;
  }

  u32(what: string): number {
    return this.buf.readUInt32LE(this.need(4, what));
  }

  u64(what: string): number {
    const value = this.buf.readBigUInt64LE(this.need(8, what));
    if (value > BigInt(Number.MAX_SAFE_INTEGER)) {
      throw new UqebFormatError(`${this.path}: ${what} ${value} is implausibly large`);
    }
    return Number(value);
  }

  u8(what: string): number {
    return this.buf.readUInt8(this.need(1, what));
  }

  bytes(count: number, what: string): Buffer {
    const at = this.need(count, what);
    return this.buf.subarray(at, at + count);
  }

  get remaining(): number {
    return this.buf.length - this.pos;
  }
}

export function readUqeb(path: string): UqebContents {
  const buf = readFileSync(path);
  const r = new Reader(buf, path);
  const magic = r.bytes(4, 'magic').toString('ascii');
  if (magic !== UQEB_MAGIC) {
    throw new UqebFormatError(`${path}: bad magic "${magic}", not an embedding file`);
  }
  const version = r.u32('version');
  if (version !== UQEB_VERSION) {
    throw new UqebFormatError(`${path}: unsupported format version ${version}`);
  }
  const n = r.u64('row count');
  const dim = r.u32('dimension');
  const hasLabels = r.u8('labels flag');
  const noteLen = r.u32('note length');
  const sourceNote = r.bytes(noteLen, 'source note').toString('utf-8');
  const vectors: Float32Array[] = [];
  for (let i = 0; i < n; i += 1) {
    const raw = r.bytes(4 * dim, `embedding row ${i}`);
    const vec = new Float32Array(dim);
    for (let j = 0; j < dim; j += 1) {
      vec[j] = raw.readFloatLE(4 * j);
    }
    vectors.push(vec);
  }
  let labels: Uint8Array | null = null;
  if (hasLabels) {
    labels = new Uint8Array(r.bytes(n, 'labels'));
    for (let i = 0; i < n; i += 1) {
      if (labels[i] !== 0 && labels[i] !== 1) {
        throw new UqebFormatError(`${path}: label for row ${i} is ${labels[i]}, not 0/1`);
      }
    }
  }
  if (r.remaining !== 0) {
    throw new UqebFormatError(`${path}: ${r.remaining} trailing bytes after payload`);
  }
  return { n, dim, vectors, labels, sourceNote };
}
