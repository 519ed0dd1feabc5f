export type Pooling = 'mean' | 'cls';

export interface Encoder {
  readonly id: string;
  readonly dim: number;
  /** Token window of the underlying model; null when unbounded. */
  readonly maxTokenLength: number | null;
  /** Embed a batch of texts, one Float32Array per input, in input order. */
  encode(texts: string[], pooling: Pooling): Promise<Float32Array[]>;
}

export class EncoderEnvironmentError extends Error {}

const HASH_PREFIX = 'hash:';
const DEFAULT_HASH_DIM = 64;

/** FNV-1a, the classic 32-bit fold over UTF-16 code units. */
function fnv1a(text: string, seed: number): number {
  let hash = (0x811c9dc5 ^ seed) >>> 0;
  for (let i = 0; i < text.length; i += 1) {
    hash ^= text.charCodeAt(i);
    hash = Math.imul(hash, 0x01000193) >>> 0;
  }
  return hash >>> 0;
}

/**
 * Deterministic character-trigram feature hashing. No model weights, no
 * network: the same text always produces the same unit-norm vector, which is
 * exactly what offline tests and fixtures need. Pooling has no effect for
 * this encoder (there is no sequence dimension); it is still recorded in the
 * manifest for provenance.
 */
export function hashEncoder(dim: number = DEFAULT_HASH_DIM): Encoder {
  if (!Number.isInteger(dim) || dim < 1) {
    throw new EncoderEnvironmentError(`hash encoder dim must be a positive integer, got ${dim}`);
  }
  const embedOne = (text: string): Float32Array => {
    const acc = new Float64Array(dim);
    const padded = `${text}`;
    for (let i = 0; i + 3 <= padded.length; i += 1) {
      const gram = padded.slice(i, i + 3);
      const bucket = fnv1a(gram, 0) % dim;
      const sign = fnv1a(gram, 0x9e3779b9) & 1 ? 1 : -1;
      acc[bucket] += sign;
    }
    let norm = 0;
    for (let j = 0; j < dim; j += 1) norm += acc[j] * acc[j];
    norm = Math.sqrt(norm) || 1;
    const out = new Float32Array(dim);
    for (let j = 0; j < dim; j += 1) out[j] = acc[j] / norm;
    return out;
  };
  return {
    id: `${HASH_PREFIX}${dim}`,
    dim,
    maxTokenLength: null,
    async encode(texts) {
      return texts.map(embedOne);
    },
  };
}

/**
 * Pretrained-encoder path backed by @huggingface/transformers. The package
 * is loaded lazily so environments without it (or without network access to
 * fetch model weights) can still use the hash encoder.
 */
async function transformersEncoder(modelId: string): Promise<Encoder> {
  let pipeline: any;
  try {
    ({ pipeline } = await import('@huggingface/transformers' as string));
  } catch (err) {
    throw new EncoderEnvironmentError(
      `encoder "${modelId}" needs the optional @huggingface/transformers package ` +
        `(npm install @huggingface/transformers) and cached or downloadable weights: ${err}`,
    );
  }
  let extractor: any;
  try {
    extractor = await pipeline('feature-extraction', modelId);
  } catch (err) {
    throw new EncoderEnvironmentError(`failed to load encoder "${modelId}": ${err}`);
  }
  const maxTokens: number | null = extractor.tokenizer?.model_max_length ?? null;
  return {
    id: modelId,
    dim: extractor.model?.config?.hidden_size ?? 0,
    maxTokenLength: maxTokens,
    async encode(texts, pooling) {
      if (maxTokens !== null) {
        // Longest unpadded sequence in the batch; if it exceeds the window,
        // the encode below will truncate and that should not pass silently.
        const tokenized = extractor.tokenizer(texts, { truncation: false });
        const longest = Number(tokenized.input_ids.dims?.at(-1) ?? 0);
        if (longest > maxTokens) {
          console.warn(
            `warning: batch contains ${longest}-token input(s); ` +
              `truncating to the ${maxTokens}-token window`,
          );
        }
      }
      const output = await extractor(texts, { pooling, normalize: false });
      const [rows, dim] = output.dims.slice(-2);
      const flat: Float32Array = output.data;
      const result: Float32Array[] = [];
      for (let i = 0; i < rows; i += 1) {
        result.push(flat.slice(i * dim, (i + 1) * dim));
      }
      return result;
    },
  };
}

/**
 * Resolve an encoder identifier: `hash:<dim>` is the built-in deterministic
 * featurizer; anything else is treated as a pretrained model id.
 */
export async function createEncoder(id: string): Promise<Encoder> {
  if (id.startsWith(HASH_PREFIX)) {
    const dim = Number(id.slice(HASH_PREFIX.length) || DEFAULT_HASH_DIM);
    return hashEncoder(dim);
  }
  if (id === 'hash') {
    return hashEncoder();
  }
  return transformersEncoder(id);
}
