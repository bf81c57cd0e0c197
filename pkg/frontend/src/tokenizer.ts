/**
 * Tokenizers for corpus export. The byte tokenizer maps UTF-8 bytes to ids
 * 0..255 and is lossless; it matches byte-level models (vocab size 256).
 */

export interface Tokenizer {
  id: string;
  vocabSize: number;
  encode(text: string): Uint32Array;
  decode(tokens: Uint32Array): string;
}

export function byteTokenizer(): Tokenizer {
  return {
    id: "byte",
    vocabSize: 256,
    encode(text: string): Uint32Array {
      const bytes = Buffer.from(text, "utf-8");
      const out = new Uint32Array(bytes.length);
      for (let i = 0; i < bytes.length; i++) out[i] = bytes[i];
      return out;
    },
    decode(tokens: Uint32Array): string {
      const bytes = Buffer.alloc(tokens.length);
      for (let i = 0; i < tokens.length; i++) {
        if (tokens[i] > 255) throw new Error(`byte tokenizer: id ${tokens[i]} out of range`);
        bytes[i] = tokens[i];
      }
      return bytes.toString("utf-8");
    },
  };
}

export function makeTokenizer(id: string): Tokenizer {
  if (id === "byte") return byteTokenizer();
  throw new Error(`unknown tokenizer '${id}' (supported: byte)`);
}
