/**
 * OWLT token file writer/reader: magic "OWLT", u32 version (=1),
 * u32 vocab size, u64 token count, u32-LE token ids.
 */

const MAGIC = "OWLT";
const VERSION = 1;

export function writeOwlt(vocabSize: number, tokens: Uint32Array): Buffer {
  for (let i = 0; i < tokens.length; i++) {
    if (tokens[i] >= vocabSize) {
      throw new Error(`owlt: token id ${tokens[i]} at ${i} exceeds vocab size ${vocabSize}`);
    }
  }
  const out = Buffer.alloc(20 + tokens.length * 4);
  out.write(MAGIC, 0, "ascii");
  out.writeUInt32LE(VERSION, 4);
  out.writeUInt32LE(vocabSize, 8);
  out.writeBigUInt64LE(BigInt(tokens.length), 12);
  for (let i = 0; i < tokens.length; i++) out.writeUInt32LE(tokens[i], 20 + i * 4);
  return out;
}

export interface OwltFile {
  vocabSize: number;
  tokens: Uint32Array;
}

export function readOwlt(raw: Buffer): OwltFile {
  if (raw.length < 20 || raw.toString("ascii", 0, 4) !== MAGIC) {
    throw new Error("owlt: bad magic");
  }
  if (raw.readUInt32LE(4) !== VERSION) {
    throw new Error("owlt: unsupported version");
  }
  const vocabSize = raw.readUInt32LE(8);
  const count = Number(raw.readBigUInt64LE(12));
  if (raw.length < 20 + count * 4) {
    throw new Error("owlt: truncated payload");
  }
  const tokens = new Uint32Array(count);
  for (let i = 0; i < count; i++) tokens[i] = raw.readUInt32LE(20 + i * 4);
  return { vocabSize, tokens };
}
